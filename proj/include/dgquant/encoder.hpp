#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dgquant/nn.hpp"

namespace dgquant {

/// Backbone slot: any feature extractor mapping [B,3,H,W] to [B,C,H,W]
/// with unchanged spatial size can plug in here.
template <typename T>
class EncoderBase {
 public:
  virtual ~EncoderBase() = default;
  virtual Var<T> encode(Tape<T>& tape, ParamBinder<T>& bind, Var<T> images) = 0;
  virtual int64_t out_channels() const = 0;
  virtual int64_t depth() const = 0;
  virtual void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) = 0;
};

/// Small U-Net: per stage two 3x3 convs + softplus, 2x2 max pooling on the
/// way down, bilinear upsampling with skip concatenation on the way up,
/// and a final 1x1 projection to the requested channel count.
template <typename T>
class UNetEncoder final : public EncoderBase<T> {
 public:
  UNetEncoder(int64_t out_channels, int64_t depth, int64_t base_width, std::mt19937_64& rng)
      : out_channels_(out_channels), depth_(depth) {
    int64_t cin = 3;
    for (int64_t i = 0; i < depth; ++i) {
      const int64_t w = base_width << i;
      enc1_.push_back(Conv2dLayer<T>::init(cin, w, 3, rng));
      enc2_.push_back(Conv2dLayer<T>::init(w, w, 3, rng));
      cin = w;
    }
    const int64_t wb = base_width << depth;
    mid1_ = Conv2dLayer<T>::init(cin, wb, 3, rng);
    mid2_ = Conv2dLayer<T>::init(wb, wb, 3, rng);
    int64_t cup = wb;
    for (int64_t i = depth - 1; i >= 0; --i) {
      const int64_t w = base_width << i;
      dec1_.push_back(Conv2dLayer<T>::init(cup + w, w, 3, rng));
      dec2_.push_back(Conv2dLayer<T>::init(w, w, 3, rng));
      cup = w;
    }
    proj_ = Conv2dLayer<T>::init(base_width, out_channels, 1, rng);
  }

  Var<T> encode(Tape<T>& tape, ParamBinder<T>& bind, Var<T> images) override {
    const Tensor<T>& x = tape.value(images);
    if (x.rank() != 4 || x.dim(1) != 3)
      throw std::invalid_argument("encode: expected [B,3,H,W], got " + shape_str(x.dims()));
    const int64_t div = int64_t(1) << depth_;
    if (x.dim(2) % div != 0)
      throw std::invalid_argument("encode: H=" + std::to_string(x.dim(2)) +
                                  " not divisible by " + std::to_string(div));
    if (x.dim(3) % div != 0)
      throw std::invalid_argument("encode: W=" + std::to_string(x.dim(3)) +
                                  " not divisible by " + std::to_string(div));

    std::vector<Var<T>> skips;
    Var<T> h = images;
    for (size_t i = 0; i < enc1_.size(); ++i) {
      h = softplus(tape, enc1_[i].forward(tape, bind, h));
      h = softplus(tape, enc2_[i].forward(tape, bind, h));
      skips.push_back(h);
      h = maxpool2(tape, h);
    }
    h = softplus(tape, mid1_.forward(tape, bind, h));
    h = softplus(tape, mid2_.forward(tape, bind, h));
    for (size_t i = 0; i < dec1_.size(); ++i) {
      h = upsample_bilinear2(tape, h);
      h = concat_channels(tape, h, skips[skips.size() - 1 - i]);
      h = softplus(tape, dec1_[i].forward(tape, bind, h));
      h = softplus(tape, dec2_[i].forward(tape, bind, h));
    }
    return proj_.forward(tape, bind, h);
  }

  int64_t out_channels() const override { return out_channels_; }
  int64_t depth() const override { return depth_; }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    for (size_t i = 0; i < enc1_.size(); ++i) {
      enc1_[i].collect(prefix + ".enc" + std::to_string(i) + "a", out);
      enc2_[i].collect(prefix + ".enc" + std::to_string(i) + "b", out);
    }
    mid1_.collect(prefix + ".mid_a", out);
    mid2_.collect(prefix + ".mid_b", out);
    for (size_t i = 0; i < dec1_.size(); ++i) {
      dec1_[i].collect(prefix + ".dec" + std::to_string(i) + "a", out);
      dec2_[i].collect(prefix + ".dec" + std::to_string(i) + "b", out);
    }
    proj_.collect(prefix + ".proj", out);
  }

 private:
  int64_t out_channels_;
  int64_t depth_;
  std::vector<Conv2dLayer<T>> enc1_, enc2_;
  Conv2dLayer<T> mid1_, mid2_;
  std::vector<Conv2dLayer<T>> dec1_, dec2_;
  Conv2dLayer<T> proj_;
};

}  // namespace dgquant
