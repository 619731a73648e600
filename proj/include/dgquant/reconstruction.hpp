#pragma once

#include <string>
#include <vector>

#include "dgquant/nn.hpp"

namespace dgquant {

/// Skip-free encoder-decoder CNN mapping the concatenated quantized
/// features back to an image in [0,1]. Three conv+pool stages down,
/// three upsample+conv stages up, sigmoid output.
template <typename T>
class Decoder {
 public:
  Decoder() = default;

  Decoder(int64_t in_channels, int64_t base_width, std::mt19937_64& rng)
      : in_channels_(in_channels) {
    down_.push_back(Conv2dLayer<T>::init(in_channels, base_width, 3, rng));
    down_.push_back(Conv2dLayer<T>::init(base_width, base_width * 2, 3, rng));
    down_.push_back(Conv2dLayer<T>::init(base_width * 2, base_width * 4, 3, rng));
    up_.push_back(Conv2dLayer<T>::init(base_width * 4, base_width * 2, 3, rng));
    up_.push_back(Conv2dLayer<T>::init(base_width * 2, base_width, 3, rng));
    up_.push_back(Conv2dLayer<T>::init(base_width, base_width, 3, rng));
    out_ = Conv2dLayer<T>::init(base_width, 3, 3, rng);
  }

  Var<T> decode(Tape<T>& tape, ParamBinder<T>& bind, Var<T> zq) const {
    const Tensor<T>& x = tape.value(zq);
    if (x.rank() != 4 || x.dim(1) != in_channels_)
      throw std::invalid_argument("decode: expected " + std::to_string(in_channels_) +
                                  " channels, got " + shape_str(x.dims()));
    if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0)
      throw std::invalid_argument("decode: H,W must be divisible by 8, got " +
                                  shape_str(x.dims()));
    Var<T> h = zq;
    for (const auto& layer : down_) {
      h = softplus(tape, layer.forward(tape, bind, h));
      h = maxpool2(tape, h);
    }
    for (const auto& layer : up_) {
      h = upsample_bilinear2(tape, h);
      h = softplus(tape, layer.forward(tape, bind, h));
    }
    return sigmoid(tape, out_.forward(tape, bind, h));
  }

  int64_t in_channels() const { return in_channels_; }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (size_t i = 0; i < down_.size(); ++i)
      down_[i].collect(prefix + ".down" + std::to_string(i), out);
    for (size_t i = 0; i < up_.size(); ++i)
      up_[i].collect(prefix + ".up" + std::to_string(i), out);
    out_.collect(prefix + ".out", out);
  }

 private:
  int64_t in_channels_ = 0;
  std::vector<Conv2dLayer<T>> down_, up_;
  Conv2dLayer<T> out_;
};

/// Log-form reconstruction error: (1/2) sum_i log((x_i - x'_i)^2 + eps).
/// The log amplifies gradients on small residuals; eps keeps the perfect
/// fit finite.
template <typename T>
Var<T> recon_loss(Tape<T>& tape, Var<T> x, Var<T> x_prime, T eps) {
  if (eps <= T(0)) throw std::invalid_argument("recon_loss: eps must be > 0");
  if (!tape.value(x).same_shape(tape.value(x_prime)))
    throw std::invalid_argument("recon_loss: shape mismatch");
  Var<T> diff = sub(tape, x, x_prime);
  return scale(tape, sum_all(tape, log_eps(tape, square(tape, diff), eps)), T(0.5));
}

template <typename T>
T recon_loss_value(const Tensor<T>& x, const Tensor<T>& x_prime, T eps) {
  Tape<T> tape;
  return tape.value(recon_loss(tape, tape.constant(x), tape.constant(x_prime), eps)).at(0);
}

}  // namespace dgquant
