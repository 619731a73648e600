#pragma once

#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dgquant/checkpoint.hpp"
#include "dgquant/config.hpp"
#include "dgquant/decorrelation.hpp"
#include "dgquant/encoder.hpp"
#include "dgquant/nn.hpp"
#include "dgquant/prototypes.hpp"
#include "dgquant/quantizer.hpp"
#include "dgquant/reconstruction.hpp"
#include "dgquant/splitter.hpp"

namespace dgquant {

enum class Mode { kTrain, kEval };

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& term)
      : std::runtime_error("non-finite loss term: " + term), term(term) {}
  std::string term;
};

template <typename T>
struct LossBundle {
  T mse = 0, corrcoef_pre = 0, corrcoef_post = 0, domain = 0, code = 0;
  T xent = 0;  // baseline cross-entropy; zero for the full method
  T total = 0;
};

template <typename T>
struct ForwardOutput {
  LossBundle<T> losses;
  Var<T> total;               // differentiable root
  Tensor<int32_t> pred;       // [B,H,W]
  T mean_max_prob = 0;        // noise-free max assignment probability, mean over pixels
  T sigma_sq = 0;
  T tau = 0;
};

/// Full pipeline: encoder -> channel split -> decorrelation -> grouped
/// stochastic quantization -> concat -> skip-free reconstruction, with the
/// prototype and code-assignment losses on the category half. A baseline
/// variant (encoder + 1x1 classifier + cross-entropy) shares the data
/// path for like-for-like comparisons.
template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& cfg_in, bool baseline) {
    ModelConfig cfg = validate_config(cfg_in);
    Model m;
    m.cfg_ = cfg;
    m.baseline_ = baseline;
    std::mt19937_64 rng = derive_rng(cfg.seed, 10);
    m.encoder_ = std::make_unique<UNetEncoder<T>>(cfg.channels, cfg.encoder_depth,
                                                  cfg.base_width, rng);
    m.decoder_ = Decoder<T>(cfg.channels, cfg.base_width, rng);
    m.proj_ = ProjectionParams<T>::init(cfg.c1(), cfg.c1(), cfg.c1(), rng);
    m.prototypes_ = PrototypeSet<T>::init(cfg.categories, cfg.c1(), rng);
    m.codebook_ = GroupedCodebook<T>::init(cfg.codes, cfg.c1(), cfg.c1(), cfg.categories,
                                           static_cast<T>(cfg.sigma_sq_init),
                                           static_cast<T>(cfg.tau_init), rng);
    m.classifier_ = Conv2dLayer<T>::init(cfg.channels, cfg.categories, 1, rng);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  bool baseline() const { return baseline_; }
  GroupedCodebook<T>& codebook() { return codebook_; }
  PrototypeSet<T>& prototypes() { return prototypes_; }

  std::vector<NamedParam<T>> named_params() {
    std::vector<NamedParam<T>> out;
    encoder_->collect("encoder", out);
    if (baseline_) {
      classifier_.collect("classifier", out);
      return out;
    }
    decoder_.collect("decoder", out);
    proj_.collect("proj", out);
    prototypes_.collect("prototypes", out);
    codebook_.collect("codebook", out);
    return out;
  }

  ForwardOutput<T> forward(Tape<T>& tape, ParamBinder<T>& bind, const Tensor<T>& images,
                           const Tensor<int32_t>& labels, Mode mode,
                           std::mt19937_64* noise_rng) {
    check_batch(images, labels);
    const int64_t B = images.dim(0), H = images.dim(2), W = images.dim(3);
    const Tensor<int32_t> labels_flat = labels.reshaped({B * H * W});
    Var<T> x = tape.constant(images);
    Var<T> z = encoder_->encode(tape, bind, x);

    ForwardOutput<T> out;
    if (baseline_) {
      forward_baseline(tape, bind, z, labels_flat, B, H, W, out);
      return out;
    }

    auto [z1, z2] = split_channels(tape, z);
    Var<T> corr_pre = corrcoef_loss(tape, bind, z1, z2, proj_);
    out.losses.corrcoef_pre = checked(tape, corr_pre, "corrcoef_pre");

    Var<T> z1r = chw_to_rows(tape, z1);
    Var<T> z2r = chw_to_rows(tape, z2);
    Var<T> ea = bind(codebook_.e_alpha);
    Var<T> eb = bind(codebook_.e_beta);
    Var<T> lv = bind(codebook_.log_var_gamma);
    Var<T> lt = bind(codebook_.log_tau);

    Var<T> logits1 = mahalanobis_logits(tape, z1r, ea, lv);
    Var<T> logits2 = mahalanobis_logits(tape, z2r, eb, lv);
    const bool noise = (mode == Mode::kTrain);
    Var<T> p1 = gumbel_softmax_assign(tape, logits1, lt, noise, noise_rng);
    Var<T> p2 = gumbel_softmax_assign(tape, logits2, lt, noise, noise_rng);

    Var<T> z1q_r, z2q_r;
    auto hard1 = quantize_hard(tape.value(logits1), codebook_.e_alpha);
    if (mode == Mode::kTrain) {
      z1q_r = quantize_soft(tape, p1, ea);
      z2q_r = quantize_soft(tape, p2, eb);
    } else {
      auto hard2 = quantize_hard(tape.value(logits2), codebook_.e_beta);
      z1q_r = tape.constant(hard1.first);
      z2q_r = tape.constant(hard2.first);
    }
    Var<T> z1q = rows_to_chw(tape, z1q_r, B, H, W);
    Var<T> z2q = rows_to_chw(tape, z2q_r, B, H, W);

    Var<T> corr_post = corrcoef_loss(tape, bind, z1q, z2q, proj_);
    out.losses.corrcoef_post = checked(tape, corr_post, "corrcoef_post");

    Var<T> zq = concat_quantized(tape, z1q, z2q);
    Var<T> xp = decoder_.decode(tape, bind, zq);
    Var<T> mse = recon_loss(tape, x, xp, static_cast<T>(cfg_.eps_log));
    out.losses.mse = checked(tape, mse, "mse");

    Var<T> dom = domain_loss(tape, bind, z1, labels_flat, prototypes_);
    out.losses.domain = checked(tape, dom, "domain");

    Tensor<T> w = assignment_weights(tape.value(p1), cfg_.codes, cfg_.categories);
    Var<T> code = code_loss(tape, p1, labels_flat, w, cfg_.categories,
                            static_cast<T>(cfg_.eps_log));
    out.losses.code = checked(tape, code, "code");

    Var<T> total = scale(tape, mse, static_cast<T>(cfg_.lambda_mse));
    total = add(tape, total, scale(tape, corr_pre, static_cast<T>(cfg_.lambda_corr_pre)));
    total = add(tape, total, scale(tape, corr_post, static_cast<T>(cfg_.lambda_corr_post)));
    total = add(tape, total, scale(tape, dom, static_cast<T>(cfg_.lambda_domain)));
    total = add(tape, total, scale(tape, code, static_cast<T>(cfg_.lambda_code)));
    out.losses.total = checked(tape, total, "total");
    out.total = total;

    out.pred = predict_labels(hard1.second, cfg_.codes, cfg_.categories).reshaped({B, H, W});
    out.sigma_sq = codebook_.sigma_sq();
    out.tau = codebook_.tau();
    out.mean_max_prob = mean_max_assignment(tape.value(logits1), out.tau);
    return out;
  }

  void save_checkpoint(const std::string& path, const std::string& meta) {
    Container c;
    c.add_string("config", serialize_config(cfg_));
    c.add_string("meta", meta);
    for (const NamedParam<T>& p : named_params()) c.add_tensor(p.name, *p.tensor);
    c.save(path);
  }

  static Model load_checkpoint(const Container& c) {
    std::istringstream cfg_in(c.get_string("config"));
    ModelConfig cfg = parse_config(cfg_in);
    const bool baseline = !c.has("codebook.e_alpha");
    Model m = build(cfg, baseline);
    for (const NamedParam<T>& p : m.named_params()) {
      Tensor<T> stored = c.template get_tensor<T>(p.name);
      if (!stored.same_shape(*p.tensor))
        throw CheckpointError("checkpoint: shape mismatch for '" + p.name + "': stored " +
                              shape_str(stored.dims()) + " vs model " +
                              shape_str(p.tensor->dims()));
      std::copy_n(stored.data(), stored.numel(), p.tensor->data());
    }
    return m;
  }

  static Model load_checkpoint(const std::string& path) {
    return load_checkpoint(Container::load(path));
  }

  void save_codebook(const std::string& path) {
    Container c;
    c.add_tensor("e_alpha", codebook_.e_alpha);
    c.add_tensor("e_beta", codebook_.e_beta);
    c.add_tensor("log_var_gamma", codebook_.log_var_gamma);
    c.add_tensor("log_tau", codebook_.log_tau);
    c.save(path);
  }

 private:
  void check_batch(const Tensor<T>& images, const Tensor<int32_t>& labels) const {
    if (images.rank() != 4 || images.dim(1) != 3)
      throw std::invalid_argument("forward: images must be [B,3,H,W], got " +
                                  shape_str(images.dims()));
    if (labels.rank() != 3 || labels.dim(0) != images.dim(0) ||
        labels.dim(1) != images.dim(2) || labels.dim(2) != images.dim(3))
      throw std::invalid_argument("forward: labels " + shape_str(labels.dims()) +
                                  " not aligned with images " + shape_str(images.dims()));
  }

  void forward_baseline(Tape<T>& tape, ParamBinder<T>& bind, Var<T> z,
                        const Tensor<int32_t>& labels_flat, int64_t B, int64_t H, int64_t W,
                        ForwardOutput<T>& out) {
    Var<T> logits = classifier_.forward(tape, bind, z);     // [B,K,H,W]
    Var<T> rows = chw_to_rows(tape, logits);                // [S,K]
    Var<T> logp = log_softmax_rows(tape, rows);
    Var<T> picked = gather_cols(tape, logp, labels_flat);
    Var<T> ce = scale(tape, mean_all(tape, picked), T(-1));
    out.losses.xent = checked(tape, ce, "xent");
    out.losses.total = out.losses.xent;
    out.total = ce;

    const Tensor<T>& lr = tape.value(rows);
    const int64_t S = lr.dim(0), K = lr.dim(1);
    Tensor<int32_t> pred({S});
    for (int64_t s = 0; s < S; ++s) {
      int32_t best = 0;
      T bv = lr(s, 0);
      for (int64_t k = 1; k < K; ++k)
        if (lr(s, k) > bv) {
          bv = lr(s, k);
          best = static_cast<int32_t>(k);
        }
      pred.at(s) = best;
    }
    out.pred = pred.reshaped({B, H, W});
  }

  T checked(Tape<T>& tape, Var<T> v, const char* term) const {
    const T val = tape.value(v).at(0);
    if (!std::isfinite(static_cast<double>(val))) throw NonFiniteLoss(term);
    return val;
  }

  static T mean_max_assignment(const Tensor<T>& logits, T tau) {
    const int64_t S = logits.dim(0), N = logits.dim(1);
    double acc = 0;
    for (int64_t s = 0; s < S; ++s) {
      T mx = logits(s, 0);
      for (int64_t j = 1; j < N; ++j) mx = std::max(mx, logits(s, j));
      double zsum = 0, top = 0;
      for (int64_t j = 0; j < N; ++j) {
        const double e = std::exp(static_cast<double>((logits(s, j) - mx) / tau));
        zsum += e;
        top = std::max(top, e);
      }
      acc += top / zsum;
    }
    return static_cast<T>(acc / static_cast<double>(S));
  }

  ModelConfig cfg_;
  bool baseline_ = false;
  std::unique_ptr<EncoderBase<T>> encoder_;
  Decoder<T> decoder_;
  ProjectionParams<T> proj_;
  PrototypeSet<T> prototypes_;
  GroupedCodebook<T> codebook_;
  Conv2dLayer<T> classifier_;
};

}  // namespace dgquant
