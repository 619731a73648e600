#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dgquant/nn.hpp"

namespace dgquant {

/// N quantum vectors per half, partitioned into K contiguous groups of
/// N/K codes; group g of e_alpha decodes to category label g. The shared
/// variance sigma_gamma^2 and temperature tau live in log-space so they
/// stay positive under unconstrained updates.
template <typename T>
struct GroupedCodebook {
  Tensor<T> e_alpha;        // [N,C1]
  Tensor<T> e_beta;         // [N,C2]
  Tensor<T> log_var_gamma;  // scalar
  Tensor<T> log_tau;        // scalar
  int64_t categories = 2;

  static GroupedCodebook init(int64_t codes, int64_t c1, int64_t c2, int64_t categories,
                              T sigma_sq0, T tau0, std::mt19937_64& rng, T stddev = T(0.5)) {
    if (codes % categories != 0)
      throw std::invalid_argument("codebook: N not divisible by K");
    GroupedCodebook cb;
    cb.e_alpha = randn<T>({codes, c1}, rng, stddev);
    cb.e_beta = randn<T>({codes, c2}, rng, stddev);
    cb.log_var_gamma = Tensor<T>::scalar(std::log(sigma_sq0));
    cb.log_tau = Tensor<T>::scalar(std::log(tau0));
    cb.categories = categories;
    return cb;
  }

  int64_t codes() const { return e_alpha.dim(0); }
  int64_t group_size() const { return codes() / categories; }
  T sigma_sq() const { return std::exp(log_var_gamma.at(0)); }
  T tau() const { return std::exp(log_tau.at(0)); }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".e_alpha", &e_alpha});
    out.push_back({prefix + ".e_beta", &e_beta});
    out.push_back({prefix + ".log_var_gamma", &log_var_gamma});
    out.push_back({prefix + ".log_tau", &log_tau});
  }
};

// ---------------------------------------------------------------------------
// Assignment logits

/// logits[s,j] = -||codes_j - z_s||^2 / (2 sigma^2): larger logit = nearer
/// code, so softmax over the logits favours the closest quantum vector.
template <typename T>
Tensor<T> mahalanobis_logits(const Tensor<T>& z_rows, const Tensor<T>& codes, T sigma_sq) {
  if (sigma_sq <= T(0)) throw std::invalid_argument("mahalanobis_logits: sigma_sq must be > 0");
  Tape<T> scratch;
  Var<T> d = pairwise_sqdist(scratch, scratch.constant(z_rows), scratch.constant(codes));
  Tensor<T> out = scratch.value(d).clone();
  const T f = T(-0.5) / sigma_sq;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) *= f;
  return out;
}

/// Differentiable form; log_var is the learnable log sigma_gamma^2.
template <typename T>
Var<T> mahalanobis_logits(Tape<T>& tape, Var<T> z_rows, Var<T> codes, Var<T> log_var) {
  Var<T> d = pairwise_sqdist(tape, z_rows, codes);
  Var<T> factor = scale(tape, vexp(tape, scale(tape, log_var, T(-1))), T(-0.5));
  return smul(tape, d, factor);
}

// ---------------------------------------------------------------------------
// Stochastic assignment

/// softmax((logits + g)/tau) with g ~ Gumbel(0,1) when noise is on.
template <typename T>
Tensor<T> gumbel_softmax_assign(const Tensor<T>& logits, T tau, bool noise_on,
                                std::mt19937_64* rng) {
  if (tau <= T(0)) throw std::invalid_argument("gumbel_softmax_assign: tau must be > 0");
  if (noise_on && rng == nullptr)
    throw std::invalid_argument("gumbel_softmax_assign: noise requires an rng");
  Tape<T> scratch;
  Tensor<T> u = logits.clone();
  if (noise_on)
    for (int64_t i = 0; i < u.numel(); ++i) u.at(i) += static_cast<T>(gumbel01(*rng));
  for (int64_t i = 0; i < u.numel(); ++i) u.at(i) /= tau;
  return scratch.value(softmax_rows(scratch, scratch.constant(u))).clone();
}

template <typename T>
Var<T> gumbel_softmax_assign(Tape<T>& tape, Var<T> logits, Var<T> log_tau, bool noise_on,
                             std::mt19937_64* rng) {
  if (noise_on && rng == nullptr)
    throw std::invalid_argument("gumbel_softmax_assign: noise requires an rng");
  Var<T> u = logits;
  if (noise_on) {
    const Tensor<T>& lg = tape.value(logits);
    Tensor<T> noise(lg.dims());
    for (int64_t i = 0; i < noise.numel(); ++i) noise.at(i) = static_cast<T>(gumbel01(*rng));
    u = add(tape, logits, tape.constant(noise));
  }
  Var<T> inv_tau = vexp(tape, scale(tape, log_tau, T(-1)));
  return softmax_rows(tape, smul(tape, u, inv_tau));
}

// ---------------------------------------------------------------------------
// Quantization

/// Training-path quantization: per pixel the probability-weighted code
/// mixture sum_j p_j e_j. Gradients reach both p and the codes.
template <typename T>
Tensor<T> quantize_soft(const Tensor<T>& p, const Tensor<T>& codes) {
  Tape<T> scratch;
  return scratch.value(matmul(scratch, scratch.constant(p), scratch.constant(codes))).clone();
}

template <typename T>
Var<T> quantize_soft(Tape<T>& tape, Var<T> p, Var<T> codes) {
  return matmul(tape, p, codes);
}

/// Evaluation-path quantization: replace each pixel with the code of
/// maximal logit. Ties break to the lowest index.
template <typename T>
std::pair<Tensor<T>, Tensor<int32_t>> quantize_hard(const Tensor<T>& logits,
                                                    const Tensor<T>& codes) {
  const int64_t S = logits.dim(0), N = logits.dim(1), C = codes.dim(1);
  if (codes.dim(0) != N) throw std::invalid_argument("quantize_hard: code count mismatch");
  Tensor<T> out({S, C});
  Tensor<int32_t> idx({S});
  for (int64_t s = 0; s < S; ++s) {
    int64_t best = 0;
    T bv = logits(s, 0);
    for (int64_t j = 1; j < N; ++j)
      if (logits(s, j) > bv) {
        bv = logits(s, j);
        best = j;
      }
    idx.at(s) = static_cast<int32_t>(best);
    for (int64_t c = 0; c < C; ++c) out(s, c) = codes(best, c);
  }
  return {out, idx};
}

/// Code index -> category label: label = idx / (N/K).
template <typename T = void>
Tensor<int32_t> predict_labels(const Tensor<int32_t>& idx, int64_t codes, int64_t categories) {
  if (codes % categories != 0)
    throw std::invalid_argument("predict_labels: N not divisible by K");
  const int64_t gw = codes / categories;
  Tensor<int32_t> labels(idx.dims());
  for (int64_t i = 0; i < idx.numel(); ++i) {
    const int32_t v = idx.at(i);
    if (v < 0 || v >= codes)
      throw std::out_of_range("predict_labels: index " + std::to_string(v) + " outside [0," +
                              std::to_string(codes) + ")");
    labels.at(i) = static_cast<int32_t>(v / gw);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Uncertainty weights and code-assignment loss

/// Per-pixel weights from the gap between the two largest group maxima of
/// the assignment probabilities, normalized by the batch maximum. All-tie
/// batches fall back to uniform weight 1. Not differentiated through.
template <typename T>
Tensor<T> assignment_weights(const Tensor<T>& p, int64_t codes, int64_t categories) {
  const int64_t S = p.dim(0), N = p.dim(1);
  if (N != codes) throw std::invalid_argument("assignment_weights: N mismatch");
  if (codes % categories != 0)
    throw std::invalid_argument("assignment_weights: N not divisible by K");
  const int64_t gw = codes / categories;
  Tensor<T> dif({S});
  for (int64_t s = 0; s < S; ++s) {
    T top1 = -std::numeric_limits<T>::infinity();
    T top2 = -std::numeric_limits<T>::infinity();
    for (int64_t k = 0; k < categories; ++k) {
      T gm = p(s, k * gw);
      for (int64_t j = k * gw + 1; j < (k + 1) * gw; ++j) gm = std::max(gm, p(s, j));
      if (gm > top1) {
        top2 = top1;
        top1 = gm;
      } else if (gm > top2) {
        top2 = gm;
      }
    }
    dif.at(s) = top1 - top2;
  }
  T mx = T(0);
  for (int64_t s = 0; s < S; ++s) mx = std::max(mx, dif.at(s));
  Tensor<T> w({S});
  if (mx <= T(0)) {
    w.fill(T(1));
    return w;
  }
  for (int64_t s = 0; s < S; ++s) w.at(s) = dif.at(s) / mx;
  return w;
}

/// log( mean_i w_i (1 - sum_{j in group(label_i)} p_ij)^2 + eps ).
template <typename T>
Var<T> code_loss(Tape<T>& tape, Var<T> p, const Tensor<int32_t>& labels, const Tensor<T>& w,
                 int64_t categories, T eps) {
  if (eps <= T(0)) throw std::invalid_argument("code_loss: eps must be > 0");
  const Tensor<T>& P = tape.value(p);
  const int64_t S = P.dim(0);
  if (labels.numel() != S || w.numel() != S)
    throw std::invalid_argument("code_loss: labels/weights length mismatch");
  Var<T> masses = group_sum(tape, p, categories);       // [S,K]
  Var<T> picked = gather_cols(tape, masses, labels);    // [S]
  Var<T> resid = square(tape, add_const(tape, scale(tape, picked, T(-1)), T(1)));
  Var<T> weighted = mul(tape, resid, tape.constant(w));
  return log_eps(tape, mean_all(tape, weighted), eps);
}

template <typename T>
T code_loss_value(const Tensor<T>& p, const Tensor<int32_t>& labels, const Tensor<T>& w,
                  int64_t categories, T eps) {
  Tape<T> tape;
  return tape.value(code_loss(tape, tape.constant(p), labels, w, categories, eps)).at(0);
}

}  // namespace dgquant
