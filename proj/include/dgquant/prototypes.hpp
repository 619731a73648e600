#pragma once

#include <string>
#include <vector>

#include "dgquant/nn.hpp"

namespace dgquant {

constexpr double kSqrtGuard = 1e-12;

/// Learnable per-category representative vectors t, shape [K,C1].
template <typename T>
struct PrototypeSet {
  Tensor<T> t;

  static PrototypeSet init(int64_t categories, int64_t c1, std::mt19937_64& rng,
                           T stddev = T(0.5)) {
    PrototypeSet p;
    p.t = randn<T>({categories, c1}, rng, stddev);
    return p;
  }

  int64_t categories() const { return t.dim(0); }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".t", &t});
  }
};

/// Pull/push clustering loss on the category half:
/// sum_i { mean_{pixels labelled i} ||z - t_i||_2  -  sum_j ||t_i - t_j||_2 / 2 }.
/// A category absent from the batch skips its pull term; the push term
/// over prototypes is always applied.
template <typename T>
Var<T> domain_loss(Tape<T>& tape, ParamBinder<T>& bind, Var<T> z1,
                   const Tensor<int32_t>& labels, PrototypeSet<T>& prototypes) {
  const Tensor<T>& Z = tape.value(z1);
  if (Z.rank() != 4) throw std::invalid_argument("domain_loss: expected [B,C1,H,W]");
  const int64_t B = Z.dim(0), H = Z.dim(2), W = Z.dim(3);
  const int64_t S = B * H * W;
  if (labels.numel() != S)
    throw std::invalid_argument("domain_loss: labels not aligned with z1 (" +
                                shape_str(labels.dims()) + " vs " + shape_str(Z.dims()) + ")");
  const int64_t K = prototypes.categories();
  for (int64_t s = 0; s < S; ++s)
    if (labels.at(s) < 0 || labels.at(s) >= K)
      throw std::invalid_argument("domain_loss: label " + std::to_string(labels.at(s)) +
                                  " outside [0," + std::to_string(K) + ")");

  Var<T> rows = chw_to_rows(tape, z1);
  Var<T> tv = bind(prototypes.t);
  Var<T> loss = tape.constant(Tensor<T>::scalar(T(0)));

  for (int64_t i = 0; i < K; ++i) {
    int64_t count = 0;
    Tensor<T> mask({S});
    for (int64_t s = 0; s < S; ++s) {
      if (labels.at(s) == i) {
        mask.at(s) = T(1);
        ++count;
      }
    }
    Var<T> ti = take_row(tape, tv, i);
    if (count > 0) {
      Var<T> diff = sub_rowvec(tape, rows, ti);
      Var<T> dist = sqrt_eps(tape, rowsum(tape, square(tape, diff)), static_cast<T>(kSqrtGuard));
      Var<T> pull = scale(tape, sum_all(tape, mul(tape, dist, tape.constant(mask))),
                          T(1) / static_cast<T>(count));
      loss = add(tape, loss, pull);
    }
    for (int64_t j = 0; j < K; ++j) {
      Var<T> tj = take_row(tape, tv, j);
      Var<T> dij = sqrt_eps(tape, sum_all(tape, square(tape, sub(tape, ti, tj))),
                            static_cast<T>(kSqrtGuard));
      loss = sub(tape, loss, scale(tape, dij, T(0.5)));
    }
  }
  return loss;
}

template <typename T>
T domain_loss_value(const Tensor<T>& z1, const Tensor<int32_t>& labels, PrototypeSet<T>& p) {
  Tape<T> tape;
  ParamBinder<T> bind(tape);
  return tape.value(domain_loss(tape, bind, tape.constant(z1), labels, p)).at(0);
}

}  // namespace dgquant
