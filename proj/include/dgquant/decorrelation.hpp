#pragma once

#include <string>
#include <vector>

#include "dgquant/nn.hpp"

namespace dgquant {

constexpr double kVarianceFloor = 1e-8;

/// Nonlinear projection of per-pixel channel vectors to a shared embedding.
/// An identity head passes its input through unchanged (used by tests and
/// by callers that want the plain correlation objective).
template <typename T>
struct ProjectionHead {
  bool identity = true;
  LinearLayer<T> l1, l2;

  static ProjectionHead init(int64_t in, int64_t hidden, int64_t out, std::mt19937_64& rng) {
    ProjectionHead h;
    h.identity = false;
    h.l1 = LinearLayer<T>::init(in, hidden, rng);
    h.l2 = LinearLayer<T>::init(hidden, out, rng);
    return h;
  }

  static ProjectionHead make_identity() { return ProjectionHead{}; }

  Var<T> forward(Tape<T>& tape, ParamBinder<T>& bind, Var<T> x) const {
    if (identity) return x;
    return l2.forward(tape, bind, vtanh(tape, l1.forward(tape, bind, x)));
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    if (identity) return;
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
  }
};

/// One head per view. Both heads map to the same embedding width d.
template <typename T>
struct ProjectionParams {
  ProjectionHead<T> view1, view2;

  static ProjectionParams init(int64_t c1, int64_t c2, int64_t d, std::mt19937_64& rng) {
    ProjectionParams p;
    p.view1 = ProjectionHead<T>::init(c1, 2 * d, d, rng);
    p.view2 = ProjectionHead<T>::init(c2, 2 * d, d, rng);
    return p;
  }

  static ProjectionParams identity() {
    ProjectionParams p;
    p.view1 = ProjectionHead<T>::make_identity();
    p.view2 = ProjectionHead<T>::make_identity();
    return p;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    view1.collect(prefix + ".view1", out);
    view2.collect(prefix + ".view2", out);
  }
};

/// Mean squared Pearson correlation between all pairs of projected
/// embedding dimensions of the two views, over the B*H*W sample axis.
/// Bounded to [0,1]; zero variance is handled by the variance floor.
template <typename T>
Var<T> corrcoef_loss(Tape<T>& tape, ParamBinder<T>& bind, Var<T> a, Var<T> b,
                     const ProjectionParams<T>& proj) {
  const Tensor<T>& A = tape.value(a);
  const Tensor<T>& B = tape.value(b);
  if (A.rank() != 4 || B.rank() != 4)
    throw std::invalid_argument("corrcoef_loss: expected [B,C,H,W] views");
  if (A.dim(0) != B.dim(0) || A.dim(2) != B.dim(2) || A.dim(3) != B.dim(3))
    throw std::invalid_argument("corrcoef_loss: sample axes differ");
  const int64_t S = A.dim(0) * A.dim(2) * A.dim(3);
  if (S < 2) throw std::invalid_argument("corrcoef_loss: need at least 2 samples");

  Var<T> ra = proj.view1.forward(tape, bind, chw_to_rows(tape, a));
  Var<T> rb = proj.view2.forward(tape, bind, chw_to_rows(tape, b));
  Var<T> sa = col_standardize(tape, ra, static_cast<T>(kVarianceFloor));
  Var<T> sb = col_standardize(tape, rb, static_cast<T>(kVarianceFloor));
  Var<T> corr = scale(tape, matmul_tn(tape, sa, sb), T(1) / static_cast<T>(S));
  return mean_all(tape, square(tape, corr));
}

/// Convenience overload on plain tensors (identity projections).
template <typename T>
T corrcoef_loss_value(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T> tape;
  ParamBinder<T> bind(tape);
  ProjectionParams<T> id = ProjectionParams<T>::identity();
  return tape.value(corrcoef_loss(tape, bind, tape.constant(a), tape.constant(b), id)).at(0);
}

}  // namespace dgquant
