#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dgquant/tensor.hpp"

namespace dgquant {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMat<T>> as_mat(Tensor<T>& t, int64_t rows, int64_t cols) {
  return Eigen::Map<RowMat<T>>(t.data(), rows, cols);
}

template <typename T>
Eigen::Map<const RowMat<T>> as_mat(const Tensor<T>& t, int64_t rows, int64_t cols) {
  return Eigen::Map<const RowMat<T>>(t.data(), rows, cols);
}

/// Handle into a Tape. Cheap to copy; invalid until assigned by a tape op.
template <typename T>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Ops append nodes during the forward pass; backward()
/// walks the tape once in reverse. One tape per training step.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // undefined until some child propagates into it
    std::function<void(Tape&, int)> backprop;
    bool requires_grad = false;
  };

  Var<T> leaf(const Tensor<T>& value, bool requires_grad = false) {
    Node n;
    n.value = value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>{static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(const Tensor<T>& value) { return leaf(value, false); }

  Var<T> make(Tensor<T> value, std::initializer_list<Var<T>> parents,
              std::function<void(Tape&, int)> backprop) {
    Node n;
    n.value = std::move(value);
    for (Var<T> p : parents)
      if (p.valid() && nodes_[p.id].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var<T>{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() root w.r.t. v; zeros if v never
  /// received a contribution.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.defined()) return n.grad;
    return Tensor<T>::zeros(n.value.dims());
  }

  /// Accumulation buffer for node id, allocated on first touch.
  Tensor<T>& grad_buf(int id) {
    Node& n = nodes_.at(id);
    if (!n.grad.defined()) n.grad = Tensor<T>::zeros(n.value.dims());
    return n.grad;
  }

  void add_grad(Var<T> v, const Tensor<T>& g) {
    if (!v.valid() || !nodes_[v.id].requires_grad) return;
    Tensor<T>& buf = grad_buf(v.id);
    for (int64_t i = 0; i < buf.numel(); ++i) buf.at(i) += g.at(i);
  }

  void backward(Var<T> root) {
    if (value(root).numel() != 1)
      throw std::invalid_argument("backward: root must be a scalar");
    grad_buf(root.id).at(0) = T(1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.defined() && n.backprop) n.backprop(*this, id);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

/// Binds parameter tensors to tape leaves, one leaf per tensor per step.
template <typename T>
class ParamBinder {
 public:
  explicit ParamBinder(Tape<T>& tape) : tape_(&tape) {}

  Var<T> operator()(Tensor<T>& param) {
    auto it = bound_.find(param.data());
    if (it != bound_.end()) return it->second;
    Var<T> v = tape_->leaf(param, true);
    bound_.emplace(param.data(), v);
    refs_.push_back({&param, v});
    return v;
  }

  /// (parameter, leaf) pairs in bind order; used to read out gradients.
  const std::vector<std::pair<Tensor<T>*, Var<T>>>& bindings() const { return refs_; }

 private:
  Tape<T>* tape_;
  std::unordered_map<const T*, Var<T>> bound_;
  std::vector<std::pair<Tensor<T>*, Var<T>>> refs_;
};

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

template <typename T, typename FwdF, typename BwdF>
Var<T> unary_op(Tape<T>& tape, Var<T> a, FwdF fwd, BwdF bwd) {
  const Tensor<T>& x = tape.value(a);
  Tensor<T> y(x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) y.at(i) = fwd(x.at(i));
  Tensor<T> yv = y;
  return tape.make(std::move(y), {a}, [a, bwd](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& x = t.value(a);
    const Tensor<T>& y = t.value(Var<T>{self});
    Tensor<T>& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += bwd(x.at(i), y.at(i)) * g.at(i);
  });
}

}  // namespace detail

template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  if (!x.same_shape(y)) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out(x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) + y.at(i);
  return tape.make(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    t.add_grad(a, g);
    t.add_grad(b, g);
  });
}

template <typename T>
Var<T> sub(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  if (!x.same_shape(y)) throw std::invalid_argument("sub: shape mismatch");
  Tensor<T> out(x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) - y.at(i);
  return tape.make(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    t.add_grad(a, g);
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b.id);
      for (int64_t i = 0; i < g.numel(); ++i) gb.at(i) -= g.at(i);
    }
  });
}

template <typename T>
Var<T> mul(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  if (!x.same_shape(y)) throw std::invalid_argument("mul: shape mismatch");
  Tensor<T> out(x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) * y.at(i);
  return tape.make(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& x = t.value(a);
    const Tensor<T>& y = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a.id);
      for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += y.at(i) * g.at(i);
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b.id);
      for (int64_t i = 0; i < g.numel(); ++i) gb.at(i) += x.at(i) * g.at(i);
    }
  });
}

template <typename T>
Var<T> scale(Tape<T>& tape, Var<T> a, T c) {
  return detail::unary_op(tape, a, [c](T x) { return c * x; },
                          [c](T, T) { return c; });
}

template <typename T>
Var<T> add_const(Tape<T>& tape, Var<T> a, T c) {
  return detail::unary_op(tape, a, [c](T x) { return x + c; },
                          [](T, T) { return T(1); });
}

template <typename T>
Var<T> square(Tape<T>& tape, Var<T> a) {
  return detail::unary_op(tape, a, [](T x) { return x * x; },
                          [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> vexp(Tape<T>& tape, Var<T> a) {
  return detail::unary_op(tape, a, [](T x) { return std::exp(x); },
                          [](T, T y) { return y; });
}

/// log(x + eps)
template <typename T>
Var<T> log_eps(Tape<T>& tape, Var<T> a, T eps) {
  return detail::unary_op(tape, a, [eps](T x) { return std::log(x + eps); },
                          [eps](T x, T) { return T(1) / (x + eps); });
}

/// sqrt(x + eps); eps keeps the derivative finite at x = 0
template <typename T>
Var<T> sqrt_eps(Tape<T>& tape, Var<T> a, T eps) {
  return detail::unary_op(tape, a, [eps](T x) { return std::sqrt(x + eps); },
                          [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> vtanh(Tape<T>& tape, Var<T> a) {
  return detail::unary_op(tape, a, [](T x) { return std::tanh(x); },
                          [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Tape<T>& tape, Var<T> a) {
  return detail::unary_op(
      tape, a,
      [](T x) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                 : std::exp(x) / (T(1) + std::exp(x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(Tape<T>& tape, Var<T> a) {
  return detail::unary_op(
      tape, a,
      [](T x) { return x > T(30) ? x : std::log1p(std::exp(std::min(x, T(30)))); },
      [](T x, T) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                    : std::exp(x) / (T(1) + std::exp(x)); });
}

/// out = a * s with s a rank-0 Var broadcast over a.
template <typename T>
Var<T> smul(Tape<T>& tape, Var<T> a, Var<T> s) {
  const Tensor<T>& x = tape.value(a);
  const T sv = tape.value(s).at(0);
  Tensor<T> out(x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) * sv;
  return tape.make(std::move(out), {a, s}, [a, s, sv](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& x = t.value(a);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a.id);
      for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += sv * g.at(i);
    }
    if (t.requires_grad(s)) {
      T acc = T(0);
      for (int64_t i = 0; i < g.numel(); ++i) acc += x.at(i) * g.at(i);
      t.grad_buf(s.id).at(0) += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Var<T> reshape(Tape<T>& tape, Var<T> a, std::vector<int64_t> dims) {
  Tensor<T> out = tape.value(a).reshaped(dims);
  return tape.make(std::move(out), {a}, [a](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a.id);
      for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += g.at(i);
    }
  });
}

/// [B,C,H,W] -> [B*H*W, C]; pixels become rows, channels become columns.
template <typename T>
Var<T> chw_to_rows(Tape<T>& tape, Var<T> a) {
  const Tensor<T>& x = tape.value(a);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({B * H * W, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t p = 0; p < H * W; ++p)
        out.at((b * H * W + p) * C + c) = x.at((b * C + c) * H * W + p);
  return tape.make(std::move(out), {a}, [a, B, C, H, W](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(a)) return;
    Tensor<T>& ga = t.grad_buf(a.id);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < H * W; ++p)
          ga.at((b * C + c) * H * W + p) += g.at((b * H * W + p) * C + c);
  });
}

/// [B*H*W, C] -> [B,C,H,W]; inverse of chw_to_rows.
template <typename T>
Var<T> rows_to_chw(Tape<T>& tape, Var<T> a, int64_t B, int64_t H, int64_t W) {
  const Tensor<T>& x = tape.value(a);
  const int64_t C = x.dim(1);
  if (x.dim(0) != B * H * W)
    throw std::invalid_argument("rows_to_chw: row count does not match B*H*W");
  Tensor<T> out({B, C, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t p = 0; p < H * W; ++p)
        out.at((b * C + c) * H * W + p) = x.at((b * H * W + p) * C + c);
  return tape.make(std::move(out), {a}, [a, B, C, H, W](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(a)) return;
    Tensor<T>& ga = t.grad_buf(a.id);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < H * W; ++p)
          ga.at((b * H * W + p) * C + c) += g.at((b * C + c) * H * W + p);
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum_all(Tape<T>& tape, Var<T> a) {
  const Tensor<T>& x = tape.value(a);
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  return tape.make(Tensor<T>::scalar(acc), {a}, [a](Tape<T>& t, int self) {
    const T g = t.grad_buf(self).at(0);
    if (!t.requires_grad(a)) return;
    Tensor<T>& ga = t.grad_buf(a.id);
    for (int64_t i = 0; i < ga.numel(); ++i) ga.at(i) += g;
  });
}

template <typename T>
Var<T> mean_all(Tape<T>& tape, Var<T> a) {
  const int64_t n = tape.value(a).numel();
  return scale(tape, sum_all(tape, a), T(1) / static_cast<T>(n));
}

/// [S,d] -> [S]
template <typename T>
Var<T> rowsum(Tape<T>& tape, Var<T> a) {
  const Tensor<T>& x = tape.value(a);
  const int64_t S = x.dim(0), d = x.dim(1);
  Tensor<T> out({S});
  for (int64_t s = 0; s < S; ++s) {
    T acc = T(0);
    for (int64_t j = 0; j < d; ++j) acc += x(s, j);
    out.at(s) = acc;
  }
  return tape.make(std::move(out), {a}, [a, S, d](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(a)) return;
    Tensor<T>& ga = t.grad_buf(a.id);
    for (int64_t s = 0; s < S; ++s)
      for (int64_t j = 0; j < d; ++j) ga.at(s * d + j) += g.at(s);
  });
}

// ---------------------------------------------------------------------------
// Row-vector broadcasts over [S,C] matrices

template <typename T>
Var<T> sub_rowvec(Tape<T>& tape, Var<T> a, Var<T> r) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& v = tape.value(r);
  const int64_t S = x.dim(0), C = x.dim(1);
  if (v.numel() != C) throw std::invalid_argument("sub_rowvec: width mismatch");
  Tensor<T> out({S, C});
  for (int64_t s = 0; s < S; ++s)
    for (int64_t c = 0; c < C; ++c) out(s, c) = x(s, c) - v.at(c);
  return tape.make(std::move(out), {a, r}, [a, r, S, C](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.requires_grad(a)) t.add_grad(a, g);
    if (t.requires_grad(r)) {
      Tensor<T>& gr = t.grad_buf(r.id);
      for (int64_t s = 0; s < S; ++s)
        for (int64_t c = 0; c < C; ++c) gr.at(c) -= g.at(s * C + c);
    }
  });
}

template <typename T>
Var<T> add_rowvec(Tape<T>& tape, Var<T> a, Var<T> r) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& v = tape.value(r);
  const int64_t S = x.dim(0), C = x.dim(1);
  if (v.numel() != C) throw std::invalid_argument("add_rowvec: width mismatch");
  Tensor<T> out({S, C});
  for (int64_t s = 0; s < S; ++s)
    for (int64_t c = 0; c < C; ++c) out(s, c) = x(s, c) + v.at(c);
  return tape.make(std::move(out), {a, r}, [a, r, S, C](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.requires_grad(a)) t.add_grad(a, g);
    if (t.requires_grad(r)) {
      Tensor<T>& gr = t.grad_buf(r.id);
      for (int64_t s = 0; s < S; ++s)
        for (int64_t c = 0; c < C; ++c) gr.at(c) += g.at(s * C + c);
    }
  });
}

/// Row i of a [K,C] matrix as a [C] vector.
template <typename T>
Var<T> take_row(Tape<T>& tape, Var<T> m, int64_t i) {
  const Tensor<T>& x = tape.value(m);
  const int64_t C = x.dim(1);
  Tensor<T> out({C});
  for (int64_t c = 0; c < C; ++c) out.at(c) = x(i, c);
  return tape.make(std::move(out), {m}, [m, i, C](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(m)) return;
    Tensor<T>& gm = t.grad_buf(m.id);
    for (int64_t c = 0; c < C; ++c) gm.at(i * C + c) += g.at(c);
  });
}

/// out[s] = m(s, idx[s]) for integer idx.
template <typename T>
Var<T> gather_cols(Tape<T>& tape, Var<T> m, const Tensor<int32_t>& idx) {
  const Tensor<T>& x = tape.value(m);
  const int64_t S = x.dim(0), K = x.dim(1);
  if (idx.numel() != S) throw std::invalid_argument("gather_cols: index length mismatch");
  Tensor<T> out({S});
  for (int64_t s = 0; s < S; ++s) {
    const int32_t k = idx.at(s);
    if (k < 0 || k >= K) throw std::out_of_range("gather_cols: index out of range");
    out.at(s) = x(s, k);
  }
  Tensor<int32_t> idx_copy = idx;
  return tape.make(std::move(out), {m}, [m, idx_copy, S, K](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(m)) return;
    Tensor<T>& gm = t.grad_buf(m.id);
    for (int64_t s = 0; s < S; ++s) gm.at(s * K + idx_copy.at(s)) += g.at(s);
  });
}

/// Sums contiguous column groups: [S,N] -> [S,K] with group width N/K.
template <typename T>
Var<T> group_sum(Tape<T>& tape, Var<T> p, int64_t K) {
  const Tensor<T>& x = tape.value(p);
  const int64_t S = x.dim(0), N = x.dim(1);
  if (N % K != 0) throw std::invalid_argument("group_sum: N not divisible by K");
  const int64_t gw = N / K;
  Tensor<T> out({S, K});
  for (int64_t s = 0; s < S; ++s)
    for (int64_t k = 0; k < K; ++k) {
      T acc = T(0);
      for (int64_t j = k * gw; j < (k + 1) * gw; ++j) acc += x(s, j);
      out(s, k) = acc;
    }
  return tape.make(std::move(out), {p}, [p, S, N, K, gw](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(p)) return;
    Tensor<T>& gp = t.grad_buf(p.id);
    for (int64_t s = 0; s < S; ++s)
      for (int64_t k = 0; k < K; ++k)
        for (int64_t j = k * gw; j < (k + 1) * gw; ++j)
          gp.at(s * N + j) += g.at(s * K + k);
  });
}

// ---------------------------------------------------------------------------
// Matrix products (Eigen-backed)

template <typename T>
Var<T> matmul(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& A = tape.value(a);
  const Tensor<T>& B = tape.value(b);
  const int64_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor<T> out({m, n});
  as_mat(out, m, n) = as_mat(A, m, k) * as_mat(B, k, n);
  return tape.make(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& A = t.value(a);
    const Tensor<T>& B = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a.id);
      as_mat(ga, m, k) += as_mat(g, m, n) * as_mat(B, k, n).transpose();
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b.id);
      as_mat(gb, k, n) += as_mat(A, m, k).transpose() * as_mat(g, m, n);
    }
  });
}

/// A^T B with A [k,m], B [k,n] -> [m,n]
template <typename T>
Var<T> matmul_tn(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& A = tape.value(a);
  const Tensor<T>& B = tape.value(b);
  const int64_t k = A.dim(0), m = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) throw std::invalid_argument("matmul_tn: inner dimension mismatch");
  Tensor<T> out({m, n});
  as_mat(out, m, n) = as_mat(A, k, m).transpose() * as_mat(B, k, n);
  return tape.make(std::move(out), {a, b}, [a, b, k, m, n](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& A = t.value(a);
    const Tensor<T>& B = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a.id);
      as_mat(ga, k, m) += as_mat(B, k, n) * as_mat(g, m, n).transpose();
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b.id);
      as_mat(gb, k, n) += as_mat(A, k, m) * as_mat(g, m, n);
    }
  });
}

/// A B^T with A [m,k], B [n,k] -> [m,n]
template <typename T>
Var<T> matmul_nt(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& A = tape.value(a);
  const Tensor<T>& B = tape.value(b);
  const int64_t m = A.dim(0), k = A.dim(1), n = B.dim(0);
  if (B.dim(1) != k) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Tensor<T> out({m, n});
  as_mat(out, m, n) = as_mat(A, m, k) * as_mat(B, n, k).transpose();
  return tape.make(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& A = t.value(a);
    const Tensor<T>& B = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a.id);
      as_mat(ga, m, k) += as_mat(g, m, n) * as_mat(B, n, k);
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b.id);
      as_mat(gb, n, k) += as_mat(g, m, n).transpose() * as_mat(A, m, k);
    }
  });
}

/// D[s,j] = ||z_s - e_j||^2 for z [S,C], e [N,C].
template <typename T>
Var<T> pairwise_sqdist(Tape<T>& tape, Var<T> z, Var<T> e) {
  const Tensor<T>& Z = tape.value(z);
  const Tensor<T>& E = tape.value(e);
  const int64_t S = Z.dim(0), C = Z.dim(1), N = E.dim(0);
  if (E.dim(1) != C) throw std::invalid_argument("pairwise_sqdist: channel mismatch");
  Tensor<T> out({S, N});
  auto zm = as_mat(Z, S, C);
  auto em = as_mat(E, N, C);
  auto om = as_mat(out, S, N);
  om.noalias() = T(-2) * (zm * em.transpose());
  Eigen::Array<T, Eigen::Dynamic, 1> z2 = zm.rowwise().squaredNorm();
  Eigen::Array<T, Eigen::Dynamic, 1> e2 = em.rowwise().squaredNorm();
  for (int64_t s = 0; s < S; ++s)
    for (int64_t j = 0; j < N; ++j) out(s, j) += z2(s) + e2(j);
  return tape.make(std::move(out), {z, e}, [z, e, S, C, N](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& Z = t.value(z);
    const Tensor<T>& E = t.value(e);
    auto gm = as_mat(g, S, N);
    auto zm = as_mat(Z, S, C);
    auto em = as_mat(E, N, C);
    if (t.requires_grad(z)) {
      Tensor<T>& gz = t.grad_buf(z.id);
      auto gzm = as_mat(gz, S, C);
      Eigen::Array<T, Eigen::Dynamic, 1> rs = gm.rowwise().sum();
      gzm.noalias() += T(2) * (rs.matrix().asDiagonal() * zm - gm * em);
    }
    if (t.requires_grad(e)) {
      Tensor<T>& ge = t.grad_buf(e.id);
      auto gem = as_mat(ge, N, C);
      Eigen::Array<T, Eigen::Dynamic, 1> cs = gm.colwise().sum();
      gem.noalias() += T(2) * (cs.matrix().asDiagonal() * em - gm.transpose() * zm);
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family (rows of [S,N])

template <typename T>
Var<T> softmax_rows(Tape<T>& tape, Var<T> a) {
  const Tensor<T>& x = tape.value(a);
  const int64_t S = x.dim(0), N = x.dim(1);
  Tensor<T> out({S, N});
  for (int64_t s = 0; s < S; ++s) {
    T mx = x(s, 0);
    for (int64_t j = 1; j < N; ++j) mx = std::max(mx, x(s, j));
    T z = T(0);
    for (int64_t j = 0; j < N; ++j) {
      const T e = std::exp(x(s, j) - mx);
      out(s, j) = e;
      z += e;
    }
    for (int64_t j = 0; j < N; ++j) out(s, j) /= z;
  }
  return tape.make(std::move(out), {a}, [a, S, N](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& p = t.value(Var<T>{self});
    if (!t.requires_grad(a)) return;
    Tensor<T>& ga = t.grad_buf(a.id);
    for (int64_t s = 0; s < S; ++s) {
      T dot = T(0);
      for (int64_t j = 0; j < N; ++j) dot += g.at(s * N + j) * p.at(s * N + j);
      for (int64_t j = 0; j < N; ++j)
        ga.at(s * N + j) += p.at(s * N + j) * (g.at(s * N + j) - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(Tape<T>& tape, Var<T> a) {
  const Tensor<T>& x = tape.value(a);
  const int64_t S = x.dim(0), N = x.dim(1);
  Tensor<T> out({S, N});
  for (int64_t s = 0; s < S; ++s) {
    T mx = x(s, 0);
    for (int64_t j = 1; j < N; ++j) mx = std::max(mx, x(s, j));
    T z = T(0);
    for (int64_t j = 0; j < N; ++j) z += std::exp(x(s, j) - mx);
    const T lz = std::log(z) + mx;
    for (int64_t j = 0; j < N; ++j) out(s, j) = x(s, j) - lz;
  }
  return tape.make(std::move(out), {a}, [a, S, N](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& y = t.value(Var<T>{self});
    if (!t.requires_grad(a)) return;
    Tensor<T>& ga = t.grad_buf(a.id);
    for (int64_t s = 0; s < S; ++s) {
      T gs = T(0);
      for (int64_t j = 0; j < N; ++j) gs += g.at(s * N + j);
      for (int64_t j = 0; j < N; ++j)
        ga.at(s * N + j) += g.at(s * N + j) - std::exp(y.at(s * N + j)) * gs;
    }
  });
}

/// Column-wise standardization of [S,d]: (x - mean) / (population std + eps).
template <typename T>
Var<T> col_standardize(Tape<T>& tape, Var<T> a, T eps) {
  const Tensor<T>& x = tape.value(a);
  const int64_t S = x.dim(0), d = x.dim(1);
  if (S < 2) throw std::invalid_argument("col_standardize: need at least 2 rows");
  Tensor<T> out({S, d});
  Tensor<T> sigma({d});
  Tensor<T> denom({d});
  for (int64_t j = 0; j < d; ++j) {
    T mu = T(0);
    for (int64_t s = 0; s < S; ++s) mu += x(s, j);
    mu /= static_cast<T>(S);
    T v = T(0);
    for (int64_t s = 0; s < S; ++s) {
      const T c = x(s, j) - mu;
      v += c * c;
    }
    v /= static_cast<T>(S);
    const T sd = std::sqrt(v);
    sigma.at(j) = sd;
    denom.at(j) = sd + eps;
    for (int64_t s = 0; s < S; ++s) out(s, j) = (x(s, j) - mu) / denom.at(j);
  }
  return tape.make(std::move(out), {a}, [a, S, d, sigma, denom](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& y = t.value(Var<T>{self});
    if (!t.requires_grad(a)) return;
    Tensor<T>& ga = t.grad_buf(a.id);
    for (int64_t j = 0; j < d; ++j) {
      T gmean = T(0), gy = T(0);
      for (int64_t s = 0; s < S; ++s) {
        gmean += g.at(s * d + j);
        gy += g.at(s * d + j) * y.at(s * d + j);
      }
      gmean /= static_cast<T>(S);
      gy /= static_cast<T>(S);
      const T inv_denom = T(1) / denom.at(j);
      const T inv_sigma = sigma.at(j) > T(0) ? T(1) / sigma.at(j) : T(0);
      for (int64_t s = 0; s < S; ++s)
        ga.at(s * d + j) += (g.at(s * d + j) - gmean) * inv_denom -
                            y.at(s * d + j) * gy * inv_sigma;
    }
  });
}

}  // namespace dgquant
