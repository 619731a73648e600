#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dgquant/autodiff.hpp"
#include "dgquant/tensor.hpp"

namespace dgquant {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

namespace detail {

/// col[(c*k+dy)*k+dx, y*W+x] = x[b,c,y+dy-pad,x+dx-pad], zero outside.
template <typename T>
void im2col(const Tensor<T>& x, int64_t b, int64_t k, Tensor<T>& col) {
  const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t pad = k / 2;
  const T* xb = x.data() + b * C * H * W;
  T* cp = col.data();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t dy = 0; dy < k; ++dy)
      for (int64_t dx = 0; dx < k; ++dx) {
        for (int64_t y = 0; y < H; ++y) {
          const int64_t sy = y + dy - pad;
          if (sy < 0 || sy >= H) {
            for (int64_t xx = 0; xx < W; ++xx) *cp++ = T(0);
            continue;
          }
          const T* row = xb + (c * H + sy) * W;
          for (int64_t xx = 0; xx < W; ++xx) {
            const int64_t sx = xx + dx - pad;
            *cp++ = (sx < 0 || sx >= W) ? T(0) : row[sx];
          }
        }
      }
}

template <typename T>
void col2im_add(const Tensor<T>& col, int64_t k, Tensor<T>& gx, int64_t b) {
  const int64_t C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const int64_t pad = k / 2;
  T* xb = gx.data() + b * C * H * W;
  const T* cp = col.data();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t dy = 0; dy < k; ++dy)
      for (int64_t dx = 0; dx < k; ++dx)
        for (int64_t y = 0; y < H; ++y) {
          const int64_t sy = y + dy - pad;
          if (sy < 0 || sy >= H) {
            cp += W;
            continue;
          }
          T* row = xb + (c * H + sy) * W;
          for (int64_t xx = 0; xx < W; ++xx) {
            const int64_t sx = xx + dx - pad;
            const T v = *cp++;
            if (sx >= 0 && sx < W) row[sx] += v;
          }
        }
}

struct LerpTable {
  std::vector<int64_t> i0, i1;
  std::vector<double> w0, w1;
};

/// Source indices/weights for 2x bilinear upsampling (half-pixel centers).
inline LerpTable upsample2_table(int64_t out_n, int64_t in_n) {
  LerpTable t;
  t.i0.resize(out_n);
  t.i1.resize(out_n);
  t.w0.resize(out_n);
  t.w1.resize(out_n);
  for (int64_t o = 0; o < out_n; ++o) {
    const double s = (o + 0.5) / 2.0 - 0.5;
    const int64_t f = static_cast<int64_t>(std::floor(s));
    const double frac = s - f;
    t.i0[o] = std::clamp<int64_t>(f, 0, in_n - 1);
    t.i1[o] = std::clamp<int64_t>(f + 1, 0, in_n - 1);
    t.w0[o] = 1.0 - frac;
    t.w1[o] = frac;
  }
  return t;
}

}  // namespace detail

/// 2-D convolution, stride 1, zero padding k/2 (odd k keeps H,W).
/// x [B,Cin,H,W], w [Cout,Cin,k,k], b [Cout] -> [B,Cout,H,W]
template <typename T>
Var<T> conv2d(Tape<T>& tape, Var<T> x, Var<T> w, Var<T> b) {
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& Wt = tape.value(w);
  const Tensor<T>& Bt = tape.value(b);
  if (X.rank() != 4 || Wt.rank() != 4) throw std::invalid_argument("conv2d: rank mismatch");
  const int64_t B = X.dim(0), Cin = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int64_t Cout = Wt.dim(0), k = Wt.dim(2);
  if (Wt.dim(1) != Cin)
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(Wt.dim(1)) +
                                " input channels, got " + std::to_string(Cin));
  if (Wt.dim(3) != k || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be odd square");
  if (Bt.numel() != Cout) throw std::invalid_argument("conv2d: bias size mismatch");

  Tensor<T> out({B, Cout, H, W});
  const int64_t kk = Cin * k * k, hw = H * W;
  Tensor<T> col({kk, hw});
  for (int64_t bi = 0; bi < B; ++bi) {
    if (k == 1) {
      Eigen::Map<const RowMat<T>> xm(X.data() + bi * Cin * hw, Cin, hw);
      Eigen::Map<RowMat<T>> om(out.data() + bi * Cout * hw, Cout, hw);
      om.noalias() = as_mat(Wt, Cout, Cin) * xm;
    } else {
      detail::im2col(X, bi, k, col);
      Eigen::Map<RowMat<T>> om(out.data() + bi * Cout * hw, Cout, hw);
      om.noalias() = as_mat(Wt, Cout, kk) * as_mat(col, kk, hw);
    }
    for (int64_t c = 0; c < Cout; ++c) {
      T* o = out.data() + (bi * Cout + c) * hw;
      const T bv = Bt.at(c);
      for (int64_t p = 0; p < hw; ++p) o[p] += bv;
    }
  }

  return tape.make(std::move(out), {x, w, b},
                   [x, w, b, B, Cin, H, W, Cout, k, kk, hw](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& X = t.value(x);
    const Tensor<T>& Wt = t.value(w);
    Tensor<T> col({kk, hw});
    for (int64_t bi = 0; bi < B; ++bi) {
      Eigen::Map<const RowMat<T>> gm(g.data() + bi * Cout * hw, Cout, hw);
      if (t.requires_grad(w)) {
        Tensor<T>& gw = t.grad_buf(w.id);
        if (k == 1) {
          Eigen::Map<const RowMat<T>> xm(X.data() + bi * Cin * hw, Cin, hw);
          as_mat(gw, Cout, Cin).noalias() += gm * xm.transpose();
        } else {
          detail::im2col(X, bi, k, col);
          as_mat(gw, Cout, kk).noalias() += gm * as_mat(col, kk, hw).transpose();
        }
      }
      if (t.requires_grad(b)) {
        Tensor<T>& gb = t.grad_buf(b.id);
        for (int64_t c = 0; c < Cout; ++c) {
          T acc = T(0);
          const T* gp = g.data() + (bi * Cout + c) * hw;
          for (int64_t p = 0; p < hw; ++p) acc += gp[p];
          gb.at(c) += acc;
        }
      }
      if (t.requires_grad(x)) {
        Tensor<T>& gx = t.grad_buf(x.id);
        if (k == 1) {
          Eigen::Map<RowMat<T>> gxm(gx.data() + bi * Cin * hw, Cin, hw);
          gxm.noalias() += as_mat(Wt, Cout, Cin).transpose() * gm;
        } else {
          Tensor<T> gcol({kk, hw});
          as_mat(gcol, kk, hw).noalias() = as_mat(Wt, Cout, kk).transpose() * gm;
          detail::col2im_add(gcol, k, gx, bi);
        }
      }
    }
  });
}

/// 2x2 max pooling, stride 2. H and W must be even.
template <typename T>
Var<T> maxpool2(Tape<T>& tape, Var<T> x) {
  const Tensor<T>& X = tape.value(x);
  const int64_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H % 2 || W % 2) throw std::invalid_argument("maxpool2: odd spatial size");
  const int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out({B, C, Ho, Wo});
  Tensor<int32_t> arg({B, C, Ho, Wo});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* in = X.data() + bc * H * W;
    T* o = out.data() + bc * Ho * Wo;
    int32_t* am = arg.data() + bc * Ho * Wo;
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t xx = 0; xx < Wo; ++xx) {
        int32_t best = 0;
        T bv = in[(2 * y) * W + 2 * xx];
        const T cands[4] = {bv, in[(2 * y) * W + 2 * xx + 1],
                            in[(2 * y + 1) * W + 2 * xx], in[(2 * y + 1) * W + 2 * xx + 1]};
        for (int32_t i = 1; i < 4; ++i)
          if (cands[i] > bv) {
            bv = cands[i];
            best = i;
          }
        o[y * Wo + xx] = bv;
        am[y * Wo + xx] = best;
      }
  }
  return tape.make(std::move(out), {x}, [x, arg, B, C, H, W, Ho, Wo](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(x)) return;
    Tensor<T>& gx = t.grad_buf(x.id);
    for (int64_t bc = 0; bc < B * C; ++bc) {
      T* gi = gx.data() + bc * H * W;
      const T* go = g.data() + bc * Ho * Wo;
      const int32_t* am = arg.data() + bc * Ho * Wo;
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t xx = 0; xx < Wo; ++xx) {
          const int32_t a = am[y * Wo + xx];
          gi[(2 * y + a / 2) * W + (2 * xx + a % 2)] += go[y * Wo + xx];
        }
    }
  });
}

/// Bilinear 2x upsampling with half-pixel sample centers.
template <typename T>
Var<T> upsample_bilinear2(Tape<T>& tape, Var<T> x) {
  const Tensor<T>& X = tape.value(x);
  const int64_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int64_t Ho = 2 * H, Wo = 2 * W;
  const detail::LerpTable ty = detail::upsample2_table(Ho, H);
  const detail::LerpTable tx = detail::upsample2_table(Wo, W);
  Tensor<T> out({B, C, Ho, Wo});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* in = X.data() + bc * H * W;
    T* o = out.data() + bc * Ho * Wo;
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t xx = 0; xx < Wo; ++xx) {
        const T v = static_cast<T>(
            ty.w0[y] * (tx.w0[xx] * in[ty.i0[y] * W + tx.i0[xx]] +
                        tx.w1[xx] * in[ty.i0[y] * W + tx.i1[xx]]) +
            ty.w1[y] * (tx.w0[xx] * in[ty.i1[y] * W + tx.i0[xx]] +
                        tx.w1[xx] * in[ty.i1[y] * W + tx.i1[xx]]));
        o[y * Wo + xx] = v;
      }
  }
  return tape.make(std::move(out), {x}, [x, B, C, H, W, Ho, Wo, ty, tx](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(x)) return;
    Tensor<T>& gx = t.grad_buf(x.id);
    for (int64_t bc = 0; bc < B * C; ++bc) {
      T* gi = gx.data() + bc * H * W;
      const T* go = g.data() + bc * Ho * Wo;
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t xx = 0; xx < Wo; ++xx) {
          const T gv = go[y * Wo + xx];
          gi[ty.i0[y] * W + tx.i0[xx]] += static_cast<T>(ty.w0[y] * tx.w0[xx]) * gv;
          gi[ty.i0[y] * W + tx.i1[xx]] += static_cast<T>(ty.w0[y] * tx.w1[xx]) * gv;
          gi[ty.i1[y] * W + tx.i0[xx]] += static_cast<T>(ty.w1[y] * tx.w0[xx]) * gv;
          gi[ty.i1[y] * W + tx.i1[xx]] += static_cast<T>(ty.w1[y] * tx.w1[xx]) * gv;
        }
    }
  });
}

/// Channel concatenation of [B,Ca,H,W] and [B,Cb,H,W].
template <typename T>
Var<T> concat_channels(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Tensor<T>& X = tape.value(a);
  const Tensor<T>& Y = tape.value(b);
  const int64_t B = X.dim(0), Ca = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int64_t Cb = Y.dim(1);
  if (Y.dim(0) != B || Y.dim(2) != H || Y.dim(3) != W)
    throw std::invalid_argument("concat_channels: spatial/batch mismatch " + shape_str(X.dims()) +
                                " vs " + shape_str(Y.dims()));
  Tensor<T> out({B, Ca + Cb, H, W});
  const int64_t hw = H * W;
  for (int64_t bi = 0; bi < B; ++bi) {
    std::copy_n(X.data() + bi * Ca * hw, Ca * hw, out.data() + bi * (Ca + Cb) * hw);
    std::copy_n(Y.data() + bi * Cb * hw, Cb * hw, out.data() + (bi * (Ca + Cb) + Ca) * hw);
  }
  return tape.make(std::move(out), {a, b}, [a, b, B, Ca, Cb, hw](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a.id);
      for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t i = 0; i < Ca * hw; ++i)
          ga.at(bi * Ca * hw + i) += g.at(bi * (Ca + Cb) * hw + i);
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b.id);
      for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t i = 0; i < Cb * hw; ++i)
          gb.at(bi * Cb * hw + i) += g.at((bi * (Ca + Cb) + Ca) * hw + i);
    }
  });
}

/// Channels [c0,c1) of [B,C,H,W].
template <typename T>
Var<T> slice_channels(Tape<T>& tape, Var<T> x, int64_t c0, int64_t c1) {
  const Tensor<T>& X = tape.value(x);
  const int64_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
  const int64_t Cs = c1 - c0, hw = H * W;
  Tensor<T> out({B, Cs, H, W});
  for (int64_t bi = 0; bi < B; ++bi)
    std::copy_n(X.data() + (bi * C + c0) * hw, Cs * hw, out.data() + bi * Cs * hw);
  return tape.make(std::move(out), {x}, [x, B, C, c0, Cs, hw](Tape<T>& t, int self) {
    const Tensor<T>& g = t.grad_buf(self);
    if (!t.requires_grad(x)) return;
    Tensor<T>& gx = t.grad_buf(x.id);
    for (int64_t bi = 0; bi < B; ++bi)
      for (int64_t i = 0; i < Cs * hw; ++i)
        gx.at((bi * C + c0) * hw + i) += g.at(bi * Cs * hw + i);
  });
}

// ---------------------------------------------------------------------------
// Parameter containers

template <typename T>
T xavier_std(int64_t fan_in, int64_t fan_out) {
  return static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

template <typename T>
struct Conv2dLayer {
  Tensor<T> w;  // [Cout,Cin,k,k]
  Tensor<T> b;  // [Cout]

  static Conv2dLayer init(int64_t cin, int64_t cout, int64_t k, std::mt19937_64& rng) {
    Conv2dLayer l;
    l.w = randn<T>({cout, cin, k, k}, rng, xavier_std<T>(cin * k * k, cout * k * k));
    l.b = Tensor<T>::zeros({cout});
    return l;
  }

  Var<T> forward(Tape<T>& tape, ParamBinder<T>& bind, Var<T> x) const {
    Var<T> wv = bind(const_cast<Tensor<T>&>(w));
    Var<T> bv = bind(const_cast<Tensor<T>&>(b));
    return conv2d(tape, x, wv, bv);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

template <typename T>
struct LinearLayer {
  Tensor<T> w;  // [out,in]
  Tensor<T> b;  // [out]

  static LinearLayer init(int64_t in, int64_t out, std::mt19937_64& rng) {
    LinearLayer l;
    l.w = randn<T>({out, in}, rng, xavier_std<T>(in, out));
    l.b = Tensor<T>::zeros({out});
    return l;
  }

  /// x [S,in] -> [S,out]
  Var<T> forward(Tape<T>& tape, ParamBinder<T>& bind, Var<T> x) const {
    Var<T> y = matmul_nt(tape, x, bind(const_cast<Tensor<T>&>(w)));
    return add_rowvec(tape, y, bind(const_cast<Tensor<T>&>(b)));
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

// ---------------------------------------------------------------------------
// Adam optimizer over a flat parameter list.

template <typename T>
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(const std::vector<Tensor<T>*>& params) {
    params_ = params;
    m_.clear();
    v_.clear();
    for (Tensor<T>* p : params_) {
      m_.push_back(Tensor<T>::zeros(p->dims()));
      v_.push_back(Tensor<T>::zeros(p->dims()));
    }
    t_ = 0;
  }

  /// grads parallel to the attached params. clip <= 0 disables clipping.
  void step(const std::vector<Tensor<T>>& grads, double clip = 0.0) {
    if (grads.size() != params_.size())
      throw std::invalid_argument("adam: gradient list size mismatch");
    double gscale = 1.0;
    if (clip > 0.0) {
      double sq = 0.0;
      for (const Tensor<T>& g : grads)
        for (int64_t i = 0; i < g.numel(); ++i) sq += double(g.at(i)) * double(g.at(i));
      const double norm = std::sqrt(sq);
      if (norm > clip) gscale = clip / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = *params_[i];
      const Tensor<T>& g = grads[i];
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (int64_t j = 0; j < p.numel(); ++j) {
        const double gj = double(g.at(j)) * gscale;
        const double mj = beta1_ * double(m.at(j)) + (1.0 - beta1_) * gj;
        const double vj = beta2_ * double(v.at(j)) + (1.0 - beta2_) * gj * gj;
        m.at(j) = static_cast<T>(mj);
        v.at(j) = static_cast<T>(vj);
        p.at(j) -= static_cast<T>(lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
      }
    }
  }

  int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace dgquant
