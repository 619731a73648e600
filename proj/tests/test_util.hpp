#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "dgquant/dgquant.hpp"

namespace testutil {

/// Central finite differences against the analytic gradient of a scalar
/// function, probing `probes` random coordinates of `param`. Returns the
/// worst relative error.
inline double max_rel_grad_error(dgquant::Tensor<double>& param,
                                 const dgquant::Tensor<double>& grad,
                                 const std::function<double()>& eval, int probes,
                                 std::mt19937_64& rng, double h = 1e-5) {
  double worst = 0;
  for (int t = 0; t < probes; ++t) {
    const int64_t i = std::min<int64_t>(
        param.numel() - 1,
        static_cast<int64_t>(dgquant::uniform01(rng) * double(param.numel())));
    const double w0 = param.at(i);
    const double step = h * std::max(1.0, std::abs(w0));
    param.at(i) = w0 + step;
    const double fp = eval();
    param.at(i) = w0 - step;
    const double fm = eval();
    param.at(i) = w0;
    const double fd = (fp - fm) / (2 * step);
    const double denom = std::max({1e-8, std::abs(fd), std::abs(grad.at(i))});
    worst = std::max(worst, std::abs(fd - grad.at(i)) / denom);
  }
  return worst;
}

inline bool tensors_equal(const dgquant::Tensor<int32_t>& a, const dgquant::Tensor<int32_t>& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

template <typename T>
bool tensors_close(const dgquant::Tensor<T>& a, const dgquant::Tensor<T>& b, double tol) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (std::abs(double(a.at(i)) - double(b.at(i))) > tol) return false;
  return true;
}

}  // namespace testutil
