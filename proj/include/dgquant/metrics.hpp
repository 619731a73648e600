#pragma once

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgquant/tensor.hpp"

namespace dgquant {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Pixel-count accumulator for dataset-level IoU across many batches.
class IouAccumulator {
 public:
  explicit IouAccumulator(int64_t num_classes)
      : k_(num_classes), inter_(num_classes, 0), pred_(num_classes, 0), gt_(num_classes, 0) {}

  void add(const Tensor<int32_t>& pred, const Tensor<int32_t>& gt) {
    if (!pred.same_shape(gt)) throw MetricsError("iou: pred/gt shape mismatch");
    for (int64_t i = 0; i < pred.numel(); ++i) {
      const int32_t p = pred.at(i), g = gt.at(i);
      if (p < 0 || p >= k_ || g < 0 || g >= k_)
        throw MetricsError("iou: label " + std::to_string(p < 0 || p >= k_ ? p : g) +
                           " outside [0," + std::to_string(k_) + ")");
      ++pred_[p];
      ++gt_[g];
      if (p == g) ++inter_[p];
    }
  }

  /// IoU_k = |pred=k && gt=k| / |pred=k || gt=k|; a class absent from both
  /// is vacuously 1.
  std::vector<double> iou() const {
    std::vector<double> out(k_);
    for (int64_t k = 0; k < k_; ++k) {
      const int64_t uni = pred_[k] + gt_[k] - inter_[k];
      out[k] = uni == 0 ? 1.0 : double(inter_[k]) / double(uni);
    }
    return out;
  }

 private:
  int64_t k_;
  std::vector<int64_t> inter_, pred_, gt_;
};

inline std::vector<double> iou_per_class(const Tensor<int32_t>& pred, const Tensor<int32_t>& gt,
                                         int64_t num_classes) {
  IouAccumulator acc(num_classes);
  acc.add(pred, gt);
  return acc.iou();
}

inline double mean_iou(const std::vector<double>& iou) {
  if (iou.empty()) throw MetricsError("mean_iou: empty vector");
  return std::accumulate(iou.begin(), iou.end(), 0.0) / double(iou.size());
}

struct AggregateResult {
  std::vector<double> mean;  // per entry
  std::vector<double> stddev;
};

/// Arithmetic mean and population standard deviation per entry across runs.
inline AggregateResult aggregate_runs(const std::vector<std::vector<double>>& per_seed) {
  if (per_seed.empty()) throw MetricsError("aggregate_runs: no runs");
  const size_t width = per_seed[0].size();
  for (const auto& run : per_seed)
    if (run.size() != width) throw MetricsError("aggregate_runs: ragged inputs");
  AggregateResult r;
  r.mean.assign(width, 0.0);
  r.stddev.assign(width, 0.0);
  for (const auto& run : per_seed)
    for (size_t i = 0; i < width; ++i) r.mean[i] += run[i];
  for (size_t i = 0; i < width; ++i) r.mean[i] /= double(per_seed.size());
  for (const auto& run : per_seed)
    for (size_t i = 0; i < width; ++i) {
      const double d = run[i] - r.mean[i];
      r.stddev[i] += d * d;
    }
  for (size_t i = 0; i < width; ++i) r.stddev[i] = std::sqrt(r.stddev[i] / double(per_seed.size()));
  return r;
}

inline std::string percent2(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

}  // namespace dgquant
