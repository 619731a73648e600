#pragma once

#include <cstdint>
#include <cstddef>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgquant {

/// Dense row-major tensor with a shared buffer. Copies are shallow;
/// use clone() when an independent buffer is needed.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> dims)
      : dims_(std::move(dims)),
        buf_(std::make_shared<std::vector<T>>(count(dims_), T{})) {}

  Tensor(std::vector<int64_t> dims, std::shared_ptr<std::vector<T>> buf)
      : dims_(std::move(dims)), buf_(std::move(buf)) {
    if (!buf_ || static_cast<int64_t>(buf_->size()) != count(dims_))
      throw std::invalid_argument("tensor: buffer size does not match shape");
  }

  static Tensor zeros(std::vector<int64_t> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<int64_t> dims, T value) {
    Tensor t(std::move(dims));
    std::fill(t.buf_->begin(), t.buf_->end(), value);
    return t;
  }

  static Tensor scalar(T value) { return full({}, value); }

  static Tensor from(std::vector<int64_t> dims, std::vector<T> values) {
    if (count(dims) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("tensor: value count does not match shape");
    return Tensor(std::move(dims), std::make_shared<std::vector<T>>(std::move(values)));
  }

  const std::vector<int64_t>& dims() const { return dims_; }
  int64_t dim(size_t i) const { return dims_.at(i); }
  size_t rank() const { return dims_.size(); }
  int64_t numel() const { return count(dims_); }
  bool defined() const { return buf_ != nullptr; }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }
  T& at(int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
  const T& at(int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

  T& operator()(int64_t i) { return at(i); }
  T& operator()(int64_t i, int64_t j) { return at(i * dims_[1] + j); }
  const T& operator()(int64_t i, int64_t j) const { return at(i * dims_[1] + j); }
  T& operator()(int64_t i, int64_t j, int64_t k) {
    return at((i * dims_[1] + j) * dims_[2] + k);
  }
  const T& operator()(int64_t i, int64_t j, int64_t k) const {
    return at((i * dims_[1] + j) * dims_[2] + k);
  }
  T& operator()(int64_t b, int64_t c, int64_t y, int64_t x) {
    return at(((b * dims_[1] + c) * dims_[2] + y) * dims_[3] + x);
  }
  const T& operator()(int64_t b, int64_t c, int64_t y, int64_t x) const {
    return at(((b * dims_[1] + c) * dims_[2] + y) * dims_[3] + x);
  }

  /// New view over the same buffer with a different shape.
  Tensor reshaped(std::vector<int64_t> dims) const {
    if (count(dims) != numel())
      throw std::invalid_argument("tensor: reshape changes element count");
    return Tensor(std::move(dims), buf_);
  }

  Tensor clone() const {
    return Tensor(dims_, std::make_shared<std::vector<T>>(*buf_));
  }

  void fill(T value) { std::fill(buf_->begin(), buf_->end(), value); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      for (const T& v : *buf_)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static int64_t count(const std::vector<int64_t>& dims) {
    int64_t n = 1;
    for (int64_t d : dims) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int64_t> dims_;
  std::shared_ptr<std::vector<T>> buf_;
};

inline std::string shape_str(const std::vector<int64_t>& dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Seeded RNG streams. All randomness in the library flows through these so
// runs are reproducible across rebuilds; std::distributions are avoided
// because their draw sequences are implementation-defined.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for stream `stream_id` of a master seed.
inline std::mt19937_64 derive_rng(uint64_t seed, uint64_t stream_id) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream_id)));
}

/// Uniform in (0,1), never exactly 0 or 1.
inline double uniform01(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1p-53;
}

/// Standard normal via Box-Muller (cosine branch only, two draws per value).
inline double normal01(std::mt19937_64& rng) {
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Standard Gumbel(0,1) sample.
inline double gumbel01(std::mt19937_64& rng) {
  return -std::log(-std::log(uniform01(rng)));
}

template <typename T>
Tensor<T> randn(std::vector<int64_t> dims, std::mt19937_64& rng, T stddev = T(1), T mean = T(0)) {
  Tensor<T> t(std::move(dims));
  for (int64_t i = 0; i < t.numel(); ++i)
    t.at(i) = mean + stddev * static_cast<T>(normal01(rng));
  return t;
}

}  // namespace dgquant
