#pragma once

#include <stdexcept>
#include <utility>

#include "dgquant/nn.hpp"

namespace dgquant {

/// Channel split of Z into its category half (first C/2 channels) and
/// domain-specific half (last C/2 channels).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& z) {
  if (z.rank() != 4) throw std::invalid_argument("split_channels: expected [B,C,H,W]");
  const int64_t C = z.dim(1);
  if (C % 2 != 0)
    throw std::invalid_argument("split_channels: C=" + std::to_string(C) + " is odd");
  Tape<T> scratch;
  Var<T> zv = scratch.constant(z);
  Tensor<T> z1 = scratch.value(slice_channels(scratch, zv, 0, C / 2)).clone();
  Tensor<T> z2 = scratch.value(slice_channels(scratch, zv, C / 2, C)).clone();
  return {z1, z2};
}

template <typename T>
std::pair<Var<T>, Var<T>> split_channels(Tape<T>& tape, Var<T> z) {
  const int64_t C = tape.value(z).dim(1);
  if (C % 2 != 0)
    throw std::invalid_argument("split_channels: C=" + std::to_string(C) + " is odd");
  return {slice_channels(tape, z, 0, C / 2), slice_channels(tape, z, C / 2, C)};
}

/// Concat of the two quantized halves; inverse of split_channels.
template <typename T>
Tensor<T> concat_quantized(const Tensor<T>& z1q, const Tensor<T>& z2q) {
  Tape<T> scratch;
  return scratch.value(concat_channels(scratch, scratch.constant(z1q), scratch.constant(z2q)))
      .clone();
}

template <typename T>
Var<T> concat_quantized(Tape<T>& tape, Var<T> z1q, Var<T> z2q) {
  return concat_channels(tape, z1q, z2q);
}

}  // namespace dgquant
