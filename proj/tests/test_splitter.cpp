#include "test_util.hpp"

using namespace dgquant;

TEST_CASE("split_channels halves the channel dimension") {
  std::mt19937_64 rng = derive_rng(2, 1);
  Tensor<double> z = randn<double>({2, 8, 4, 4}, rng);
  auto [z1, z2] = split_channels(z);
  CHECK(z1.dims() == std::vector<int64_t>({2, 4, 4, 4}));
  CHECK(z2.dims() == std::vector<int64_t>({2, 4, 4, 4}));
}

TEST_CASE("split_channels keeps channel order: first half then second half") {
  Tensor<double> z({1, 8, 2, 2});
  for (int64_t c = 0; c < 8; ++c)
    for (int64_t p = 0; p < 4; ++p) z.at(c * 4 + p) = double(c);
  auto [z1, z2] = split_channels(z);
  for (int64_t c = 0; c < 4; ++c) {
    CHECK(z1(0, c, 0, 0) == double(c));
    CHECK(z2(0, c, 0, 0) == double(c + 4));
  }
}

TEST_CASE("split_channels rejects odd channel counts") {
  Tensor<double> z({1, 7, 2, 2});
  REQUIRE_THROWS(split_channels(z));
}

TEST_CASE("concat_quantized shape and error contracts") {
  std::mt19937_64 rng = derive_rng(2, 2);
  Tensor<double> a = randn<double>({1, 4, 8, 8}, rng);
  Tensor<double> b = randn<double>({1, 4, 8, 8}, rng);
  CHECK(concat_quantized(a, b).dims() == std::vector<int64_t>({1, 8, 8, 8}));
  Tensor<double> wrong = randn<double>({1, 4, 16, 16}, rng);
  REQUIRE_THROWS(concat_quantized(a, wrong));
}

TEST_CASE("concat after split reproduces the input bit-exactly") {
  std::mt19937_64 rng = derive_rng(2, 3);
  Tensor<double> z = randn<double>({3, 6, 5, 7}, rng);
  auto [z1, z2] = split_channels(z);
  const Tensor<double> back = concat_quantized(z1, z2);
  REQUIRE(back.same_shape(z));
  for (int64_t i = 0; i < z.numel(); ++i) REQUIRE(back.at(i) == z.at(i));
}

TEST_CASE("tape-side split/concat round trip is the identity") {
  std::mt19937_64 rng = derive_rng(2, 4);
  Tensor<double> z = randn<double>({2, 4, 3, 3}, rng);
  Tape<double> tape;
  Var<double> zv = tape.constant(z);
  auto [z1, z2] = split_channels(tape, zv);
  const Tensor<double>& back = tape.value(concat_quantized(tape, z1, z2));
  CHECK(testutil::tensors_close(back, z, 0.0));
}
