#include "test_util.hpp"

using namespace dgquant;

TEST_CASE("softmax rows are stochastic and match direct computation") {
  std::mt19937_64 rng = derive_rng(1, 1);
  Tensor<double> x = randn<double>({7, 5}, rng, 3.0);
  Tape<double> tape;
  const Tensor<double>& p = tape.value(softmax_rows(tape, tape.constant(x)));
  for (int64_t s = 0; s < 7; ++s) {
    double sum = 0;
    for (int64_t j = 0; j < 5; ++j) {
      CHECK(p(s, j) >= 0.0);
      sum += p(s, j);
    }
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("chw_to_rows and rows_to_chw invert each other") {
  std::mt19937_64 rng = derive_rng(1, 2);
  Tensor<double> x = randn<double>({2, 3, 4, 5}, rng);
  Tape<double> tape;
  Var<double> xv = tape.constant(x);
  Var<double> back = rows_to_chw(tape, chw_to_rows(tape, xv), 2, 4, 5);
  CHECK(testutil::tensors_close(tape.value(back), x, 0.0));
  // row s of the flattened view is pixel (b,y,x) across channels
  const Tensor<double>& rows = tape.value(chw_to_rows(tape, xv));
  CHECK(rows(1 * 20 + 2 * 5 + 3, 1) == x(1, 1, 2, 3));
}

TEST_CASE("pairwise_sqdist matches an explicit loop") {
  std::mt19937_64 rng = derive_rng(1, 3);
  Tensor<double> z = randn<double>({6, 4}, rng);
  Tensor<double> e = randn<double>({3, 4}, rng);
  Tape<double> tape;
  const Tensor<double>& d = tape.value(pairwise_sqdist(tape, tape.constant(z), tape.constant(e)));
  for (int64_t s = 0; s < 6; ++s)
    for (int64_t j = 0; j < 3; ++j) {
      double acc = 0;
      for (int64_t c = 0; c < 4; ++c) {
        const double diff = z(s, c) - e(j, c);
        acc += diff * diff;
      }
      CHECK(d(s, j) == Catch::Approx(acc).margin(1e-12));
    }
}

TEST_CASE("composite graph gradients match finite differences") {
  std::mt19937_64 rng = derive_rng(1, 4);
  Tensor<double> a = randn<double>({5, 3}, rng);
  Tensor<double> b = randn<double>({5, 3}, rng);
  Tensor<double> codes = randn<double>({4, 3}, rng);

  Tensor<double> ga, gb, gc;
  auto run = [&](bool grads) {
    Tape<double> tape;
    Var<double> av = tape.leaf(a, true);
    Var<double> bv = tape.leaf(b, true);
    Var<double> cv = tape.leaf(codes, true);
    Var<double> mixed = mul(tape, vtanh(tape, av), sigmoid(tape, bv));
    Var<double> dist = pairwise_sqdist(tape, mixed, cv);
    Var<double> sm = softmax_rows(tape, scale(tape, dist, -0.7));
    Var<double> st = col_standardize(tape, matmul(tape, sm, cv), 1e-8);
    Var<double> loss = add(tape, mean_all(tape, square(tape, st)),
                           mean_all(tape, sqrt_eps(tape, square(tape, mixed), 1e-12)));
    const double v = tape.value(loss).at(0);
    if (grads) {
      tape.backward(loss);
      ga = tape.grad(av);
      gb = tape.grad(bv);
      gc = tape.grad(cv);
    }
    return v;
  };
  run(true);
  auto eval = [&]() { return run(false); };
  std::mt19937_64 probe = derive_rng(1, 5);
  CHECK(testutil::max_rel_grad_error(a, ga, eval, 8, probe) < 1e-4);
  CHECK(testutil::max_rel_grad_error(b, gb, eval, 8, probe) < 1e-4);
  CHECK(testutil::max_rel_grad_error(codes, gc, eval, 8, probe) < 1e-4);
}

TEST_CASE("smul broadcasts a learnable scalar with correct gradients") {
  std::mt19937_64 rng = derive_rng(1, 6);
  Tensor<double> x = randn<double>({4, 4}, rng);
  Tensor<double> s = Tensor<double>::scalar(0.7);
  Tensor<double> gs;
  auto run = [&](bool grads) {
    Tape<double> tape;
    Var<double> xv = tape.constant(x);
    Var<double> sv = tape.leaf(s, true);
    Var<double> y = smul(tape, xv, vexp(tape, sv));
    Var<double> loss = mean_all(tape, square(tape, y));
    if (grads) {
      tape.backward(loss);
      gs = tape.grad(sv);
    }
    return tape.value(loss).at(0);
  };
  run(true);
  std::mt19937_64 probe = derive_rng(1, 7);
  CHECK(testutil::max_rel_grad_error(s, gs, [&] { return run(false); }, 2, probe) < 1e-6);
}

TEST_CASE("group_sum conserves mass over contiguous groups") {
  std::mt19937_64 rng = derive_rng(1, 8);
  Tensor<double> logits = randn<double>({5, 12}, rng);
  Tape<double> tape;
  Var<double> p = softmax_rows(tape, tape.constant(logits));
  const Tensor<double>& masses = tape.value(group_sum(tape, p, 3));
  for (int64_t s = 0; s < 5; ++s) {
    double sum = 0;
    for (int64_t k = 0; k < 3; ++k) sum += masses(s, k);
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gather_cols picks labelled entries and rejects bad indices") {
  Tensor<double> m = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<int32_t> idx = Tensor<int32_t>::from({2}, {2, 0});
  Tape<double> tape;
  const Tensor<double>& out = tape.value(gather_cols(tape, tape.constant(m), idx));
  CHECK(out.at(0) == 3);
  CHECK(out.at(1) == 4);
  Tensor<int32_t> bad = Tensor<int32_t>::from({2}, {3, 0});
  REQUIRE_THROWS(gather_cols(tape, tape.constant(m), bad));
}

TEST_CASE("upsample_bilinear2 preserves constants and total mass in backward") {
  Tensor<double> x = Tensor<double>::full({1, 1, 4, 4}, 3.25);
  Tape<double> tape;
  Var<double> xv = tape.leaf(x, true);
  Var<double> up = upsample_bilinear2(tape, xv);
  const Tensor<double>& u = tape.value(up);
  REQUIRE(u.dims() == std::vector<int64_t>({1, 1, 8, 8}));
  for (int64_t i = 0; i < u.numel(); ++i) CHECK(u.at(i) == Catch::Approx(3.25));
  Var<double> loss = sum_all(tape, up);
  tape.backward(loss);
  const Tensor<double> g = tape.grad(xv);
  double total = 0;
  for (int64_t i = 0; i < g.numel(); ++i) total += g.at(i);
  CHECK(total == Catch::Approx(64.0).epsilon(1e-12));  // one unit per output pixel
}
