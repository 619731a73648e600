#include "test_util.hpp"

using namespace dgquant;

TEST_CASE("default config validates and matches the reference protocol") {
  ModelConfig cfg;
  REQUIRE_NOTHROW(validate_config(cfg));
  CHECK(cfg.codes == 512);
  CHECK(cfg.lr == 1e-3);
  CHECK(cfg.batch == 2);
  CHECK(cfg.epochs == 200);
  CHECK(cfg.image_size == 256);
  CHECK(cfg.folds == 5);
  CHECK(cfg.categories == 2);
}

TEST_CASE("config invariants are enforced") {
  ModelConfig cfg;
  cfg.codes = 512;
  cfg.categories = 2;
  cfg.channels = 64;
  REQUIRE_NOTHROW(validate_config(cfg));

  SECTION("codes not divisible by categories") {
    cfg.codes = 8;
    cfg.categories = 3;
    REQUIRE_THROWS_AS(validate_config(cfg), ConfigError);
  }
  SECTION("odd channel count") {
    cfg.channels = 7;
    REQUIRE_THROWS_AS(validate_config(cfg), ConfigError);
  }
  SECTION("nonpositive eps_log") {
    cfg.eps_log = 0.0;
    REQUIRE_THROWS_AS(validate_config(cfg), ConfigError);
  }
  SECTION("negative loss weight") {
    cfg.lambda_code = -0.5;
    REQUIRE_THROWS_AS(validate_config(cfg), ConfigError);
  }
}

TEST_CASE("validate_config is idempotent") {
  ModelConfig cfg;
  cfg.codes = 96;
  cfg.categories = 3;
  const ModelConfig once = validate_config(cfg);
  const ModelConfig twice = validate_config(once);
  CHECK(serialize_config(once) == serialize_config(twice));
}

TEST_CASE("config serializes and reloads identically") {
  ModelConfig cfg;
  cfg.channels = 32;
  cfg.codes = 64;
  cfg.lambda_mse = 0.125;
  cfg.lambda_corr_post = 2.5;
  cfg.eps_log = 3e-7;
  cfg.seed = 1234567;
  cfg.lr = 2.5e-4;
  cfg.grad_clip = 7.5;
  std::istringstream in(serialize_config(cfg));
  const ModelConfig back = parse_config(in);
  CHECK(serialize_config(back) == serialize_config(cfg));
}

TEST_CASE("config parser handles comments, spaces, and rejects junk") {
  {
    std::istringstream in("# comment line\n  codes = 128 # trailing\n\nbatch=4\n");
    const ModelConfig cfg = parse_config(in);
    CHECK(cfg.codes == 128);
    CHECK(cfg.batch == 4);
  }
  {
    std::istringstream in("no_such_key=3\n");
    REQUIRE_THROWS_AS(parse_config(in), ConfigError);
  }
  {
    std::istringstream in("codes\n");
    REQUIRE_THROWS_AS(parse_config(in), ConfigError);
  }
  {
    std::istringstream in("codes=twelve\n");
    REQUIRE_THROWS_AS(parse_config(in), ConfigError);
  }
}

TEST_CASE("tensor reshape shares storage and checks element count") {
  Tensor<double> t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> r = t.reshaped({3, 2});
  CHECK(r(2, 1) == 6);
  r.at(0) = 42;
  CHECK(t.at(0) == 42);  // same buffer
  REQUIRE_THROWS(t.reshaped({4, 2}));
  Tensor<double> c = t.clone();
  c.at(0) = 7;
  CHECK(t.at(0) == 42);  // clone detached
}

TEST_CASE("rng streams are reproducible and independent") {
  std::mt19937_64 a = derive_rng(9, 1);
  std::mt19937_64 b = derive_rng(9, 1);
  std::mt19937_64 c = derive_rng(9, 2);
  CHECK(a() == b());
  CHECK(a() == b());
  std::mt19937_64 a2 = derive_rng(9, 1);
  CHECK(a2() != c());
}
