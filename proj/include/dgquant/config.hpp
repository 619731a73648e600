#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dgquant {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Model and schedule hyperparameters. Defaults follow the reference
/// protocol (512 codes, lr 1e-3, batch 2, 200 epochs, 256x256 inputs);
/// desk-scale runs override them through a config file or CLI flags.
struct ModelConfig {
  int64_t channels = 64;       // C, encoder output channels (split into two halves)
  int64_t categories = 2;      // K
  int64_t codes = 512;         // N, divisible by K
  double lambda_mse = 1.0;
  double lambda_corr_pre = 1.0;
  double lambda_corr_post = 1.0;
  double lambda_domain = 1.0;
  double lambda_code = 1.0;
  int64_t encoder_depth = 3;
  int64_t base_width = 16;
  double eps_log = 1e-6;       // guards every log() in the loss formulas
  double sigma_sq_init = 1.0;  // initial sigma_gamma^2
  double tau_init = 1.0;       // initial Gumbel-Softmax temperature
  uint64_t seed = 0;
  int64_t image_size = 256;
  double lr = 1e-3;
  int64_t batch = 2;
  int64_t epochs = 200;
  int64_t folds = 5;
  int64_t domain_cap = 0;      // 0 = no per-domain size cap
  double grad_clip = 0.0;      // 0 = off; global-norm clip otherwise

  int64_t c1() const { return channels / 2; }
  int64_t group_size() const { return codes / categories; }
};

/// Checks the structural invariants; returns cfg unchanged when they hold.
inline ModelConfig validate_config(const ModelConfig& cfg) {
  if (cfg.channels <= 0 || cfg.channels % 2 != 0)
    throw ConfigError("config: channels must be positive and even, got " +
                      std::to_string(cfg.channels));
  if (cfg.categories < 2)
    throw ConfigError("config: categories must be >= 2");
  if (cfg.codes <= 0 || cfg.codes % cfg.categories != 0)
    throw ConfigError("config: codes (" + std::to_string(cfg.codes) +
                      ") must be divisible by categories (" +
                      std::to_string(cfg.categories) + ")");
  if (cfg.eps_log <= 0.0) throw ConfigError("config: eps_log must be positive");
  if (cfg.lambda_mse < 0 || cfg.lambda_corr_pre < 0 || cfg.lambda_corr_post < 0 ||
      cfg.lambda_domain < 0 || cfg.lambda_code < 0)
    throw ConfigError("config: loss weights must be nonnegative");
  if (cfg.sigma_sq_init <= 0.0 || cfg.tau_init <= 0.0)
    throw ConfigError("config: sigma_sq_init and tau_init must be positive");
  if (cfg.encoder_depth < 1 || cfg.encoder_depth > 6)
    throw ConfigError("config: encoder_depth out of range [1,6]");
  if (cfg.base_width < 1) throw ConfigError("config: base_width must be >= 1");
  if (cfg.image_size < 8) throw ConfigError("config: image_size must be >= 8");
  if (cfg.batch < 1) throw ConfigError("config: batch must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (cfg.folds < 2) throw ConfigError("config: folds must be >= 2");
  if (cfg.lr <= 0.0) throw ConfigError("config: lr must be positive");
  if (cfg.domain_cap < 0) throw ConfigError("config: domain_cap must be >= 0");
  if (cfg.grad_clip < 0.0) throw ConfigError("config: grad_clip must be >= 0");
  return cfg;
}

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

template <typename F>
void assign_keys(ModelConfig& cfg, const F& set) {
  set("channels", cfg.channels);
  set("categories", cfg.categories);
  set("codes", cfg.codes);
  set("lambda_mse", cfg.lambda_mse);
  set("lambda_corr_pre", cfg.lambda_corr_pre);
  set("lambda_corr_post", cfg.lambda_corr_post);
  set("lambda_domain", cfg.lambda_domain);
  set("lambda_code", cfg.lambda_code);
  set("encoder_depth", cfg.encoder_depth);
  set("base_width", cfg.base_width);
  set("eps_log", cfg.eps_log);
  set("sigma_sq_init", cfg.sigma_sq_init);
  set("tau_init", cfg.tau_init);
  set("seed", cfg.seed);
  set("image_size", cfg.image_size);
  set("lr", cfg.lr);
  set("batch", cfg.batch);
  set("epochs", cfg.epochs);
  set("folds", cfg.folds);
  set("domain_cap", cfg.domain_cap);
  set("grad_clip", cfg.grad_clip);
}

template <typename V>
void parse_value(const std::string& key, const std::string& text, V& out) {
  std::istringstream iss(text);
  V v{};
  iss >> v;
  if (iss.fail() || !(iss >> std::ws).eof())
    throw ConfigError("config: bad value for key '" + key + "': " + text);
  out = v;
}

}  // namespace detail

/// Parses the flat key=value format ('#' starts a comment). Unknown keys
/// are an error; every key is optional.
inline ModelConfig parse_config(std::istream& in) {
  ModelConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    bool matched = false;
    detail::assign_keys(cfg, [&](const char* name, auto& field) {
      if (key == name) {
        detail::parse_value(key, value, field);
        matched = true;
      }
    });
    if (!matched)
      throw ConfigError("config: unknown key '" + key + "' on line " + std::to_string(lineno));
  }
  return cfg;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  return parse_config(in);
}

inline std::string serialize_config(const ModelConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  ModelConfig copy = cfg;
  detail::assign_keys(copy, [&](const char* name, auto& field) {
    out << name << "=" << field << "\n";
  });
  return out.str();
}

inline void save_config(const ModelConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot write " + path);
  out << serialize_config(cfg);
}

}  // namespace dgquant
