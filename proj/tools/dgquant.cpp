// dgquant: synthetic-domain generation, leave-one-domain-out training,
// evaluation, and report aggregation for grouped stochastic quantization
// segmentation. All commands are deterministic given --seed.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "dgquant/dgquant.hpp"

namespace fs = std::filesystem;
using namespace dgquant;

namespace {

using Scalar = float;

uint64_t resolve_seed(std::optional<uint64_t> flag_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("DGQUANT_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

std::map<std::string, std::string> parse_meta(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream iss(text);
  std::string line;
  while (std::getline(iss, line)) {
    const size_t eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Minimal glob: '*' and '?' within path components.

bool component_match(const std::string& pat, const std::string& name) {
  size_t p = 0, n = 0, star = std::string::npos, mark = 0;
  while (n < name.size()) {
    if (p < pat.size() && (pat[p] == '?' || pat[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pat.size() && pat[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pat.size() && pat[p] == '*') ++p;
  return p == pat.size();
}

std::vector<std::string> glob_paths(const std::string& pattern) {
  const bool has_wild = pattern.find('*') != std::string::npos ||
                        pattern.find('?') != std::string::npos;
  if (!has_wild) {
    if (!fs::exists(pattern)) throw DataError("report: missing input file " + pattern);
    return {pattern};
  }
  fs::path pat(pattern);
  std::vector<fs::path> roots;
  roots.push_back(pat.is_absolute() ? fs::path("/") : fs::path("."));
  for (const fs::path& comp : pat.relative_path()) {
    const std::string c = comp.string();
    std::vector<fs::path> next;
    for (const fs::path& r : roots) {
      if (c.find('*') == std::string::npos && c.find('?') == std::string::npos) {
        if (fs::exists(r / c)) next.push_back(r / c);
        continue;
      }
      if (!fs::is_directory(r)) continue;
      for (const auto& entry : fs::directory_iterator(r))
        if (component_match(c, entry.path().filename().string()))
          next.push_back(entry.path());
    }
    roots = std::move(next);
  }
  std::vector<std::string> out;
  for (const fs::path& p : roots) out.push_back(p.string());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

std::vector<DomainDataset> discover_domains(const std::string& data_dir, int64_t k) {
  std::vector<std::string> names;
  if (!fs::is_directory(data_dir)) throw DataError("data directory not found: " + data_dir);
  for (const auto& entry : fs::directory_iterator(data_dir))
    if (entry.is_directory() && fs::is_directory(entry.path() / "images"))
      names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("no domain subdirectories under " + data_dir);
  std::vector<DomainDataset> domains;
  for (const std::string& n : names)
    domains.push_back(load_domain((fs::path(data_dir) / n).string(), k));
  return domains;
}

struct MetricsRow {
  std::string method, domain, holdout;
  int64_t fold = 0;
  uint64_t seed = 0;
  std::vector<double> iou;  // per class, then miou appended
};

void write_metrics_csv(const std::string& path, const MetricsRow& row) {
  std::ofstream out(path);
  out << "method,domain,holdout,fold,seed";
  for (size_t k = 0; k + 1 < row.iou.size(); ++k) out << ",iou_" << k;
  out << ",miou\n";
  out << row.method << "," << row.domain << "," << row.holdout << "," << row.fold << ","
      << row.seed;
  char buf[32];
  for (double v : row.iou) {
    std::snprintf(buf, sizeof(buf), ",%.10g", v);
    out << buf;
  }
  out << "\n";
}

MetricsRow read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("report: cannot open " + path);
  std::string header, line;
  if (!std::getline(in, header) || !std::getline(in, line))
    throw DataError("report: malformed metrics file " + path);
  MetricsRow row;
  std::istringstream iss(line);
  std::string field;
  int idx = 0;
  while (std::getline(iss, field, ',')) {
    switch (idx) {
      case 0: row.method = field; break;
      case 1: row.domain = field; break;
      case 2: row.holdout = field; break;
      case 3: row.fold = std::strtoll(field.c_str(), nullptr, 10); break;
      case 4: row.seed = std::strtoull(field.c_str(), nullptr, 10); break;
      default: row.iou.push_back(std::strtod(field.c_str(), nullptr));
    }
    ++idx;
  }
  if (row.iou.size() < 2) throw DataError("report: malformed metrics file " + path);
  return row;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, int64_t domains, int64_t count, int64_t size,
              uint64_t seed, bool force) {
  if (domains < 2) throw DataError("synth: domain generalization needs --domains >= 2");
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw DataError("synth: output directory " + out_dir +
                    " is not empty (use --force to overwrite)");
  fs::create_directories(out_dir);
  const auto specs = make_default_specs(domains, /*structure_seed=*/seed);
  const auto datasets = generate_synthetic(out_dir, specs, count, size, seed);
  for (const DomainDataset& d : datasets)
    std::cout << "domain " << d.name << ": " << d.pairs.size() << " image/mask pairs\n";
  std::cout << "wrote " << datasets.size() << " domains under " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& holdout, int64_t fold,
              const std::string& config_path, std::optional<uint64_t> seed_flag,
              const std::string& out_dir, bool baseline,
              const std::optional<std::string>& fixed_split,
              std::optional<int64_t> epochs_flag, std::optional<double> lr_flag,
              std::optional<int64_t> batch_flag, std::optional<int64_t> size_flag) {
  ModelConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (seed_flag)
    cfg.seed = *seed_flag;
  else if (const char* env = std::getenv("DGQUANT_SEED"))
    cfg.seed = std::strtoull(env, nullptr, 10);
  if (epochs_flag) cfg.epochs = *epochs_flag;
  if (lr_flag) cfg.lr = *lr_flag;
  if (batch_flag) cfg.batch = *batch_flag;
  if (size_flag) cfg.image_size = *size_flag;
  cfg = validate_config(cfg);

  const auto domains = discover_domains(data_dir, cfg.categories);
  std::vector<std::string> names;
  for (const auto& d : domains) names.push_back(d.name);
  const auto holdout_it = std::find(names.begin(), names.end(), holdout);
  if (holdout_it == names.end()) {
    std::string s;
    for (const auto& n : names) s += n + " ";
    throw DataError("train: unknown domain '" + holdout + "' (available: " + s + ")");
  }

  DatasetSplit split;
  if (fixed_split) {
    long long n_train = 0, n_val = 0;
    if (std::sscanf(fixed_split->c_str(), "%lld,%lld", &n_train, &n_val) != 2)
      throw DataError("train: --fixed-split expects TRAIN,VAL counts");
    split = make_fixed_split(domains[holdout_it - names.begin()], n_train, n_val, cfg.seed);
  } else {
    if (fold < 0 || fold >= cfg.folds)
      throw DataError("train: fold " + std::to_string(fold) + " outside [0," +
                      std::to_string(cfg.folds) + ")");
    const auto splits = make_lodo_splits(domains, cfg.folds, cfg.domain_cap, cfg.seed);
    for (const DatasetSplit& s : splits)
      if (s.holdout == holdout && s.fold == fold) split = s;
  }

  auto train_samples = load_samples<Scalar>(split.train, cfg.image_size);
  auto val_samples = load_samples<Scalar>(split.validation, cfg.image_size);
  std::cout << "training " << (baseline ? "baseline" : "dgquant") << ": holdout=" << holdout
            << " fold=" << fold << " seed=" << cfg.seed << " train=" << train_samples.size()
            << " val=" << val_samples.size() << "\n";

  Model<Scalar> model = Model<Scalar>::build(cfg, baseline);
  std::ostringstream meta;
  meta << "method=" << (baseline ? "baseline" : "dgquant") << "\n";
  meta << "holdout=" << split.holdout << "\n";
  meta << "fold=" << split.fold << "\n";
  meta << "seed=" << cfg.seed << "\n";

  fs::create_directories(out_dir);
  save_config(cfg, (fs::path(out_dir) / "config_used.txt").string());
  const TrainSummary summary =
      train_model(model, train_samples, val_samples, out_dir, meta.str(), &std::cout);
  if (summary.diverged) {
    std::cerr << "training diverged (" << summary.divergence_term
              << "); last good checkpoint retained at " << summary.last_path << "\n";
    return 1;
  }
  std::cout << "best val mIoU " << percent2(summary.best_val_miou) << "% at epoch "
            << summary.best_epoch << "; checkpoint " << summary.best_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& domain, const std::string& out_dir, bool overlays,
             const std::string& config_path) {
  const Container c = Container::load(ckpt_path);
  Model<Scalar> model = Model<Scalar>::load_checkpoint(c);
  if (!config_path.empty()) {
    const ModelConfig user_cfg = load_config(config_path);
    if (user_cfg.categories != model.config().categories)
      throw ConfigError("eval: checkpoint/config K mismatch (checkpoint K=" +
                        std::to_string(model.config().categories) + ", config K=" +
                        std::to_string(user_cfg.categories) + ")");
  }
  const auto meta = parse_meta(c.get_string("meta"));

  const DomainDataset ds =
      load_domain((fs::path(data_dir) / domain).string(), model.config().categories);
  std::vector<SampleRef> refs;
  for (const SamplePath& p : ds.pairs) refs.push_back({ds.name, p});
  const auto samples = load_samples<Scalar>(refs, model.config().image_size);

  const EvalResult<Scalar> result = evaluate(model, samples, model.config().batch);

  fs::create_directories(out_dir);
  MetricsRow row;
  row.method = meta.count("method") ? meta.at("method") : "dgquant";
  row.domain = domain;
  row.holdout = meta.count("holdout") ? meta.at("holdout") : "";
  row.fold = meta.count("fold") ? std::strtoll(meta.at("fold").c_str(), nullptr, 10) : 0;
  row.seed = meta.count("seed") ? std::strtoull(meta.at("seed").c_str(), nullptr, 10) : 0;
  row.iou = result.iou;
  row.iou.push_back(result.miou);
  write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), row);

  std::ofstream rep((fs::path(out_dir) / "report.txt").string());
  rep << "evaluation report\n";
  rep << "checkpoint: " << ckpt_path << "\n";
  rep << "method: " << row.method << "  domain: " << domain << "  holdout: " << row.holdout
      << "  fold: " << row.fold << "  seed: " << row.seed << "\n";
  rep << "samples: " << samples.size() << "\n";
  for (size_t k = 0; k < result.iou.size(); ++k)
    rep << "IoU class " << k << ": " << percent2(result.iou[k]) << "%\n";
  rep << "mIoU: " << percent2(result.miou) << "%\n";

  if (overlays) {
    fs::create_directories(fs::path(out_dir) / "overlays");
    for (size_t i = 0; i < samples.size(); i += model.config().batch) {
      const size_t count = std::min<size_t>(model.config().batch, samples.size() - i);
      std::vector<size_t> order(samples.size());
      std::iota(order.begin(), order.end(), size_t(0));
      Tensor<Scalar> images;
      Tensor<int32_t> labels;
      dgquant::detail::pack_batch(samples, order, i, count, images, labels);
      Tape<Scalar> tape;
      ParamBinder<Scalar> bind(tape);
      const auto out = model.forward(tape, bind, images, labels, Mode::kEval, nullptr);
      const int64_t H = images.dim(2), W = images.dim(3);
      for (size_t b = 0; b < count; ++b) {
        Tensor<Scalar> img({3, H, W});
        std::copy_n(images.data() + b * 3 * H * W, 3 * H * W, img.data());
        Tensor<int32_t> pred({H, W});
        std::copy_n(out.pred.data() + b * H * W, H * W, pred.data());
        write_overlay((fs::path(out_dir) / "overlays" / (samples[i + b].stem + ".png")).string(),
                      img, pred);
      }
    }
  }
  std::cout << "mIoU " << percent2(result.miou) << "% over " << samples.size() << " images of "
            << domain << "; report under " << out_dir << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& input_globs, const std::string& out_dir) {
  std::vector<std::string> files;
  for (const std::string& g : input_globs) {
    const auto matched = glob_paths(g);
    files.insert(files.end(), matched.begin(), matched.end());
  }
  if (files.empty()) throw DataError("report: no input files matched");
  std::vector<MetricsRow> rows;
  for (const std::string& f : files) rows.push_back(read_metrics_csv(f));

  std::map<std::pair<std::string, std::string>, std::vector<std::vector<double>>> grouped;
  for (const MetricsRow& r : rows) grouped[{r.method, r.domain}].push_back(r.iou);

  fs::create_directories(out_dir);
  std::ofstream table((fs::path(out_dir) / "table.csv").string());
  std::ofstream rep((fs::path(out_dir) / "report.txt").string());
  const size_t classes = rows[0].iou.size() - 1;
  table << "method,domain,runs";
  for (size_t k = 0; k < classes; ++k) table << ",iou_" << k << "_mean,iou_" << k << "_std";
  table << ",miou_mean,miou_std\n";
  rep << "aggregated results (" << rows.size() << " runs)\n\n";

  std::vector<BarEntry> bars;
  for (const auto& [key, runs] : grouped) {
    const AggregateResult agg = aggregate_runs(runs);
    table << key.first << "," << key.second << "," << runs.size();
    char buf[64];
    for (size_t i = 0; i < agg.mean.size(); ++i) {
      std::snprintf(buf, sizeof(buf), ",%.10g,%.10g", agg.mean[i], agg.stddev[i]);
      table << buf;
    }
    table << "\n";
    rep << key.first << " on " << key.second << " (" << runs.size() << " runs):\n";
    for (size_t k = 0; k < classes; ++k)
      rep << "  IoU class " << k << ": " << percent2(agg.mean[k]) << "% (+/- "
          << percent2(agg.stddev[k]) << ")\n";
    rep << "  mIoU: " << percent2(agg.mean[classes]) << "% (+/- "
        << percent2(agg.stddev[classes]) << ")\n\n";
    bars.push_back({key.first + "/" + key.second, agg.mean[classes], agg.stddev[classes]});
  }
  draw_bar_chart((fs::path(out_dir) / "iou_bars.png").string(), "held-out mIoU", bars);

  // Loss curves from train logs sitting next to the metrics files.
  std::vector<PlotSeries> curves;
  std::set<std::string> seen;
  for (const std::string& f : files) {
    const fs::path log = fs::path(f).parent_path() / "train_log.txt";
    if (!fs::exists(log) || seen.count(log.string())) continue;
    seen.insert(log.string());
    std::ifstream in(log.string());
    std::map<int64_t, std::pair<double, int64_t>> per_epoch;
    std::string line;
    while (std::getline(in, line)) {
      const auto kv = parse_record_line(line);
      if (!kv.count("epoch") || !kv.count("total")) continue;
      auto& slot = per_epoch[static_cast<int64_t>(kv.at("epoch"))];
      slot.first += kv.at("total");
      slot.second += 1;
    }
    if (per_epoch.empty()) continue;
    PlotSeries s;
    s.label = fs::path(f).parent_path().filename().string();
    for (const auto& [epoch, acc] : per_epoch) s.values.push_back(acc.first / acc.second);
    curves.push_back(std::move(s));
  }
  if (!curves.empty())
    draw_line_chart((fs::path(out_dir) / "loss_curves.png").string(), "mean total loss per epoch",
                    curves);

  std::cout << "aggregated " << rows.size() << " runs into " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grouped stochastic quantization for domain-generalized segmentation"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-domain dataset");
  std::string synth_out;
  int64_t synth_domains = 3, synth_count = 40, synth_size = 64;
  std::optional<uint64_t> synth_seed;
  bool synth_force = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--domains", synth_domains, "number of domains (>= 2)");
  synth->add_option("--count", synth_count, "samples per domain");
  synth->add_option("--size", synth_size, "image size in pixels");
  synth->add_option("--seed", synth_seed, "rng seed (default: DGQUANT_SEED or 0)");
  synth->add_flag("--force", synth_force, "overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "train one leave-one-domain-out split");
  std::string train_data, train_holdout, train_config, train_out;
  int64_t train_fold = 0;
  std::optional<uint64_t> train_seed;
  bool train_baseline = false;
  std::optional<std::string> train_fixed;
  std::optional<int64_t> train_epochs, train_batch, train_size;
  std::optional<double> train_lr;
  train->add_option("--data", train_data, "dataset root directory")->required();
  train->add_option("--holdout", train_holdout, "held-out domain name")->required();
  train->add_option("--fold", train_fold, "fold index");
  train->add_option("--config", train_config, "config file (key=value lines)");
  train->add_option("--seed", train_seed, "rng seed (overrides config)");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_flag("--baseline", train_baseline,
                  "train the plain encoder + pixel classifier instead");
  train->add_option("--fixed-split", train_fixed,
                    "TRAIN,VAL counts: fixed split of the holdout domain instead of LODO");
  train->add_option("--epochs", train_epochs, "override epochs");
  train->add_option("--lr", train_lr, "override learning rate");
  train->add_option("--batch", train_batch, "override batch size");
  train->add_option("--image-size", train_size, "override image size");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one domain");
  std::string eval_ckpt, eval_data, eval_domain, eval_out, eval_config;
  bool eval_overlays = false;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset root directory")->required();
  eval->add_option("--domain", eval_domain, "domain to evaluate")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--config", eval_config, "config file to cross-check against");
  eval->add_flag("--overlays", eval_overlays, "write prediction overlays");

  auto* report = app.add_subcommand("report", "aggregate eval outputs into a table and plots");
  std::vector<std::string> report_inputs;
  std::string report_out;
  report->add_option("--inputs", report_inputs, "metrics.csv files or globs")->required();
  report->add_option("--out", report_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_domains, synth_count, synth_size,
                       resolve_seed(synth_seed), synth_force);
    if (train->parsed())
      return cmd_train(train_data, train_holdout, train_fold, train_config, train_seed,
                       train_out, train_baseline, train_fixed, train_epochs, train_lr,
                       train_batch, train_size);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_domain, eval_out, eval_overlays, eval_config);
    if (report->parsed()) return cmd_report(report_inputs, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
