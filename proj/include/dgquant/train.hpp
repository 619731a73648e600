#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgquant/data.hpp"
#include "dgquant/metrics.hpp"
#include "dgquant/model.hpp"

namespace dgquant {

template <typename T>
struct StepRecord {
  int64_t epoch = 0, step = 0;
  LossBundle<T> losses;
  T sigma_sq = 0, tau = 0, mean_max_prob = 0;
};

template <typename T>
std::string format_step_record(const StepRecord<T>& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "epoch=%lld step=%lld mse=%.17g corrcoef_pre=%.17g corrcoef_post=%.17g "
                "domain=%.17g code=%.17g xent=%.17g total=%.17g sigma_sq=%.17g tau=%.17g "
                "mean_max_prob=%.17g",
                static_cast<long long>(r.epoch), static_cast<long long>(r.step),
                double(r.losses.mse), double(r.losses.corrcoef_pre),
                double(r.losses.corrcoef_post), double(r.losses.domain), double(r.losses.code),
                double(r.losses.xent), double(r.losses.total), double(r.sigma_sq),
                double(r.tau), double(r.mean_max_prob));
  return buf;
}

/// Parses one train_log line back into key->value form.
inline std::map<std::string, double> parse_record_line(const std::string& line) {
  std::map<std::string, double> out;
  std::istringstream iss(line);
  std::string field;
  while (iss >> field) {
    const size_t eq = field.find('=');
    if (eq == std::string::npos) continue;
    out[field.substr(0, eq)] = std::strtod(field.c_str() + eq + 1, nullptr);
  }
  return out;
}

template <typename T>
struct EvalResult {
  std::vector<double> iou;
  double miou = 0;
};

namespace detail {

template <typename T>
void pack_batch(const std::vector<Sample<T>>& samples, const std::vector<size_t>& order,
                size_t first, size_t count, Tensor<T>& images, Tensor<int32_t>& labels) {
  const int64_t H = samples[order[first]].image.dim(1);
  const int64_t W = samples[order[first]].image.dim(2);
  images = Tensor<T>({static_cast<int64_t>(count), 3, H, W});
  labels = Tensor<int32_t>({static_cast<int64_t>(count), H, W});
  for (size_t i = 0; i < count; ++i) {
    const Sample<T>& s = samples[order[first + i]];
    std::copy_n(s.image.data(), s.image.numel(), images.data() + i * 3 * H * W);
    std::copy_n(s.mask.data(), s.mask.numel(), labels.data() + i * H * W);
  }
}

}  // namespace detail

/// Noise-free evaluation over a sample list; dataset-level IoU.
template <typename T>
EvalResult<T> evaluate(Model<T>& model, const std::vector<Sample<T>>& samples, int64_t batch) {
  IouAccumulator acc(model.config().categories);
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (size_t i = 0; i < samples.size(); i += batch) {
    const size_t count = std::min<size_t>(batch, samples.size() - i);
    Tensor<T> images;
    Tensor<int32_t> labels;
    detail::pack_batch(samples, order, i, count, images, labels);
    Tape<T> tape;
    ParamBinder<T> bind(tape);
    ForwardOutput<T> out = model.forward(tape, bind, images, labels, Mode::kEval, nullptr);
    acc.add(out.pred, labels);
  }
  EvalResult<T> r;
  r.iou = acc.iou();
  r.miou = mean_iou(r.iou);
  return r;
}

struct TrainSummary {
  int64_t epochs_run = 0;
  double best_val_miou = -1.0;
  int64_t best_epoch = -1;
  std::string best_path, last_path, log_path;
  bool diverged = false;
  std::string divergence_term;
};

/// Single-writer training loop: per-epoch round-robin interleave across
/// domains, one Adam step per batch, per-step log record, per-epoch
/// validation with best-mIoU checkpointing. Divergence aborts and keeps
/// the last epoch checkpoint on disk.
template <typename T>
TrainSummary train_model(Model<T>& model, const std::vector<Sample<T>>& train_samples,
                         const std::vector<Sample<T>>& val_samples, const std::string& out_dir,
                         const std::string& meta_base, std::ostream* progress = nullptr) {
  const ModelConfig& cfg = model.config();
  if (train_samples.empty()) throw DataError("train: empty training split");
  std::filesystem::create_directories(out_dir);

  TrainSummary summary;
  summary.log_path = (std::filesystem::path(out_dir) / "train_log.txt").string();
  summary.best_path = (std::filesystem::path(out_dir) / "ckpt_best.dgq").string();
  summary.last_path = (std::filesystem::path(out_dir) / "ckpt_last.dgq").string();
  const std::string val_log_path = (std::filesystem::path(out_dir) / "val_log.txt").string();
  std::ofstream log(summary.log_path);
  std::ofstream val_log(val_log_path);
  if (!log || !val_log) throw DataError("train: cannot write logs under " + out_dir);

  // Domain groups in first-appearance order; shuffled per epoch.
  std::vector<std::string> domain_order;
  std::unordered_map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < train_samples.size(); ++i) {
    const std::string& d = train_samples[i].domain;
    if (!groups.count(d)) domain_order.push_back(d);
    groups[d].push_back(i);
  }

  std::vector<NamedParam<T>> params = model.named_params();
  std::vector<Tensor<T>*> param_ptrs;
  for (auto& p : params) param_ptrs.push_back(p.tensor);
  Adam<T> opt(cfg.lr);
  opt.attach(param_ptrs);

  std::mt19937_64 shuffle_rng = derive_rng(cfg.seed, 11);
  std::mt19937_64 noise_rng = derive_rng(cfg.seed, 12);

  auto save_meta = [&](int64_t epoch) {
    std::ostringstream m;
    m << meta_base;
    m << "epochs_trained=" << epoch << "\n";
    m << "best_val_miou=" << summary.best_val_miou << "\n";
    m << "best_epoch=" << summary.best_epoch << "\n";
    return m.str();
  };

  model.save_checkpoint(summary.last_path, save_meta(0));

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // round-robin interleave of per-domain shuffles
    std::vector<std::vector<size_t>> shuffled;
    for (const std::string& d : domain_order) {
      std::vector<size_t>& g = groups[d];
      std::vector<int64_t> perm = detail::seeded_permutation(g.size(), shuffle_rng);
      std::vector<size_t> s(g.size());
      for (size_t i = 0; i < g.size(); ++i) s[i] = g[perm[i]];
      shuffled.push_back(std::move(s));
    }
    std::vector<size_t> order;
    for (size_t round = 0; order.size() < train_samples.size(); ++round)
      for (const auto& g : shuffled)
        if (round < g.size()) order.push_back(g[round]);

    int64_t step = 0;
    for (size_t i = 0; i < order.size(); i += cfg.batch) {
      const size_t count = std::min<size_t>(cfg.batch, order.size() - i);
      Tensor<T> images;
      Tensor<int32_t> labels;
      detail::pack_batch(train_samples, order, i, count, images, labels);

      Tape<T> tape;
      ParamBinder<T> bind(tape);
      ForwardOutput<T> out;
      try {
        out = model.forward(tape, bind, images, labels, Mode::kTrain, &noise_rng);
      } catch (const NonFiniteLoss& e) {
        summary.diverged = true;
        summary.divergence_term = e.term;
        summary.epochs_run = epoch - 1;
        return summary;
      }
      tape.backward(out.total);

      std::unordered_map<const T*, Tensor<T>> grad_by_ptr;
      for (const auto& [ptr, var] : bind.bindings()) grad_by_ptr.emplace(ptr->data(), tape.grad(var));
      std::vector<Tensor<T>> grads;
      for (Tensor<T>* p : param_ptrs) {
        auto it = grad_by_ptr.find(p->data());
        grads.push_back(it != grad_by_ptr.end() ? it->second : Tensor<T>::zeros(p->dims()));
      }
      opt.step(grads, cfg.grad_clip);

      StepRecord<T> rec;
      rec.epoch = epoch;
      rec.step = ++step;
      rec.losses = out.losses;
      rec.sigma_sq = out.sigma_sq;
      rec.tau = out.tau;
      rec.mean_max_prob = out.mean_max_prob;
      log << format_step_record(rec) << "\n";
    }
    log.flush();

    double val_miou;
    if (!val_samples.empty()) {
      val_miou = evaluate(model, val_samples, cfg.batch).miou;
    } else {
      val_miou = 0.0;
    }
    const bool improved = val_samples.empty() || val_miou > summary.best_val_miou;
    if (improved) {
      summary.best_val_miou = val_miou;
      summary.best_epoch = epoch;
      model.save_checkpoint(summary.best_path, save_meta(epoch));
      if (!model.baseline())
        model.save_codebook((std::filesystem::path(out_dir) / "codebook.dgq").string());
    }
    model.save_checkpoint(summary.last_path, save_meta(epoch));
    char vbuf[128];
    std::snprintf(vbuf, sizeof(vbuf), "epoch=%lld val_miou=%.17g best=%d",
                  static_cast<long long>(epoch), val_miou, improved ? 1 : 0);
    val_log << vbuf << "\n";
    val_log.flush();
    if (progress)
      (*progress) << "epoch " << epoch << "/" << cfg.epochs << " val_miou=" << val_miou
                  << "\n";
    summary.epochs_run = epoch;
  }
  return summary;
}

}  // namespace dgquant
