#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgquant/imageio.hpp"
#include "dgquant/tensor.hpp"

namespace dgquant {

namespace fs = std::filesystem;

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplePath {
  std::string stem;
  std::string image;
  std::string mask;
};

struct DomainDataset {
  std::string name;
  std::vector<SamplePath> pairs;
  int64_t num_classes = 2;
};

struct SampleRef {
  std::string domain;
  SamplePath paths;
};

struct DatasetSplit {
  std::vector<SampleRef> train, validation, test;
  std::string holdout;
  int64_t fold = 0;
};

template <typename T>
struct Sample {
  Tensor<T> image;        // [3,H,W]
  Tensor<int32_t> mask;   // [H,W]
  std::string domain;
  std::string stem;
};

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Directory ingestion. Layout: root/<domain>/images/*.png|jpg and
// root/<domain>/masks/*.png, paired by stem.

inline DomainDataset load_domain(const std::string& dir, int64_t num_classes) {
  const fs::path root(dir);
  const fs::path images_dir = root / "images";
  const fs::path masks_dir = root / "masks";
  if (!fs::is_directory(images_dir))
    throw DataError("load_domain: missing directory " + images_dir.string());
  if (!fs::is_directory(masks_dir))
    throw DataError("load_domain: missing directory " + masks_dir.string());

  auto lower_ext = [](const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e;
  };

  std::map<std::string, std::string> images;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = lower_ext(entry.path());
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
    images[entry.path().stem().string()] = entry.path().string();
  }
  std::map<std::string, std::string> masks;
  for (const auto& entry : fs::directory_iterator(masks_dir)) {
    if (!entry.is_regular_file()) continue;
    if (lower_ext(entry.path()) != ".png") continue;
    masks[entry.path().stem().string()] = entry.path().string();
  }

  for (const auto& [stem, path] : images)
    if (!masks.count(stem)) throw DataError("load_domain: no mask for image " + path);
  for (const auto& [stem, path] : masks)
    if (!images.count(stem)) throw DataError("load_domain: no image for mask " + path);
  if (images.empty()) throw DataError("load_domain: no images in " + images_dir.string());

  DomainDataset ds;
  ds.name = root.filename().string();
  ds.num_classes = num_classes;
  for (const auto& [stem, img_path] : images) {
    const std::string& mask_path = masks.at(stem);
    const Tensor<int32_t> m = read_mask(mask_path);
    for (int64_t i = 0; i < m.numel(); ++i)
      if (m.at(i) >= num_classes)
        throw DataError("load_domain: mask " + mask_path + " contains value " +
                        std::to_string(m.at(i)) + " >= K=" + std::to_string(num_classes));
    cv::Mat probe = cv::imread(img_path, cv::IMREAD_COLOR);
    if (probe.empty()) throw DataError("load_domain: unreadable image " + img_path);
    ds.pairs.push_back({stem, img_path, mask_path});
  }
  return ds;  // std::map iteration already sorted by stem
}

/// Materializes pixels at the configured size: bilinear for images,
/// nearest-neighbor for masks.
template <typename T>
Sample<T> load_sample(const SampleRef& ref, int64_t size) {
  Sample<T> s;
  s.image = resize_image(read_image01<T>(ref.paths.image), size, size);
  s.mask = resize_mask(read_mask(ref.paths.mask), size, size);
  s.domain = ref.domain;
  s.stem = ref.paths.stem;
  return s;
}

template <typename T>
std::vector<Sample<T>> load_samples(const std::vector<SampleRef>& refs, int64_t size) {
  std::vector<Sample<T>> out;
  out.reserve(refs.size());
  for (const SampleRef& r : refs) out.push_back(load_sample<T>(r, size));
  return out;
}

// ---------------------------------------------------------------------------
// Leave-one-domain-out + k-fold splitting.

namespace detail {

inline std::vector<int64_t> seeded_permutation(int64_t n, std::mt19937_64& rng) {
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = static_cast<int64_t>(uniform01(rng) * (i + 1));
    std::swap(idx[i], idx[std::min(j, i)]);
  }
  return idx;
}

}  // namespace detail

/// For each held-out domain and each fold: train on the other domains'
/// (folds-1)/folds portions, validate on their remaining portions, test
/// on the held-out domain's fold portion. An optional per-domain cap
/// subsamples larger domains reproducibly before splitting.
inline std::vector<DatasetSplit> make_lodo_splits(const std::vector<DomainDataset>& domains,
                                                  int64_t folds, int64_t cap, uint64_t seed) {
  if (domains.size() < 2) throw DataError("make_lodo_splits: need at least 2 domains");
  if (folds < 2) throw DataError("make_lodo_splits: folds must be >= 2");

  struct DomainChunks {
    std::string name;
    std::vector<std::vector<SampleRef>> chunk;  // per fold
    std::vector<SampleRef> all;
  };
  std::vector<DomainChunks> prepared;
  for (const DomainDataset& d : domains) {
    std::vector<int64_t> active(d.pairs.size());
    std::iota(active.begin(), active.end(), 0);
    if (cap > 0 && static_cast<int64_t>(active.size()) > cap) {
      std::mt19937_64 cap_rng = derive_rng(seed, fnv1a(d.name) ^ 0xCA9ULL);
      std::vector<int64_t> perm = detail::seeded_permutation(active.size(), cap_rng);
      perm.resize(cap);
      std::sort(perm.begin(), perm.end());
      active = perm;
    }
    if (static_cast<int64_t>(active.size()) < folds)
      throw DataError("make_lodo_splits: domain '" + d.name + "' has " +
                      std::to_string(active.size()) + " samples, fewer than folds=" +
                      std::to_string(folds));
    std::mt19937_64 fold_rng = derive_rng(seed, fnv1a(d.name) ^ 0xF01DULL);
    std::vector<int64_t> perm = detail::seeded_permutation(active.size(), fold_rng);
    DomainChunks dc;
    dc.name = d.name;
    dc.chunk.resize(folds);
    for (size_t i = 0; i < perm.size(); ++i) {
      const SamplePath& p = d.pairs[active[perm[i]]];
      dc.chunk[i % folds].push_back({d.name, p});
    }
    for (auto& ch : dc.chunk)
      std::sort(ch.begin(), ch.end(),
                [](const SampleRef& a, const SampleRef& b) { return a.paths.stem < b.paths.stem; });
    for (int64_t i : active) dc.all.push_back({d.name, d.pairs[i]});
    prepared.push_back(std::move(dc));
  }

  std::vector<DatasetSplit> splits;
  for (size_t h = 0; h < prepared.size(); ++h) {
    for (int64_t f = 0; f < folds; ++f) {
      DatasetSplit sp;
      sp.holdout = prepared[h].name;
      sp.fold = f;
      sp.test = prepared[h].chunk[f];
      for (size_t d = 0; d < prepared.size(); ++d) {
        if (d == h) continue;
        for (int64_t g = 0; g < folds; ++g) {
          const auto& ch = prepared[d].chunk[g];
          auto& dst = (g == f) ? sp.validation : sp.train;
          dst.insert(dst.end(), ch.begin(), ch.end());
        }
      }
      splits.push_back(std::move(sp));
    }
  }
  return splits;
}

/// Fixed-count split of a single domain (train / validation / remainder
/// as test), for protocols with a prescribed split instead of LODO.
inline DatasetSplit make_fixed_split(const DomainDataset& domain, int64_t n_train,
                                     int64_t n_val, uint64_t seed) {
  const int64_t n = static_cast<int64_t>(domain.pairs.size());
  if (n_train < 1 || n_val < 1 || n_train + n_val >= n)
    throw DataError("make_fixed_split: need n_train + n_val < dataset size with both >= 1");
  std::mt19937_64 rng = derive_rng(seed, fnv1a(domain.name) ^ 0xF15EDULL);
  std::vector<int64_t> perm = detail::seeded_permutation(n, rng);
  DatasetSplit sp;
  sp.holdout = domain.name;
  sp.fold = 0;
  for (int64_t i = 0; i < n; ++i) {
    const SampleRef ref{domain.name, domain.pairs[perm[i]]};
    if (i < n_train) sp.train.push_back(ref);
    else if (i < n_train + n_val) sp.validation.push_back(ref);
    else sp.test.push_back(ref);
  }
  auto by_stem = [](const SampleRef& a, const SampleRef& b) {
    return a.paths.stem < b.paths.stem;
  };
  std::sort(sp.train.begin(), sp.train.end(), by_stem);
  std::sort(sp.validation.begin(), sp.validation.end(), by_stem);
  std::sort(sp.test.begin(), sp.test.end(), by_stem);
  return sp;
}

// ---------------------------------------------------------------------------
// Synthetic multi-domain generator: vessel-like curves (label 1) on a
// textured background (label 0). Mask structure depends only on the
// structure seed and sample index; per-domain parameters shift appearance
// of the images, never the masks.

struct SynthDomainSpec {
  std::string name;
  double hue_shift = 0.0;      // channel-mixing strength
  double contrast_gain = 1.0;  // scaling of luminance variation
  double noise_amp = 0.02;     // additive texture-noise stddev
  double tint[3] = {0.5, 0.5, 0.5};
  uint64_t structure_seed = 0;  // same for every domain of one corpus
};

inline std::vector<SynthDomainSpec> make_default_specs(int64_t n_domains,
                                                       uint64_t structure_seed) {
  if (n_domains < 2) throw DataError("synthetic corpus needs at least 2 domains");
  std::vector<SynthDomainSpec> specs;
  for (int64_t d = 0; d < n_domains; ++d) {
    SynthDomainSpec s;
    s.name = "domain" + std::string(1, static_cast<char>('a' + d));
    const double u = n_domains > 1 ? double(d) / double(n_domains - 1) : 0.0;
    const double base = 0.32 + 0.42 * u;
    s.tint[0] = base + 0.08 * (d % 3 == 0 ? 1 : 0);
    s.tint[1] = base + 0.05 * (d % 3 == 1 ? 1 : 0);
    s.tint[2] = base + 0.08 * (d % 3 == 2 ? 1 : 0) - 0.03;
    s.hue_shift = -0.20 + 0.20 * double(d % 3);
    s.contrast_gain = 0.75 + 0.45 * double((d + 1) % 3) / 2.0;
    s.noise_amp = 0.012 + 0.018 * double(d % 3) / 2.0;
    s.structure_seed = structure_seed;
    specs.push_back(s);
  }
  return specs;
}

namespace detail {

inline Tensor<int32_t> synth_mask(int64_t size, std::mt19937_64& rng) {
  Tensor<int32_t> mask({size, size});
  const double target = 0.04 + 0.08 * uniform01(rng);
  int64_t painted = 0;
  const int64_t total = size * size;
  int curves = 0;
  while ((double(painted) / double(total) < target && curves < 12) || curves < 2) {
    ++curves;
    double x = uniform01(rng) * size;
    double y = uniform01(rng) * size;
    double theta = uniform01(rng) * 2.0 * 3.14159265358979323846;
    const int64_t steps = static_cast<int64_t>((0.8 + 0.8 * uniform01(rng)) * double(size));
    const double radius = 0.6 + 0.9 * uniform01(rng);
    for (int64_t s = 0; s < steps; ++s) {
      theta += 0.16 * normal01(rng);
      x += std::cos(theta);
      y += std::sin(theta);
      if (x < 1 || y < 1 || x >= size - 1 || y >= size - 1) break;
      const int64_t r = static_cast<int64_t>(std::ceil(radius));
      for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx) {
          const int64_t py = static_cast<int64_t>(y) + dy;
          const int64_t px = static_cast<int64_t>(x) + dx;
          if (py < 0 || px < 0 || py >= size || px >= size) continue;
          const double dd = double(dy) * dy + double(dx) * dx;
          if (dd <= radius * radius && mask.at(py * size + px) == 0) {
            mask.at(py * size + px) = 1;
            ++painted;
          }
        }
    }
  }
  return mask;
}

struct StructureParams {
  double amp[3], fx[3], fy[3], phase[3];
  double vessel_strength;
};

inline StructureParams synth_structure_params(std::mt19937_64& rng) {
  StructureParams p;
  for (int k = 0; k < 3; ++k) {
    p.amp[k] = (0.5 + 0.5 * uniform01(rng)) / 3.0;
    p.fx[k] = 0.7 + 1.5 * uniform01(rng);
    p.fy[k] = 0.7 + 1.5 * uniform01(rng);
    p.phase[k] = uniform01(rng) * 2.0 * 3.14159265358979323846;
  }
  p.vessel_strength = 0.85 + 0.3 * uniform01(rng);
  return p;
}

template <typename T>
Tensor<T> synth_image(const Tensor<int32_t>& mask, const StructureParams& sp,
                      const SynthDomainSpec& spec, std::mt19937_64& domain_rng) {
  const int64_t size = mask.dim(0);
  const int64_t hw = size * size;
  Tensor<T> img({3, size, size});

  Tensor<double> soft({size, size});
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      double acc = 0;
      int cnt = 0;
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t py = y + dy, px = x + dx;
          if (py < 0 || px < 0 || py >= size || px >= size) continue;
          acc += mask.at(py * size + px);
          ++cnt;
        }
      soft.at(y * size + x) = acc / cnt;
    }

  static const double vessel_shift[3] = {0.12, 0.28, 0.12};
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      double field = 0;
      for (int k = 0; k < 3; ++k)
        field += sp.amp[k] * std::sin(2.0 * 3.14159265358979323846 *
                                          (sp.fx[k] * x + sp.fy[k] * y) / double(size) +
                                      sp.phase[k]);
      const double lum = spec.contrast_gain * 0.28 * field;
      const double v = soft.at(y * size + x) * sp.vessel_strength;
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = spec.tint[c] + lum - v * vessel_shift[c];
      const double h = spec.hue_shift;
      double mixed[3] = {rgb[0] + h * (rgb[1] - rgb[0]), rgb[1],
                         rgb[2] - h * (rgb[1] - rgb[2])};
      for (int c = 0; c < 3; ++c) {
        mixed[c] += spec.noise_amp * normal01(domain_rng);
        img.at(c * hw + y * size + x) = static_cast<T>(std::clamp(mixed[c], 0.0, 1.0));
      }
    }
  return img;
}

}  // namespace detail

/// Writes `count` samples per domain under out_dir/<domain>/{images,masks}
/// and returns the loaded datasets. Masks are identical across domains;
/// only image appearance varies per spec.
inline std::vector<DomainDataset> generate_synthetic(const std::string& out_dir,
                                                     const std::vector<SynthDomainSpec>& specs,
                                                     int64_t count, int64_t size,
                                                     uint64_t seed) {
  if (specs.size() < 2) throw DataError("generate_synthetic: need at least 2 domain specs");
  for (const SynthDomainSpec& s : specs)
    if (s.structure_seed != specs[0].structure_seed)
      throw DataError("generate_synthetic: all specs must share one structure seed");

  for (const SynthDomainSpec& spec : specs) {
    fs::create_directories(fs::path(out_dir) / spec.name / "images");
    fs::create_directories(fs::path(out_dir) / spec.name / "masks");
  }
  for (int64_t i = 0; i < count; ++i) {
    std::mt19937_64 structure_rng =
        derive_rng(seed ^ specs[0].structure_seed, 0x57121C7ULL + static_cast<uint64_t>(i));
    const Tensor<int32_t> mask = detail::synth_mask(size, structure_rng);
    const detail::StructureParams sp = detail::synth_structure_params(structure_rng);
    char stem[16];
    std::snprintf(stem, sizeof(stem), "%04lld", static_cast<long long>(i));
    for (size_t d = 0; d < specs.size(); ++d) {
      std::mt19937_64 domain_rng =
          derive_rng(seed, 0xD0E5ULL + 10007ULL * d + static_cast<uint64_t>(i));
      const Tensor<float> img = detail::synth_image<float>(mask, sp, specs[d], domain_rng);
      const fs::path base = fs::path(out_dir) / specs[d].name;
      write_image01((base / "images" / (std::string(stem) + ".png")).string(), img);
      write_mask((base / "masks" / (std::string(stem) + ".png")).string(), mask);
    }
  }
  std::vector<DomainDataset> out;
  for (const SynthDomainSpec& spec : specs)
    out.push_back(load_domain((fs::path(out_dir) / spec.name).string(), 2));
  return out;
}

}  // namespace dgquant
