#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "wcycle/image.hpp"
#include "wcycle/rng.hpp"

namespace wcycle {

inline constexpr const char* kRendererVersion = "blobs-v1";
inline constexpr int kNumIdentities = 10;

// Generative factors of one synthetic image. Ranges accepted by render():
//   identity in [0, 10), x/y in [-0.4, 0.4], rotation in [-pi, pi],
//   scale in [0.55, 1.05], hue in [0, 1).
// Dataset sampling stays inside narrower ranges (see generate_dataset) so
// every factor is recoverable without wrap-around ambiguity.
struct Factors {
  int identity = 0;
  double x = 0, y = 0;
  double rotation = 0;  // radians
  double scale = 0.8;
  double hue = 0.0;
};

struct FactorRanges {
  double pos = 0.3;          // |x|, |y| sampling bound
  double rot = 0.6283185307179586;  // pi/5 sampling bound
  double scale_lo = 0.6, scale_hi = 1.0;
  double hue_hi = 0.75;
};

namespace detail {

// Per-identity radial profile r(phi) = base * (1 + sum_m a_m cos(m phi + p_m)).
// Identity 0 is exactly 4-fold symmetric; the rest are irregular so that
// orientation is recoverable. Coefficients are fixed by the renderer
// version, not by any run seed.
struct IdentityProfile {
  double amp[6] = {0, 0, 0, 0, 0, 0};    // harmonics m = 1..5 at amp[1..5]
  double phase[6] = {0, 0, 0, 0, 0, 0};
};

inline const IdentityProfile& identity_profile(int id) {
  static const std::vector<IdentityProfile> profiles = [] {
    std::vector<IdentityProfile> ps(kNumIdentities);
    ps[0].amp[4] = 0.18;  // square-ish, rotation by pi/2 is an exact symmetry
    Rng rng(0x57a71cBA5Eull);
    // distinct dominant harmonic per identity keeps the classes separable
    const int dominant[10] = {4, 1, 2, 3, 5, 1, 2, 3, 5, 1};
    const double dom_amp[10] = {0.18, 0.24, 0.22, 0.20, 0.16, 0.14, 0.13, 0.30, 0.26, 0.33};
    for (int id = 1; id < kNumIdentities; ++id) {
      auto& p = ps[id];
      p.amp[dominant[id]] = dom_amp[id];
      for (int m = 1; m <= 5; ++m) {
        if (m != dominant[id]) p.amp[m] = rng.uniform(0.02, 0.08);
        p.phase[m] = rng.uniform(0.0, 6.283185307179586);
      }
      if (dominant[id] != 1 && p.amp[1] < 0.06) p.amp[1] = 0.1;  // keep orientation visible
    }
    return ps;
  }();
  return profiles[id];
}

inline double radial_profile(int identity, double phi) {
  const auto& p = identity_profile(identity);
  double r = 1.0;
  for (int m = 1; m <= 5; ++m)
    if (p.amp[m] != 0.0) r += p.amp[m] * std::cos(m * phi + p.phase[m]);
  return r;
}

inline void hsv_to_rgb(double hue, double s, double v, double rgb[3]) {
  double h6 = hue * 6.0;
  int i = static_cast<int>(h6) % 6;
  double f = h6 - std::floor(h6);
  double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (i) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

}  // namespace detail

// Deterministic anti-aliased rendering of the blob identity with the given
// pose and color. Same factors always produce bit-identical images.
inline Image render(const Factors& f, int res = 32) {
  require(f.identity >= 0 && f.identity < kNumIdentities, "render: identity out of range");
  require(std::abs(f.x) <= 0.4 && std::abs(f.y) <= 0.4, "render: position out of range");
  require(std::abs(f.rotation) <= 3.14159265358979323846 + 1e-9,
          "render: rotation out of range");
  require(f.scale >= 0.55 && f.scale <= 1.05, "render: scale out of range");
  require(f.hue >= 0.0 && f.hue < 1.0, "render: hue out of range");

  double rgb[3];
  detail::hsv_to_rgb(f.hue, 0.85, 0.9, rgb);
  const double bg = -0.85;
  const double base_radius = 0.48 * f.scale;
  const double edge = 2.4 / res;  // anti-alias band, ~1.2 px

  Image img(3, res, res, static_cast<float>(bg));
  for (int py = 0; py < res; ++py) {
    double v = (py + 0.5) * 2.0 / res - 1.0;
    for (int px = 0; px < res; ++px) {
      double u = (px + 0.5) * 2.0 / res - 1.0;
      double dx = u - f.x, dy = v - f.y;
      double rho = std::sqrt(dx * dx + dy * dy);
      double phi = std::atan2(dy, dx) - f.rotation;
      double rr = base_radius * detail::radial_profile(f.identity, phi);
      double cov = 0.5 + (rr - rho) / edge;
      cov = std::min(1.0, std::max(0.0, cov));
      if (cov <= 0.0) continue;
      for (int ci = 0; ci < 3; ++ci) {
        double fill = rgb[ci] * 2.0 - 1.0;
        img.at(ci, py, px) = static_cast<float>(bg + cov * (fill - bg));
      }
    }
  }
  return img;
}

// Synthetic dataset: factor tuples are stored, images render on demand.
class FactorDataset {
 public:
  FactorDataset() = default;
  FactorDataset(std::vector<Factors> factors, uint64_t seed, int res)
      : factors_(std::move(factors)), seed_(seed), res_(res) {
    make_split();
  }

  size_t size() const { return factors_.size(); }
  int resolution() const { return res_; }
  uint64_t seed() const { return seed_; }
  const Factors& factors(size_t i) const { return factors_[i]; }
  Image image(size_t i) const { return render(factors_[i], res_); }

  const std::vector<size_t>& train_indices() const { return train_idx_; }
  const std::vector<size_t>& holdout_indices() const { return holdout_idx_; }

  std::vector<Image> batch(const std::vector<size_t>& idx) const {
    std::vector<Image> out;
    out.reserve(idx.size());
    for (size_t i : idx) out.push_back(image(i));
    return out;
  }

  // deterministic batch order under a caller-owned rng
  std::vector<size_t> sample_train(Rng& rng, int n) const {
    std::vector<size_t> out(n);
    for (int i = 0; i < n; ++i) out[i] = train_idx_[rng.index(train_idx_.size())];
    return out;
  }

 private:
  void make_split() {
    std::vector<size_t> order(factors_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng = Rng(seed_).fork(0x5b717);
    split_rng.shuffle(order.begin(), order.end());
    size_t holdout = factors_.size() / 10;
    holdout_idx_.assign(order.begin(), order.begin() + holdout);
    train_idx_.assign(order.begin() + holdout, order.end());
  }

  std::vector<Factors> factors_;
  uint64_t seed_ = 0;
  int res_ = 32;
  std::vector<size_t> train_idx_, holdout_idx_;
};

inline FactorDataset generate_dataset(size_t n, uint64_t seed, int res = 32,
                                      FactorRanges ranges = {}) {
  Rng rng = Rng(seed).fork(0xda7a);
  std::vector<Factors> fs;
  fs.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Factors f;
    f.identity = static_cast<int>(rng.index(kNumIdentities));
    f.x = rng.uniform(-ranges.pos, ranges.pos);
    f.y = rng.uniform(-ranges.pos, ranges.pos);
    f.rotation = rng.uniform(-ranges.rot, ranges.rot);
    f.scale = rng.uniform(ranges.scale_lo, ranges.scale_hi);
    f.hue = rng.uniform(0.0, ranges.hue_hi);
    fs.push_back(f);
  }
  return FactorDataset(std::move(fs), seed, res);
}

// Folder ingestion for user-supplied corpora. Unreadable files are skipped
// with a warning on stderr.
inline std::vector<Image> ingest_folder(const std::string& path, int res = 32,
                                        std::vector<std::string>* names = nullptr) {
  namespace fs = std::filesystem;
  require(fs::is_directory(path), "ingest_folder: not a directory: " + path);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& f : files) {
    try {
      out.push_back(resize_bilinear(read_png(f), res, res));
      if (names) names->push_back(f);
    } catch (const std::exception& e) {
      std::cerr << "ingest_folder: skipping " << f << ": " << e.what() << "\n";
    }
  }
  return out;
}

inline void save_dataset(const std::string& dir, const FactorDataset& ds,
                         bool with_png = false) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream csv(dir + "/factors.csv");
    require(csv.good(), "save_dataset: cannot write factors.csv");
    csv << "index,identity,x,y,rotation,scale,hue\n";
    char buf[256];
    for (size_t i = 0; i < ds.size(); ++i) {
      const auto& f = ds.factors(i);
      std::snprintf(buf, sizeof(buf), "%zu,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, f.identity,
                    f.x, f.y, f.rotation, f.scale, f.hue);
      csv << buf;
    }
  }
  if (with_png) {
    fs::create_directories(dir + "/png");
    char name[64];
    for (size_t i = 0; i < ds.size(); ++i) {
      std::snprintf(name, sizeof(name), "/png/%06zu.png", i);
      write_png(dir + name, ds.image(i));
    }
  }
}

inline FactorDataset load_dataset_csv(const std::string& csv_path, uint64_t seed, int res) {
  std::ifstream csv(csv_path);
  require(csv.good(), "load_dataset_csv: cannot read " + csv_path);
  std::string line;
  std::getline(csv, line);  // header
  std::vector<Factors> fs;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    Factors f;
    size_t idx;
    if (std::sscanf(line.c_str(), "%zu,%d,%lg,%lg,%lg,%lg,%lg", &idx, &f.identity, &f.x, &f.y,
                    &f.rotation, &f.scale, &f.hue) != 7)
      throw std::runtime_error("load_dataset_csv: malformed row: " + line);
    fs.push_back(f);
  }
  return FactorDataset(std::move(fs), seed, res);
}

}  // namespace wcycle
