#pragma once

#include <Eigen/Cholesky>

#include "wcycle/generator.hpp"
#include "wcycle/losses.hpp"
#include "wcycle/regressor.hpp"

namespace wcycle {

// a unit direction in W tied to a named generative factor
struct EditDirection {
  std::string name;
  std::vector<double> v;

  int dim() const { return static_cast<int>(v.size()); }

  void validate() const {
    double ss = 0;
    for (double x : v) ss += x * x;
    require(std::abs(std::sqrt(ss) - 1.0) <= 1e-9, "direction: not unit norm");
  }
};

// linear latent edit: w + alpha * n; for extended codes the direction is
// added to the base and thereby every row
inline StyleCode edit(const StyleCode& code, const EditDirection& dir, double alpha) {
  require(code.dim() == dir.dim(), "edit: dimension mismatch");
  StyleCode out = code;
  for (int j = 0; j < code.dim(); ++j) out.v[j] += alpha * dir.v[j];
  return out;
}

inline ExtendedStyleCode edit(const ExtendedStyleCode& code, const EditDirection& dir,
                              double alpha) {
  ExtendedStyleCode out = code;
  out.base = edit(code.base, dir, alpha);
  return out;
}

// Fully-supervised direction discovery: regress the factor reading of
// synthesized samples against their W codes (ridge regression), and return
// the normalized coefficient vector.
template <typename T>
EditDirection find_direction(const Generator<T>& gen, const FactorRegressor<T>& reg,
                             const std::string& factor, int n_samples, uint64_t seed,
                             double ridge = 1e-3) {
  require(reg.trained(), "find_direction: factor regressor not trained");
  int dw = gen.config().d_w;
  Rng rng = Rng(seed).fork(0xd12);
  Eigen::MatrixXd X(n_samples, dw);
  Eigen::VectorXd y(n_samples);
  int chunk = 64;
  int done = 0;
  while (done < n_samples) {
    int b = std::min(chunk, n_samples - done);
    auto z = Var<T>::leaf({b, gen.config().d_z}, false);
    for (auto& v : z.val()) v = static_cast<T>(rng.normal());
    auto w = gen.map(z);
    auto img = gen.synthesize_w(w);
    std::vector<Image> imgs;
    for (int i = 0; i < b; ++i) imgs.push_back(var_to_image(img, i));
    auto preds = reg.predict_batch(imgs);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < dw; ++j) X(done + i, j) = w.val()[i * dw + j];
      y(done + i) = reg.factor_of(preds[i], factor);
    }
    done += b;
  }
  // center, then ridge-regress
  Eigen::RowVectorXd x_mean = X.colwise().mean();
  X.rowwise() -= x_mean;
  double y_mean = y.mean();
  y.array() -= y_mean;
  double y_std = std::sqrt(y.squaredNorm() / n_samples);
  require(y_std > 1e-6, "find_direction: degenerate factor '" + factor + "' (zero variance)");
  Eigen::MatrixXd A = X.transpose() * X / n_samples;
  A.diagonal().array() += ridge;
  Eigen::VectorXd coef = A.ldlt().solve(X.transpose() * y / n_samples);
  double norm = coef.norm();
  require(norm > 1e-12, "find_direction: degenerate direction for '" + factor + "'");
  EditDirection dir;
  dir.name = factor;
  dir.v.resize(dw);
  for (int j = 0; j < dw; ++j) dir.v[j] = coef(j) / norm;
  dir.validate();
  return dir;
}

inline double direction_cosine(const EditDirection& a, const EditDirection& b) {
  require(a.dim() == b.dim(), "direction_cosine: dimension mismatch");
  double dot = 0;
  for (int j = 0; j < a.dim(); ++j) dot += static_cast<double>(a.v[j]) * b.v[j];
  return dot;
}

// A finished inversion: the code plus the generator it should be rendered
// through (the tuned copy when the pipeline includes pivotal tuning).
template <typename T>
struct InvertedImage {
  Image input;
  ExtendedStyleCode code;
  const Generator<T>* generator = nullptr;  // non-owning, outlives the metric call
};

template <typename T>
Image render_edit(const InvertedImage<T>& inv, const EditDirection& dir, double alpha) {
  return inv.generator->synthesize_image(edit(inv.code, dir, alpha));
}

// mean |factor(after) - factor(before)| when applying the same editing weight
template <typename T>
double editing_magnitude(const std::vector<InvertedImage<T>>& inversions,
                         const EditDirection& dir, double alpha,
                         const FactorRegressor<T>& reg, const std::string& factor) {
  require(reg.trained(), "editing_magnitude: factor regressor not trained");
  require(!inversions.empty(), "editing_magnitude: no inversions");
  double acc = 0;
  for (const auto& inv : inversions) {
    auto before = reg.predict(inv.generator->synthesize_image(inv.code));
    auto after = reg.predict(render_edit(inv, dir, alpha));
    acc += std::abs(reg.factor_of(after, factor) - reg.factor_of(before, factor));
  }
  return acc / inversions.size();
}

struct PreservationResult {
  double mean_similarity = 0;
  int evaluated = 0;
  int skipped = 0;  // images whose edit could not reach the target magnitude
};

// Identity similarity at a fixed editing magnitude. The per-image weight is
// solved by bisection so the regressed factor change hits the target within
// 5%; both edit signs contribute. Unreachable targets are skipped and
// counted.
template <typename T>
PreservationResult identity_preservation(const std::vector<InvertedImage<T>>& inversions,
                                         const EditDirection& dir, double target_magnitude,
                                         const IdentityEmbedder<T>& embedder,
                                         const FactorRegressor<T>& reg,
                                         const std::string& factor, double alpha_max = 20.0,
                                         int max_bisect = 20) {
  require(embedder.trained(), "identity_preservation: identity embedder not trained");
  PreservationResult result;
  double sum = 0;
  auto similarity = [&](const Image& a, const Image& b) {
    auto ea = ops::l2_normalize_rows(embedder.embed(image_to_var<T>(a)));
    auto eb = ops::l2_normalize_rows(embedder.embed(image_to_var<T>(b)));
    return static_cast<double>(ops::rowwise_dot(ea, eb).val()[0]);
  };
  for (const auto& inv : inversions) {
    double f0 = reg.factor_of(reg.predict(inv.generator->synthesize_image(inv.code)), factor);
    for (double sign : {1.0, -1.0}) {
      if (target_magnitude == 0) {
        sum += similarity(inv.input, inv.generator->synthesize_image(inv.code));
        result.evaluated += 1;
        continue;
      }
      auto magnitude_at = [&](double alpha) {
        auto p = reg.predict(render_edit(inv, dir, sign * alpha));
        return std::abs(reg.factor_of(p, factor) - f0);
      };
      double lo = 0, hi = alpha_max;
      if (magnitude_at(hi) < target_magnitude) {
        result.skipped += 1;
        continue;
      }
      double alpha = hi;
      for (int i = 0; i < max_bisect; ++i) {
        alpha = 0.5 * (lo + hi);
        double m = magnitude_at(alpha);
        if (std::abs(m - target_magnitude) <= 0.05 * target_magnitude) break;
        if (m < target_magnitude)
          lo = alpha;
        else
          hi = alpha;
      }
      sum += similarity(inv.input, render_edit(inv, dir, sign * alpha));
      result.evaluated += 1;
    }
  }
  require(result.evaluated > 0, "identity_preservation: every image was skipped");
  result.mean_similarity = sum / result.evaluated;
  return result;
}

}  // namespace wcycle
