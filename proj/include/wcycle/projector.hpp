#pragma once

#include "wcycle/losses.hpp"

namespace wcycle {

enum class LatentSpace { W, WPLUS };

inline const char* space_name(LatentSpace s) { return s == LatentSpace::W ? "W" : "W+"; }

// Per-image optimization baseline: gradient descent on the latent code and
// the per-layer noise maps under a perceptual objective plus noise
// regularization. The W+ variant optimizes every style row independently.
struct ProjectorConfig {
  LatentSpace space = LatentSpace::W;
  int steps = 300;
  double lr = 0.05;
  double lambda_noise = 0.01;
  double rampdown_fraction = 0.25;  // cosine ramp-down over the final quarter
  uint64_t seed = 1;
};

struct ProjectorResult {
  ExtendedStyleCode code;
  NoiseMaps noise;
  std::vector<double> trace;       // objective per step
  std::vector<double> best_trace;  // best-so-far, non-increasing
  double final_objective = 0;
};

template <typename T>
ProjectorResult optimize_latent(const Generator<T>& gen, const PerceptualNet<T>& lpips,
                                const StyleCode& w_center, const Image& x,
                                const ProjectorConfig& cfg) {
  int dw = gen.config().d_w;
  require(static_cast<int>(w_center.v.size()) == dw, "optimize_latent: bad center dim");
  int n_layers = gen.n_layers();
  Rng rng = Rng(cfg.seed).fork(0x0b7);

  ParamStore<T> leaves;
  std::vector<Var<T>> rows;
  if (cfg.space == LatentSpace::W) {
    auto w = leaves.add("w", {1, dw});
    for (int j = 0; j < dw; ++j) w.val()[j] = static_cast<T>(w_center.v[j]);
    rows.assign(n_layers, w);
  } else {
    for (int l = 0; l < n_layers; ++l) {
      auto w = leaves.add("w" + std::to_string(l), {1, dw});
      for (int j = 0; j < dw; ++j) w.val()[j] = static_cast<T>(w_center.v[j]);
      rows.push_back(w);
    }
  }
  std::vector<Var<T>> noise;
  for (auto [h, wd] : gen.noise_shapes()) {
    auto m = leaves.add("noise_" + std::to_string(noise.size()), {h, wd});
    for (auto& v : m.val()) v = static_cast<T>(rng.normal());
    noise.push_back(m);
  }

  auto target = image_to_var<T>(x);
  Adam<T> opt(leaves, cfg.lr);
  ProjectorResult result;

  auto objective = [&]() {
    auto img = gen.synthesize(rows, noise);
    auto loss = perceptual_loss(lpips, target, img);
    if (cfg.lambda_noise > 0)
      loss = ops::add(loss, ops::scale(noise_reg(noise), static_cast<T>(cfg.lambda_noise)));
    return loss;
  };

  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<T>> best_values;
  auto snapshot = [&] {
    best_values.clear();
    for (size_t i = 0; i < leaves.size(); ++i) best_values.push_back(leaves.param(i).val());
  };
  snapshot();

  for (int it = 0; it < cfg.steps; ++it) {
    auto loss = objective();
    double val = loss.item();
    require(std::isfinite(val), "optimize_latent: objective diverged at step " +
                                    std::to_string(it));
    result.trace.push_back(val);
    if (val < best) {
      best = val;
      snapshot();
    }
    result.best_trace.push_back(std::min(best, val));
    leaves.zero_grad();
    backward(loss);
    // constant step size with a cosine ramp-down tail
    double t = static_cast<double>(it) / std::max(1, cfg.steps);
    double f = cfg.rampdown_fraction;
    double ramp = 1.0;
    if (f > 0 && t > 1.0 - f) {
      double u = (t - (1.0 - f)) / f;
      ramp = 0.5 * (1.0 + std::cos(3.14159265358979323846 * u));
    }
    opt.step(cfg.lr * ramp);
  }
  if (cfg.steps > 0) {
    double final_val = objective().item();
    if (final_val < best) {
      best = final_val;
      snapshot();
    }
  } else {
    best = objective().item();
  }

  // restore the best-seen leaves and export them
  for (size_t i = 0; i < leaves.size(); ++i) leaves.param(i).val() = best_values[i];
  result.final_objective = best;

  StyleCode base;
  base.v.resize(dw);
  if (cfg.space == LatentSpace::W) {
    for (int j = 0; j < dw; ++j) base.v[j] = static_cast<double>(leaves.param(0).val()[j]);
    result.code = broadcast(base, n_layers);
  } else {
    std::vector<std::vector<double>> row_values;
    for (int l = 0; l < n_layers; ++l) {
      std::vector<double> row(dw);
      for (int j = 0; j < dw; ++j) row[j] = static_cast<double>(leaves.param(l).val()[j]);
      row_values.push_back(std::move(row));
    }
    result.code = code_from_rows(row_values);
  }
  auto shapes = gen.noise_shapes();
  for (size_t l = 0; l < noise.size(); ++l) {
    size_t li = leaves.size() - noise.size() + l;
    std::vector<double> m(leaves.param(li).val().begin(), leaves.param(li).val().end());
    result.noise.maps.push_back(std::move(m));
    result.noise.shapes.push_back(shapes[l]);
  }
  return result;
}

}  // namespace wcycle
