#pragma once

#include "wcycle/losses.hpp"

namespace wcycle {

// Pivotal tuning: fine-tune a per-image copy of the generator so that the
// fixed pivot code maps to the input image. Noise is held at zero.
struct TuningConfig {
  int iterations = 350;
  double lambda_l2 = 1.0;
  double lr = 3e-4;

  void validate() const {
    require(iterations >= 0, "tune: iterations must be >= 0");
    require(lambda_l2 >= 0, "tune: lambda_l2 must be >= 0");
  }
};

template <typename T>
struct PivotResult {
  ExtendedStyleCode pivot;
  std::string source;  // encoder | refined | optimized
  Generator<T> tuned;
  int iterations = 0;
  double initial_loss = 0;
  double final_loss = 0;
  std::vector<double> best_trace;  // best-so-far objective, non-increasing
};

template <typename T>
PivotResult<T> tune(const Image& x, const ExtendedStyleCode& pivot, const std::string& source,
                    const Generator<T>& gen, const PerceptualNet<T>& lpips,
                    const TuningConfig& cfg) {
  cfg.validate();
  require(pivot.n_layers() == gen.n_layers(), "tune: pivot layer count mismatch");
  PivotResult<T> result{.pivot = pivot, .source = source, .tuned = gen.clone()};
  auto& tuned = result.tuned;
  tuned.unfreeze();
  result.iterations = cfg.iterations;

  auto target = image_to_var<T>(x);
  auto code = code_to_batch<T>(pivot);  // constants, never updated here
  Adam<T> opt(tuned.params(), cfg.lr);

  auto objective = [&] {
    auto img = tuned.synthesize(code);
    auto loss = perceptual_loss(lpips, target, img);
    if (cfg.lambda_l2 > 0)
      loss = ops::add(loss, ops::scale(l2_loss(target, img), static_cast<T>(cfg.lambda_l2)));
    return loss;
  };

  double best = objective().item();
  result.initial_loss = best;
  result.best_trace.push_back(best);
  Generator<T> best_params = tuned.clone();

  for (int it = 0; it < cfg.iterations; ++it) {
    auto loss = objective();
    double val = loss.item();
    if (!std::isfinite(val)) break;  // return best-so-far on divergence
    if (val < best) {
      best = val;
      best_params.params().copy_values_from(tuned.params());
    }
    result.best_trace.push_back(best);
    tuned.params().zero_grad();
    backward(loss);
    opt.step();
  }
  {
    double val = objective().item();
    if (std::isfinite(val) && val < best) {
      best = val;
      best_params.params().copy_values_from(tuned.params());
    }
  }
  tuned.params().copy_values_from(best_params.params());
  tuned.freeze();
  result.final_loss = best;
  return result;
}

}  // namespace wcycle
