#pragma once

#include "wcycle/encoder.hpp"
#include "wcycle/projector.hpp"
#include "wcycle/trainer.hpp"

namespace wcycle {

// Optimization-based refinement of the pivot: update a per-image clone of
// the encoder towards the input while regularizing with freshly sampled
// training images, then read the pivot back out of the refined clone.
struct RefinementConfig {
  int iterations = 15;
  int m_samples = 7;        // regularization sample count M
  double lambda_reg = 1.0;
  LatentSpace space = LatentSpace::WPLUS;
  double lr = 1e-4;
  bool resample_each_iteration = true;  // fresh M images per iteration
  uint64_t seed = 1;
  LossWeights weights;

  void validate() const {
    require(iterations >= 0, "refine: iterations must be >= 0");
    require(m_samples >= 0, "refine: M must be >= 0");
    weights.validate();
  }
};

template <typename T>
struct RefinementResult {
  ExtendedStyleCode pivot;
  Encoder<T> refined;
  std::vector<double> trace;  // L_S(x) before each step, then after the last
};

template <typename T>
RefinementResult<T> refine(const Image& x, const Encoder<T>& encoder, const Generator<T>& gen,
                           const PerceptualNet<T>& lpips, const IdentityEmbedder<T>& identity,
                           const FactorDataset& ds, const RefinementConfig& cfg) {
  cfg.validate();
  require(cfg.m_samples == 0 || cfg.lambda_reg == 0 || !ds.train_indices().empty(),
          "refine: regularization requires a training set");

  RefinementResult<T> result{.pivot = {}, .refined = encoder.clone()};
  auto& clone = result.refined;
  DeltaMask mask = cfg.space == LatentSpace::WPLUS ? DeltaMask::all(gen.n_layers())
                                                   : DeltaMask::none(gen.n_layers());
  Adam<T> opt(clone.params(), cfg.lr);
  Rng rng = Rng(cfg.seed).fork(0x2ef);
  auto target = image_to_var<T>(x);

  auto same_loss = [&](const Var<T>& imgs, const Var<T>& targets) {
    auto code = clone.encode(imgs, mask);
    auto recon = gen.synthesize(code.rows());
    Var<T> loss = ops::scale(l2_loss(recon, targets), static_cast<T>(cfg.weights.l2));
    loss = ops::add(loss, ops::scale(perceptual_loss(lpips, recon, targets),
                                     static_cast<T>(cfg.weights.lpips)));
    loss = ops::add(loss, ops::scale(identity_loss(identity, recon, targets),
                                     static_cast<T>(cfg.weights.id)));
    return loss;
  };

  std::vector<size_t> reg_idx;
  if (cfg.m_samples > 0 && cfg.lambda_reg > 0) reg_idx = ds.sample_train(rng, cfg.m_samples);

  for (int it = 0; it < cfg.iterations; ++it) {
    auto loss_x = same_loss(target, target);
    result.trace.push_back(loss_x.item());
    Var<T> total = loss_x;
    if (cfg.m_samples > 0 && cfg.lambda_reg > 0) {
      if (cfg.resample_each_iteration && it > 0) reg_idx = ds.sample_train(rng, cfg.m_samples);
      auto reg_imgs = images_to_var<T>(ds.batch(reg_idx));
      total = ops::add(total, ops::scale(same_loss(reg_imgs, reg_imgs),
                                         static_cast<T>(cfg.lambda_reg)));
    }
    require(std::isfinite(double(total.item())), "refine: objective diverged");
    clone.params().zero_grad();
    backward(total);
    opt.step();
  }
  result.trace.push_back(same_loss(target, target).item());
  result.pivot = batch_to_code(clone.encode(target, mask));
  return result;
}

}  // namespace wcycle
