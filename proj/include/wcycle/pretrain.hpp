#pragma once

#include "wcycle/checkpoint.hpp"
#include "wcycle/generator.hpp"
#include "wcycle/losses.hpp"
#include "wcycle/regressor.hpp"

namespace wcycle {

// Adversarial pretraining of the style generator on the synthetic dataset,
// plus the frozen helper networks every later stage depends on.

struct PretrainConfig {
  long steps = 10000;
  int batch = 16;
  double lr_g = 1e-3;
  double lr_d = 1e-3;
  double beta1 = 0.0;  // GAN-style moments
  double beta2 = 0.99;
  uint64_t seed = 1;
  long log_every = 200;
  int identity_steps = 2500;
  int regressor_steps = 3500;
  int aux_batch = 32;
  double aux_lr = 5e-3;
};

struct PretrainLog {
  std::vector<double> d_loss, g_loss;
};

// Non-saturating image GAN. The generator runs with per-sample random noise
// injection; zero steps is a no-op that leaves the initialized params alone.
template <typename T>
PretrainLog pretrain_generator(Generator<T>& gen, ImageDiscriminator<T>& disc,
                               const FactorDataset& ds, const PretrainConfig& cfg) {
  require(ds.size() > 0 || cfg.steps == 0, "pretrain_generator: empty dataset");
  PretrainLog log;
  Adam<T> opt_g(gen.params(), cfg.lr_g, cfg.beta1, cfg.beta2);
  Adam<T> opt_d(disc.params(), cfg.lr_d, cfg.beta1, cfg.beta2);
  Rng rng_batch = Rng(cfg.seed).fork(0xba7c);
  Rng rng_z = Rng(cfg.seed).fork(0x5a);
  Rng rng_noise = Rng(cfg.seed).fork(0x401);
  int dz = gen.config().d_z;

  auto draw_z = [&](int n) {
    auto z = Var<T>::leaf({n, dz}, false);
    for (auto& v : z.val()) v = static_cast<T>(rng_z.normal());
    return z;
  };

  for (long it = 0; it < cfg.steps; ++it) {
    // discriminator step
    auto real = images_to_var<T>(ds.batch(ds.sample_train(rng_batch, cfg.batch)));
    Var<T> fake;
    {
      auto noise = gen.sample_noise(rng_noise, cfg.batch);
      fake = ops::detach(gen.synthesize_w(gen.map(draw_z(cfg.batch)), noise));
    }
    auto d_loss = ops::add(ops::mean(ops::softplus(ops::neg(disc.logits(real)))),
                           ops::mean(ops::softplus(disc.logits(fake))));
    double dval = d_loss.item();
    disc.params().zero_grad();
    backward(d_loss);
    opt_d.step();

    // generator step
    auto noise = gen.sample_noise(rng_noise, cfg.batch);
    auto g_img = gen.synthesize_w(gen.map(draw_z(cfg.batch)), noise);
    auto g_loss = ops::mean(ops::softplus(ops::neg(disc.logits(g_img))));
    double gval = g_loss.item();
    require(std::isfinite(dval) && std::isfinite(gval),
            "pretrain_generator: loss diverged (NaN) at step " + std::to_string(it));
    gen.params().zero_grad();
    disc.params().zero_grad();
    backward(g_loss);
    opt_g.step();
    gen.params().zero_grad();
    disc.params().zero_grad();

    if (it % cfg.log_every == 0) {
      log.d_loss.push_back(dval);
      log.g_loss.push_back(gval);
    }
  }
  return log;
}

// Sample-quality gate: a generated image counts as a valid shape when the
// factor regressor's reading, re-rendered, stays close to the sample.
template <typename T>
double valid_sample_fraction(const Generator<T>& gen, const FactorRegressor<T>& reg,
                             int n_samples, uint64_t seed, double mse_threshold = 0.05) {
  Rng rng = Rng(seed).fork(0x9a7e);
  const auto& ranges = reg.ranges();
  int valid = 0;
  int chunk = 32;
  int done = 0;
  while (done < n_samples) {
    int b = std::min(chunk, n_samples - done);
    auto z = Var<T>::leaf({b, gen.config().d_z}, false);
    for (auto& v : z.val()) v = static_cast<T>(rng.normal());
    auto img = gen.synthesize_w(gen.map(z));
    std::vector<Image> samples;
    for (int i = 0; i < b; ++i) samples.push_back(var_to_image(img, i));
    auto preds = reg.predict_batch(samples);
    for (int i = 0; i < b; ++i) {
      Factors f;
      f.identity = preds[i].identity;
      f.x = std::clamp(preds[i].x, -ranges.pos, ranges.pos);
      f.y = std::clamp(preds[i].y, -ranges.pos, ranges.pos);
      f.rotation = std::clamp(preds[i].rotation, -ranges.rot, ranges.rot);
      f.scale = std::clamp(preds[i].scale, ranges.scale_lo, ranges.scale_hi);
      f.hue = std::clamp(preds[i].hue, 0.0, ranges.hue_hi - 1e-6);
      if (image_mse(render(f, gen.config().img_res), samples[i]) <= mse_threshold) ++valid;
    }
    done += b;
  }
  return static_cast<double>(valid) / n_samples;
}

// Everything later stages treat as frozen: the generator and the three
// helper networks, persisted under one directory.
template <typename T>
struct PretrainedStack {
  Generator<T> generator;
  PerceptualNet<T> lpips;
  IdentityEmbedder<T> identity;
  FactorRegressor<T> regressor;
  StyleCode w_center;  // Monte-Carlo mean of map(z)
  PretrainLog gan_log;

  PretrainedStack(const GeneratorConfig& gcfg, uint64_t seed)
      : generator(gcfg, seed),
        lpips(seed),
        identity(seed, gcfg.img_res, gcfg.img_channels),
        regressor(seed, gcfg.img_res, gcfg.img_channels) {}

  PretrainedStack(const PretrainedStack&) = delete;
  PretrainedStack& operator=(const PretrainedStack&) = delete;
  PretrainedStack(PretrainedStack&&) = default;
  PretrainedStack& operator=(PretrainedStack&&) = default;

  static PretrainedStack build(const FactorDataset& ds, const GeneratorConfig& gcfg,
                               const PretrainConfig& cfg) {
    PretrainedStack stack(gcfg, cfg.seed);
    ImageDiscriminator<T> disc(gcfg.img_res, gcfg.img_channels, cfg.seed);
    stack.gan_log = pretrain_generator(stack.generator, disc, ds, cfg);
    stack.identity.train(ds, cfg.identity_steps, cfg.aux_batch, cfg.aux_lr, cfg.seed);
    stack.regressor.train(ds, cfg.regressor_steps, cfg.aux_batch, cfg.aux_lr, cfg.seed);
    stack.generator.freeze();
    stack.w_center = stack.generator.mean_w(10000, Rng(cfg.seed).fork(0x3ea));
    return stack;
  }

  void save(const std::string& dir, uint64_t seed) const {
    CheckpointMeta meta{.kind = "generator", .seed = seed};
    meta.extra = {{"w_center", w_center.v}};
    save_checkpoint(dir + "/generator", generator.params(), meta);
    save_checkpoint(dir + "/lpips", lpips.params(), {.kind = "perceptual", .seed = seed});
    save_checkpoint(dir + "/identity", identity.params(), {.kind = "identity", .seed = seed});
    save_checkpoint(dir + "/regressor", regressor.params(),
                    {.kind = "regressor", .seed = seed});
  }

  static PretrainedStack load(const std::string& dir, const GeneratorConfig& gcfg) {
    require(checkpoint_exists(dir + "/generator"),
            "pretrained stack not found at " + dir + " (produce it with `train gen`)");
    PretrainedStack stack(gcfg, 0);
    auto meta = load_checkpoint(dir + "/generator", stack.generator.params());
    load_checkpoint(dir + "/lpips", stack.lpips.params());
    load_checkpoint(dir + "/identity", stack.identity.params());
    load_checkpoint(dir + "/regressor", stack.regressor.params());
    stack.identity.mark_trained();
    stack.regressor.mark_trained();
    stack.generator.freeze();
    stack.lpips.params().set_requires_grad(false);
    stack.identity.params().set_requires_grad(false);
    stack.regressor.params().set_requires_grad(false);
    require(meta.extra.contains("w_center"), "pretrained stack: missing w_center");
    stack.w_center.v = meta.extra["w_center"].template get<std::vector<double>>();
    return stack;
  }
};

}  // namespace wcycle
