#include <doctest.h>

#include "wcycle/editing.hpp"
#include "wcycle/projector.hpp"
#include "wcycle/refine.hpp"
#include "wcycle/tuning.hpp"

using namespace wcycle;

namespace {

struct TinyStack {
  GeneratorConfig gcfg;
  Generator<float> gen;
  PerceptualNet<float> lpips;
  IdentityEmbedder<float> identity;
  FactorDataset ds;
  StyleCode center;

  TinyStack()
      : gcfg(make_gcfg()),
        gen(gcfg, 21),
        lpips(21, 3, {8, 12, 16}),
        identity(21, 8, 3, 16),
        ds(generate_dataset(200, 9, 8)) {
    identity.mark_trained();
    gen.freeze();
    center = gen.mean_w(512, Rng(3));
  }

  static GeneratorConfig make_gcfg() {
    GeneratorConfig cfg;
    cfg.d_z = 16;
    cfg.d_w = 16;
    cfg.img_res = 8;
    cfg.stage_channels = {12, 10};
    cfg.mapping_hidden = 16;
    return cfg;
  }

  Image sample_image(uint64_t seed) {
    Rng rng(seed);
    auto z = Var<float>::leaf({1, 16}, false);
    for (auto& v : z.val()) v = static_cast<float>(rng.normal());
    return var_to_image(gen.synthesize_w(gen.map(z)));
  }
};

}  // namespace

TEST_CASE("projector: zero steps returns the initialization") {
  TinyStack s;
  auto x = s.sample_image(5);
  ProjectorConfig cfg;
  cfg.steps = 0;
  auto res = optimize_latent(s.gen, s.lpips, s.center, x, cfg);
  REQUIRE(res.code.base.v.size() == s.center.v.size());
  for (size_t j = 0; j < s.center.v.size(); ++j)
    CHECK(res.code.base.v[j] == doctest::Approx(s.center.v[j]).epsilon(1e-6));
  CHECK(delta_norm_sum(res.code) == 0.0);
  CHECK(res.trace.empty());
}

TEST_CASE("projector: objective includes the noise term only when weighted") {
  TinyStack s;
  auto x = s.sample_image(6);
  ProjectorConfig cfg;
  cfg.steps = 1;
  cfg.lambda_noise = 0;
  cfg.seed = 4;
  auto res = optimize_latent(s.gen, s.lpips, s.center, x, cfg);

  // rebuild the step-0 objective by hand: perceptual only, same init
  Rng rng = Rng(cfg.seed).fork(0x0b7);
  std::vector<Var<float>> rows(s.gen.n_layers());
  auto w = Var<float>::leaf({1, 16}, false);
  for (int j = 0; j < 16; ++j) w.val()[j] = static_cast<float>(s.center.v[j]);
  for (auto& r : rows) r = w;
  std::vector<Var<float>> noise;
  for (auto [h, wd] : s.gen.noise_shapes()) {
    auto m = Var<float>::leaf({h, wd}, false);
    for (auto& v : m.val()) v = static_cast<float>(rng.normal());
    noise.push_back(m);
  }
  auto perceptual_only =
      perceptual_loss(s.lpips, image_to_var<float>(x), s.gen.synthesize(rows, noise)).item();
  CHECK(res.trace[0] == doctest::Approx(perceptual_only).epsilon(1e-5));

  ProjectorConfig with_noise = cfg;
  with_noise.lambda_noise = 0.1;
  auto res2 = optimize_latent(s.gen, s.lpips, s.center, x, with_noise);
  CHECK(res2.trace[0] > res.trace[0]);
}

TEST_CASE("projector: trace finite, best objective non-increasing, W+ at least as good") {
  TinyStack s;
  std::vector<double> w_final, wp_final;
  for (uint64_t i = 0; i < 3; ++i) {
    auto x = s.sample_image(100 + i);
    ProjectorConfig cfg;
    cfg.steps = 120;
    cfg.lr = 0.03;
    cfg.seed = 7 + i;
    cfg.space = LatentSpace::W;
    auto rw = optimize_latent(s.gen, s.lpips, s.center, x, cfg);
    for (double v : rw.trace) CHECK(std::isfinite(v));
    for (size_t k = 1; k < rw.best_trace.size(); ++k)
      CHECK(rw.best_trace[k] <= rw.best_trace[k - 1] + 1e-12);
    cfg.space = LatentSpace::WPLUS;
    auto rwp = optimize_latent(s.gen, s.lpips, s.center, x, cfg);
    w_final.push_back(rw.final_objective);
    wp_final.push_back(rwp.final_objective);
    // W+ code has nonzero offsets in general
    CHECK(delta_norm_sum(rwp.code) > 0.0);
  }
  int wp_better = 0;
  for (size_t i = 0; i < 3; ++i)
    if (wp_final[i] <= w_final[i] + 1e-6) ++wp_better;
  CHECK(wp_better >= 2);
}

TEST_CASE("projector: inverts an in-domain image") {
  TinyStack s;
  auto x = s.sample_image(42);
  ProjectorConfig cfg;
  cfg.steps = 250;
  cfg.lr = 0.03;
  cfg.lambda_noise = 0.01;
  auto res = optimize_latent(s.gen, s.lpips, s.center, x, cfg);
  auto recon = s.gen.synthesize_image(res.code);
  CHECK(image_mse(recon, x) < 0.05);
}

TEST_CASE("refine: zero iterations reproduces the plain encoding") {
  TinyStack s;
  Encoder<float> enc(EncoderConfig{.d_w = 16, .n_layers = 4, .img_res = 8,
                                   .stage_channels = {8, 12, 16, 24}},
                     3);
  auto x = s.sample_image(9);
  RefinementConfig cfg;
  cfg.iterations = 0;
  auto res = refine(x, enc, s.gen, s.lpips, s.identity, s.ds, cfg);
  auto plain = enc.encode_image(x, DeltaMask::all(4));
  CHECK(res.pivot.base.v == plain.base.v);
  CHECK(res.pivot.deltas == plain.deltas);
}

TEST_CASE("refine: clone isolation, determinism, spaces and regularization arms") {
  TinyStack s;
  Encoder<float> enc(EncoderConfig{.d_w = 16, .n_layers = 4, .img_res = 8,
                                   .stage_channels = {8, 12, 16, 24}},
                     3);
  auto x = s.sample_image(10);
  uint64_t before = enc.params().checksum();
  RefinementConfig cfg;
  cfg.iterations = 10;
  cfg.lr = 1e-3;
  cfg.seed = 11;
  auto a = refine(x, enc, s.gen, s.lpips, s.identity, s.ds, cfg);
  CHECK(enc.params().checksum() == before);  // input encoder untouched
  auto b = refine(x, enc, s.gen, s.lpips, s.identity, s.ds, cfg);
  CHECK(a.pivot.base.v == b.pivot.base.v);  // fixed seed determinism
  CHECK(a.pivot.deltas == b.pivot.deltas);
  CHECK(delta_norm_sum(a.pivot) > 0.0);  // W+ space keeps offsets

  cfg.space = LatentSpace::W;
  auto w_arm = refine(x, enc, s.gen, s.lpips, s.identity, s.ds, cfg);
  CHECK(delta_norm_sum(w_arm.pivot) == 0.0);

  // lambda_reg = 0 equals the M = 0 arm exactly under the same seed
  cfg.space = LatentSpace::WPLUS;
  cfg.lambda_reg = 0;
  auto no_reg = refine(x, enc, s.gen, s.lpips, s.identity, s.ds, cfg);
  cfg.lambda_reg = 1.0;
  cfg.m_samples = 0;
  auto no_m = refine(x, enc, s.gen, s.lpips, s.identity, s.ds, cfg);
  CHECK(no_reg.pivot.base.v == no_m.pivot.base.v);

  // refinement reduces the same-image loss
  CHECK(a.trace.back() < a.trace.front());
}

TEST_CASE("refine: regularization needs a training set") {
  TinyStack s;
  Encoder<float> enc(EncoderConfig{.d_w = 16, .n_layers = 4, .img_res = 8,
                                   .stage_channels = {8, 12, 16, 24}},
                     3);
  auto empty = generate_dataset(0, 1, 8);
  RefinementConfig cfg;
  CHECK_THROWS(refine(s.sample_image(2), enc, s.gen, s.lpips, s.identity, empty, cfg));
}

TEST_CASE("tune: already-converged input keeps near-zero loss") {
  TinyStack s;
  Rng rng(12);
  auto z = Var<float>::leaf({1, 16}, false);
  for (auto& v : z.val()) v = static_cast<float>(rng.normal());
  auto w = s.gen.map(z);
  StyleCode code;
  code.v.assign(w.val().begin(), w.val().end());
  auto pivot = broadcast(code, s.gen.n_layers());
  Image x = s.gen.synthesize_image(pivot);
  TuningConfig cfg;
  cfg.iterations = 10;
  auto res = tune(x, pivot, "encoder", s.gen, s.lpips, cfg);
  CHECK(res.initial_loss == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(res.final_loss <= res.initial_loss + 1e-9);
}

TEST_CASE("tune: reduces the objective and preserves pivot and base generator") {
  TinyStack s;
  auto x = s.ds.image(0);  // out-of-domain for the untrained generator
  auto pivot = broadcast(s.center, s.gen.n_layers());
  auto pivot_copy = pivot;
  uint64_t base_sum = s.gen.params().checksum();
  TuningConfig cfg;
  cfg.iterations = 40;
  cfg.lr = 2e-3;
  auto res = tune(x, pivot, "encoder", s.gen, s.lpips, cfg);
  CHECK(s.gen.params().checksum() == base_sum);
  CHECK(res.pivot.base.v == pivot_copy.base.v);
  CHECK(res.pivot.deltas == pivot_copy.deltas);
  CHECK(res.final_loss < res.initial_loss);
  for (size_t i = 1; i < res.best_trace.size(); ++i)
    CHECK(res.best_trace[i] <= res.best_trace[i - 1] + 1e-12);
  // the tuned copy is distinct storage
  CHECK(res.tuned.params().checksum() != base_sum);
}

TEST_CASE("tune: zero l2 weight reduces the objective to the perceptual term") {
  TinyStack s;
  auto x = s.ds.image(1);
  auto pivot = broadcast(s.center, s.gen.n_layers());
  TuningConfig cfg;
  cfg.iterations = 0;
  cfg.lambda_l2 = 0;
  auto res = tune(x, pivot, "encoder", s.gen, s.lpips, cfg);
  double perceptual_only =
      perceptual_loss(s.lpips, image_to_var<float>(x),
                      image_to_var<float>(s.gen.synthesize_image(pivot)))
          .item();
  CHECK(res.initial_loss == doctest::Approx(perceptual_only).epsilon(1e-6));
}

TEST_CASE("edit: linear in alpha, exactly reversible") {
  Rng rng(13);
  ExtendedStyleCode code;
  code.base.v.resize(16);
  for (auto& v : code.base.v) v = rng.normal();
  code.deltas.assign(3, std::vector<double>(16, 0.25));
  EditDirection dir;
  dir.v.assign(16, 0.0);
  dir.v[2] = 1.0;
  dir.validate();

  auto same = edit(code, dir, 0.0);
  CHECK(same.base.v == code.base.v);

  auto there = edit(code, dir, 1.7);
  auto back = edit(there, dir, -1.7);
  for (int j = 0; j < 16; ++j)
    CHECK(std::abs(back.base.v[j] - code.base.v[j]) <= 1e-9);

  auto twice = edit(edit(code, dir, 1.0), dir, 1.0);
  auto once = edit(code, dir, 2.0);
  for (int j = 0; j < 16; ++j)
    CHECK(std::abs(twice.base.v[j] - once.base.v[j]) <= 1e-9);

  // offsets are untouched by editing
  CHECK(there.deltas == code.deltas);
}

TEST_CASE("identity preservation at zero target equals plain-inversion similarity") {
  TinyStack s;
  auto x = s.sample_image(77);
  InvertedImage<float> inv;
  inv.input = x;
  inv.code = broadcast(s.center, s.gen.n_layers());
  inv.generator = &s.gen;
  EditDirection dir;
  dir.v.assign(16, 0.0);
  dir.v[0] = 1.0;
  FactorRegressor<float> reg(3, 8);
  reg.mark_trained();
  auto res = identity_preservation<float>({inv}, dir, 0.0, s.identity, reg, "rotation");
  CHECK(res.skipped == 0);
  auto recon = s.gen.synthesize_image(inv.code);
  auto ea = ops::l2_normalize_rows(s.identity.embed(image_to_var<float>(x)));
  auto eb = ops::l2_normalize_rows(s.identity.embed(image_to_var<float>(recon)));
  double expect = ops::rowwise_dot(ea, eb).val()[0];
  CHECK(res.mean_similarity == doctest::Approx(expect).epsilon(1e-6));
}
