#include <doctest.h>

#include "test_util.hpp"
#include "wcycle/generator.hpp"

using namespace wcycle;

namespace {

GeneratorConfig tiny_config() {
  GeneratorConfig cfg;
  cfg.d_z = 8;
  cfg.d_w = 8;
  cfg.base_res = 4;
  cfg.img_res = 8;
  cfg.stage_channels = {8, 6};
  cfg.mapping_hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("map is deterministic and reproducible across constructions") {
  Generator<float> g1(tiny_config(), 123);
  Generator<float> g2(tiny_config(), 123);
  CHECK(g1.params().checksum() == g2.params().checksum());

  auto z0 = Var<float>::leaf({1, 8}, false);
  CHECK(g1.map(z0).val() == g1.map(z0).val());  // bit-for-bit on repeat calls

  auto z = Var<float>::leaf({1, 8}, false);
  Rng zr(55);
  for (auto& x : z.val()) x = static_cast<float>(zr.normal());
  auto w1 = g1.map(z);
  auto w2 = g2.map(z);
  CHECK(w1.val() == w2.val());
  for (float v : w1.val()) CHECK(std::isfinite(v));

  Generator<float> g3(tiny_config(), 124);
  auto w3 = g3.map(z);
  CHECK(w1.val() != w3.val());
}

TEST_CASE("map stays finite over many random latents") {
  Generator<float> g(tiny_config(), 5);
  Rng rng(99);
  auto z = Var<float>::leaf({1000, 8}, false);
  for (auto& x : z.val()) x = static_cast<float>(rng.normal());
  auto w = g.map(z);
  for (float v : w.val()) CHECK(std::isfinite(v));
}

TEST_CASE("mean_w is a deterministic Monte-Carlo estimate") {
  Generator<float> g(tiny_config(), 5);
  auto m1 = g.mean_w(2000, Rng(1));
  auto m2 = g.mean_w(2000, Rng(1));
  CHECK(m1.v == m2.v);
  for (float v : m1.v) CHECK(std::isfinite(v));
}

TEST_CASE("broadcast equivalence: W path equals identical-rows W+ path") {
  Generator<float> g(tiny_config(), 5);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto z = Var<float>::leaf({2, 8}, false);
    for (auto& x : z.val()) x = static_cast<float>(rng.normal());
    auto w = g.map(z);
    auto img_w = g.synthesize_w(w);
    std::vector<Var<float>> rows(g.n_layers(), w);
    auto img_rows = g.synthesize(rows);
    double worst = 0;
    for (size_t i = 0; i < img_w.val().size(); ++i)
      worst = std::max(worst, std::abs(double(img_w.val()[i]) - img_rows.val()[i]));
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("synthesize output stays in [-1, 1]") {
  Generator<float> g(tiny_config(), 17);
  Rng rng(4);
  auto z = Var<float>::leaf({4, 8}, false);
  for (auto& x : z.val()) x = static_cast<float>(rng.normal());
  auto img = g.synthesize_w(g.map(z));
  CHECK(img.shape() == Shape({4, 3, 8, 8}));
  for (float v : img.val()) {
    CHECK(std::abs(v) <= 1.0f);
    CHECK(std::isfinite(v));
  }
}

TEST_CASE("noise injection is active: different noise, different image") {
  Generator<float> g(tiny_config(), 17);
  Rng rng(4);
  auto z = Var<float>::leaf({1, 8}, false);
  for (auto& x : z.val()) x = static_cast<float>(rng.normal());
  auto w = g.map(z);
  auto n1 = g.sample_noise(rng, 1);
  auto n2 = g.sample_noise(rng, 1);
  auto img1 = g.synthesize_w(w, n1);
  auto img2 = g.synthesize_w(w, n2);
  double diff = 0;
  for (size_t i = 0; i < img1.val().size(); ++i)
    diff = std::max(diff, std::abs(double(img1.val()[i]) - img2.val()[i]));
  CHECK(diff > 1e-4);
}

TEST_CASE("synthesize rejects mismatched code and noise layer counts") {
  Generator<float> g(tiny_config(), 17);
  auto w = Var<float>::leaf({1, 8}, false);
  std::vector<Var<float>> too_few(g.n_layers() - 1, w);
  CHECK_THROWS(g.synthesize(too_few));
  Rng rng(1);
  auto noise = g.sample_noise(rng, 1);
  noise.pop_back();
  CHECK_THROWS(g.synthesize_w(w, noise));
}

TEST_CASE("synthesize gradient w.r.t. code matches finite differences") {
  GeneratorConfig cfg = tiny_config();
  Generator<double> g(cfg, 29);
  g.freeze();
  Rng rng(30);
  std::vector<Var<double>> rows;
  for (int l = 0; l < g.n_layers(); ++l) rows.push_back(wtest::random_var({1, 8}, rng, 0.7));
  auto target = wtest::random_var({1, 3, 8, 8}, rng, 0.5, false);
  double err = wtest::grad_check(
      rows, [&] { return ops::mse(g.synthesize(rows), target); }, 1e-4, 10);
  CHECK(err <= 1e-3);
}

TEST_CASE("synthesize gradient w.r.t. noise and params matches finite differences") {
  GeneratorConfig cfg = tiny_config();
  Generator<double> g(cfg, 31);
  Rng rng(32);
  auto w = wtest::random_var({1, 8}, rng, 0.7);
  auto noise = g.sample_noise(rng, 1);
  for (auto& n : noise) n.set_requires_grad(true);
  auto target = wtest::random_var({1, 3, 8, 8}, rng, 0.5, false);
  std::vector<Var<double>> leaves = noise;
  double err = wtest::grad_check(
      leaves, [&] { return ops::mse(g.synthesize_w(w, noise), target); }, 1e-4, 6);
  CHECK(err <= 1e-3);

  // a couple of parameter leaves
  auto* conv_w = g.params().find("synthesis.layer0.conv.weight");
  auto* gain = g.params().find("synthesis.layer1.noise_gain");
  REQUIRE(conv_w != nullptr);
  REQUIRE(gain != nullptr);
  err = wtest::grad_check(
      {*conv_w, *gain}, [&] { return ops::mse(g.synthesize_w(w, noise), target); }, 1e-4, 8);
  CHECK(err <= 1e-3);
}

TEST_CASE("latent discriminator: finite logits, near-zero at init") {
  LatentDiscriminator<float> d(8, 77);
  Rng rng(7);
  auto w = Var<float>::leaf({1000, 8}, false);
  for (auto& x : w.val()) x = static_cast<float>(rng.normal());
  auto lg = d.logits(w);
  REQUIRE(lg.shape() == Shape({1000}));
  double mean = 0;
  for (float v : lg.val()) {
    CHECK(std::isfinite(v));
    mean += v;
  }
  mean /= lg.size();
  CHECK(std::abs(mean) < 0.5);
}

TEST_CASE("image discriminator produces per-sample logits") {
  ImageDiscriminator<float> d(8, 3, 21, {8, 12});
  Rng rng(2);
  auto x = Var<float>::leaf({5, 3, 8, 8}, false);
  for (auto& v : x.val()) v = static_cast<float>(rng.uniform(-1, 1));
  auto lg = d.logits(x);
  CHECK(lg.shape() == Shape({5}));
  for (float v : lg.val()) CHECK(std::isfinite(v));
}
