#include <doctest.h>

#include "test_util.hpp"
#include "wcycle/losses.hpp"

using namespace wcycle;
using wtest::grad_check;
using wtest::random_var;

TEST_CASE("l2 loss: identical, constant-field and brute-force oracle") {
  Rng rng(1);
  auto x = random_var({1, 3, 8, 8}, rng, 0.5, false);
  CHECK(l2_loss(x, x).item() == 0.0);

  auto zeros = Var<double>::full({1, 3, 4, 4}, 0.0);
  auto halves = Var<double>::full({1, 3, 4, 4}, 0.5);
  CHECK(l2_loss(zeros, halves).item() == doctest::Approx(0.25).epsilon(1e-12));

  auto y = random_var({1, 3, 8, 8}, rng, 0.5, false);
  double brute = 0;
  for (long i = 0; i < x.size(); ++i) {
    double d = x.val()[i] - y.val()[i];
    brute += d * d;
  }
  brute /= x.size();
  CHECK(std::abs(l2_loss(x, y).item() - brute) < 1e-9);

  auto bad = Var<double>::full({1, 3, 4, 8}, 0.0);
  CHECK_THROWS(l2_loss(x, bad));
}

TEST_CASE("perceptual loss: zero on identical inputs, symmetric, monotone in noise") {
  PerceptualNet<double> net(11);
  Rng rng(2);
  auto x = random_var({1, 3, 16, 16}, rng, 0.5, false);
  CHECK(perceptual_loss(net, x, x).item() == 0.0);

  auto y = random_var({1, 3, 16, 16}, rng, 0.5, false);
  double ab = perceptual_loss(net, x, y).item();
  double ba = perceptual_loss(net, y, x).item();
  CHECK(std::abs(ab - ba) < 1e-9);
  CHECK(ab > 0.0);

  // direction fixed, magnitude grows
  auto dir = random_var({1, 3, 16, 16}, rng, 1.0, false);
  double prev = 0.0;
  for (double epsn : {0.01, 0.05, 0.1}) {
    auto xe = Var<double>::from_values(x.shape(), x.val());
    for (long i = 0; i < xe.size(); ++i) xe.val()[i] += epsn * dir.val()[i];
    double d = perceptual_loss(net, x, xe).item();
    CHECK(d > prev);
    prev = d;
  }
}

TEST_CASE("perceptual loss requires matching shapes and is differentiable") {
  PerceptualNet<double> net(11);
  Rng rng(3);
  auto x = random_var({1, 3, 8, 8}, rng, 0.4);
  auto y = random_var({1, 3, 8, 8}, rng, 0.4, false);
  auto big = Var<double>::full({1, 3, 16, 16}, 0.0);
  CHECK_THROWS(perceptual_loss(net, x, big));
  CHECK(grad_check({x}, [&] { return perceptual_loss(net, x, y); }, 1e-4, 16) <= 1e-3);
}

TEST_CASE("identity loss: zero on identical inputs, bounded on random pairs") {
  IdentityEmbedder<float> emb(4);
  Rng rng(5);
  auto ds = generate_dataset(64, 21);
  auto x = images_to_var<float>(ds.batch(ds.sample_train(rng, 8)));
  CHECK(identity_loss(emb, x, x).item() == doctest::Approx(0.0).epsilon(1e-6));

  // range bound over many random pairs (batched)
  for (int rep = 0; rep < 4; ++rep) {
    auto a = images_to_var<float>(ds.batch(ds.sample_train(rng, 250)));
    auto b = images_to_var<float>(ds.batch(ds.sample_train(rng, 250)));
    auto ea = ops::l2_normalize_rows(emb.embed(a));
    auto eb = ops::l2_normalize_rows(emb.embed(b));
    auto cos = ops::rowwise_dot(ea, eb);
    for (float c : cos.val()) {
      CHECK(1.0f - c >= -1e-6f);
      CHECK(1.0f - c <= 2.0f + 1e-6f);
    }
  }
}

TEST_CASE("trained identity embedder separates identities") {
  auto ds = generate_dataset(2000, 31);
  IdentityEmbedder<float> emb(6);
  emb.train(ds, 400, 32, 5e-3, 77);

  // 100 same-identity pairs vs 100 different-identity pairs
  Rng rng(8);
  std::vector<Image> same_a, same_b, diff_a, diff_b;
  while (same_a.size() < 100 || diff_a.size() < 100) {
    size_t i = ds.train_indices()[rng.index(ds.train_indices().size())];
    size_t j = ds.train_indices()[rng.index(ds.train_indices().size())];
    if (i == j) continue;
    bool same = ds.factors(i).identity == ds.factors(j).identity;
    if (same && same_a.size() < 100) {
      same_a.push_back(ds.image(i));
      same_b.push_back(ds.image(j));
    } else if (!same && diff_a.size() < 100) {
      diff_a.push_back(ds.image(i));
      diff_b.push_back(ds.image(j));
    }
  }
  double same_loss =
      identity_loss(emb, images_to_var<float>(same_a), images_to_var<float>(same_b)).item();
  double diff_loss =
      identity_loss(emb, images_to_var<float>(diff_a), images_to_var<float>(diff_b)).item();
  CHECK(same_loss < diff_loss);
}

TEST_CASE("delta loss: examples and homogeneity") {
  CodeBatch<double> code;
  code.base = Var<double>::full({1, 4}, 0.0);
  code.deltas.push_back(Var<double>::from_values({1, 4}, {3, 4, 0, 0}));
  code.deltas.push_back(Var<double>::full({1, 4}, 0.0));
  CHECK(delta_loss(code).item() == doctest::Approx(5.0).epsilon(1e-9));

  for (auto& d : code.deltas)
    for (auto& v : d.val()) v *= 3.0;
  CHECK(delta_loss(code).item() == doctest::Approx(15.0).epsilon(1e-9));

  CodeBatch<double> zeros;
  zeros.base = Var<double>::full({2, 4}, 1.0);
  for (int i = 0; i < 3; ++i) zeros.deltas.push_back(Var<double>::full({2, 4}, 0.0));
  CHECK(delta_loss(zeros).item() == 0.0);
}

TEST_CASE("delta loss gradient matches finite differences") {
  Rng rng(9);
  CodeBatch<double> code;
  code.base = random_var({2, 6}, rng);
  for (int i = 0; i < 3; ++i) code.deltas.push_back(random_var({2, 6}, rng));
  std::vector<Var<double>> leaves = code.deltas;
  CHECK(grad_check(leaves, [&] { return delta_loss(code); }, 1e-4) <= 1e-3);
}

TEST_CASE("adversarial losses: gradient check and optimization sanity") {
  LatentDiscriminator<double> disc(6, 13);
  Rng rng(10);
  std::vector<Var<double>> rows{random_var({3, 6}, rng), random_var({3, 6}, rng)};
  CHECK(grad_check(rows, [&] { return adv_encoder_loss(disc, rows); }, 1e-4) <= 1e-3);

  // discriminator term decreases under discriminator-only steps on fixed inputs
  auto real = random_var({8, 6}, rng, 1.0, false);
  std::vector<Var<double>> fake{random_var({8, 6}, rng, 3.0, false)};
  Adam<double> opt(disc.params(), 1e-2);
  double first = adv_discriminator_loss(disc, real, fake).item();
  for (int it = 0; it < 100; ++it) {
    auto loss = adv_discriminator_loss(disc, real, fake);
    disc.params().zero_grad();
    backward(loss);
    opt.step();
  }
  double last = adv_discriminator_loss(disc, real, fake).item();
  CHECK(last < first);
}

TEST_CASE("on-manifold rows score better than off-manifold rows after training") {
  GeneratorConfig cfg;
  cfg.d_z = 8;
  cfg.d_w = 8;
  cfg.img_res = 8;
  cfg.stage_channels = {8, 8};
  cfg.mapping_hidden = 8;
  Generator<float> g(cfg, 3);
  LatentDiscriminator<float> disc(8, 5);
  Rng rng(6);
  Adam<float> opt(disc.params(), 1e-3);
  auto draw_real = [&] {
    auto z = Var<float>::leaf({16, 8}, false);
    for (auto& v : z.val()) v = static_cast<float>(rng.normal());
    return ops::detach(g.map(z));
  };
  auto draw_fake = [&] {
    auto w = draw_real();
    for (auto& v : w.val()) v += static_cast<float>(rng.normal(0.0, 2.0));
    return w;
  };
  for (int it = 0; it < 200; ++it) {
    auto loss = adv_discriminator_loss<float>(disc, draw_real(), {draw_fake()});
    disc.params().zero_grad();
    backward(loss);
    opt.step();
  }
  auto enc_on = adv_encoder_loss<float>(disc, {draw_real()}).item();
  auto enc_off = adv_encoder_loss<float>(disc, {draw_fake()}).item();
  CHECK(enc_on < enc_off);
}

TEST_CASE("noise regularization: analytic values") {
  // all-zero maps
  std::vector<Var<double>> zero_maps{Var<double>::full({8, 8}, 0.0),
                                     Var<double>::full({4, 4}, 0.0)};
  CHECK(noise_reg(zero_maps).item() == 0.0);

  // constant map: mean term is exactly 1 per level, autocorrelation adds 2
  std::vector<Var<double>> const_map{Var<double>::full({8, 8}, 1.0)};
  CHECK(noise_reg_mean_term(const_map).item() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(noise_reg(const_map).item() == doctest::Approx(3.0).epsilon(1e-6));

  // 32x32 constant: two pyramid levels (32 then 16)
  std::vector<Var<double>> const32{Var<double>::full({32, 32}, 1.0)};
  CHECK(noise_reg_mean_term(const32).item() == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("noise regularization: unit white noise stays small") {
  int below = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    auto m = Var<double>::leaf({64, 64}, false);
    for (auto& v : m.val()) v = rng.normal();
    if (noise_reg(std::vector<Var<double>>{m}).item() < 0.05) ++below;
  }
  CHECK(below >= 98);
}

TEST_CASE("noise regularization gradient matches finite differences") {
  Rng rng(12);
  auto m = random_var({8, 8}, rng);
  std::vector<Var<double>> maps{m};
  CHECK(grad_check({m}, [&] { return noise_reg(maps); }, 1e-4) <= 1e-3);
}

TEST_CASE("identity loss gradient matches finite differences") {
  IdentityEmbedder<double> emb(14, 8);
  Rng rng(15);
  auto x = random_var({1, 3, 8, 8}, rng, 0.5);
  auto y = random_var({1, 3, 8, 8}, rng, 0.5, false);
  CHECK(grad_check({x}, [&] { return identity_loss(emb, x, y); }, 1e-4, 12) <= 1e-3);
}

TEST_CASE("loss weights validate nonnegativity") {
  LossWeights w;
  w.validate();
  w.delta = -1.0;
  CHECK_THROWS(w.validate());
}
