#include <doctest.h>

#include "test_util.hpp"
#include "wcycle/nn.hpp"

using namespace wcycle;
using wtest::grad_check;
using wtest::random_var;

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(7);
  auto a = random_var({3, 4}, rng);
  auto b = random_var({3, 4}, rng);
  // keep b away from zero for div
  for (auto& x : b.val()) x = (x >= 0 ? x + 0.5 : x - 0.5);

  CHECK(grad_check({a, b}, [&] { return ops::mean(ops::add(a, b)); }) < 1e-6);
  CHECK(grad_check({a, b}, [&] { return ops::mean(ops::sub(a, b)); }) < 1e-6);
  CHECK(grad_check({a, b}, [&] { return ops::mean(ops::mul(a, b)); }) < 1e-6);
  CHECK(grad_check({a, b}, [&] { return ops::mean(ops::div(a, b)); }) < 1e-6);
  CHECK(grad_check({a}, [&] { return ops::sum(ops::square(a)); }) < 1e-6);
  CHECK(grad_check({a}, [&] { return ops::mean(ops::scale(a, 2.5)); }) < 1e-6);
  CHECK(grad_check({a}, [&] { return ops::mean(ops::leaky_relu(a, 0.2)); }) < 1e-5);
  CHECK(grad_check({a}, [&] { return ops::mean(ops::tanh_op(a)); }) < 1e-6);
  CHECK(grad_check({a}, [&] { return ops::mean(ops::softplus(a)); }) < 1e-6);
  CHECK(grad_check({a, b}, [&] { return ops::mse(a, b); }) < 1e-6);
}

TEST_CASE("sqrt and reductions") {
  Rng rng(8);
  auto a = random_var({5}, rng);
  for (auto& x : a.val()) x = std::abs(x) + 0.1;
  CHECK(grad_check({a}, [&] { return ops::mean(ops::sqrt_op(a, 1e-8)); }) < 1e-6);
  CHECK(grad_check({a}, [&] { return ops::sum(a); }) < 1e-8);
}

TEST_CASE("matmul and linear match finite differences") {
  Rng rng(9);
  auto a = random_var({3, 5}, rng);
  auto w = random_var({5, 4}, rng);
  auto bias = random_var({4}, rng);
  CHECK(grad_check({a, w}, [&] { return ops::mean(ops::matmul(a, w)); }) < 1e-6);
  CHECK(grad_check({a, w, bias}, [&] {
          return ops::mean(ops::square(ops::linear(a, w, bias)));
        }) < 1e-6);
}

TEST_CASE("conv2d matches finite differences") {
  Rng rng(10);
  for (int stride : {1, 2}) {
    auto x = random_var({2, 3, 6, 6}, rng);
    auto w = random_var({4, 3, 3, 3}, rng, 0.5);
    auto bias = random_var({4}, rng, 0.1);
    double err = grad_check({x, w, bias}, [&] {
      return ops::mean(ops::square(ops::conv2d(x, w, bias, stride)));
    });
    CHECK(err < 1e-5);
  }
}

TEST_CASE("conv2d forward oracle: direct convolution loop") {
  Rng rng(11);
  auto x = random_var({1, 2, 5, 5}, rng, 1.0, false);
  auto w = random_var({3, 2, 3, 3}, rng, 1.0, false);
  auto bias = random_var({3}, rng, 1.0, false);
  auto y = ops::conv2d(x, w, bias, 1, 1);
  // brute force
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 5; ++ox) {
        double acc = bias.val()[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy + ky - 1, ix = ox + kx - 1;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              acc += x.val()[(ci * 5 + iy) * 5 + ix] *
                     w.val()[((co * 2 + ci) * 3 + ky) * 3 + kx];
            }
        CHECK(y.val()[(co * 5 + oy) * 5 + ox] == doctest::Approx(acc).epsilon(1e-10));
      }
}

TEST_CASE("spatial ops match finite differences") {
  Rng rng(12);
  auto x = random_var({2, 3, 4, 4}, rng);
  CHECK(grad_check({x}, [&] { return ops::mean(ops::square(ops::upsample2x(x))); }) < 1e-6);
  CHECK(grad_check({x}, [&] { return ops::mean(ops::square(ops::avgpool2x(x))); }) < 1e-6);
  CHECK(grad_check({x}, [&] { return ops::mean(ops::square(ops::global_avgpool(x))); }) < 1e-6);
  CHECK(grad_check({x}, [&] { return ops::mean(ops::square(ops::roll_last(x, true))); }) < 1e-6);
  CHECK(grad_check({x}, [&] { return ops::mean(ops::square(ops::roll_last(x, false))); }) < 1e-6);
}

TEST_CASE("normalization ops match finite differences") {
  Rng rng(13);
  auto x = random_var({2, 3, 4, 4}, rng);
  auto img_target = random_var({2, 3, 4, 4}, rng, 1.0, false);
  CHECK(grad_check({x}, [&] { return ops::mse(ops::instance_norm(x, 1e-5), img_target); }) <
        1e-4);
  CHECK(grad_check({x}, [&] {
          return ops::mse(ops::channel_unit_normalize(x), img_target);
        }) < 1e-5);
  auto r = random_var({4, 6}, rng);
  auto target = random_var({4, 6}, rng, 1.0, false);
  CHECK(grad_check({r}, [&] { return ops::mse(ops::l2_normalize_rows(r), target); }) < 1e-5);
  CHECK(grad_check({r}, [&] { return ops::mean(ops::norm_rows(r)); }) < 1e-5);
}

TEST_CASE("style modulation and noise injection match finite differences") {
  Rng rng(14);
  auto x = random_var({2, 3, 4, 4}, rng);
  auto s = random_var({2, 3}, rng, 0.3);
  auto t = random_var({2, 3}, rng, 0.3);
  CHECK(grad_check({x, s, t}, [&] {
          return ops::mean(ops::square(ops::mod_scale_shift(x, s, t)));
        }) < 1e-6);

  auto n_shared = random_var({4, 4}, rng);
  auto n_batched = random_var({2, 4, 4}, rng);
  auto gain = random_var({1}, rng, 0.5);
  CHECK(grad_check({x, n_shared, gain}, [&] {
          return ops::mean(ops::square(ops::add_noise(x, n_shared, gain)));
        }) < 1e-6);
  CHECK(grad_check({x, n_batched, gain}, [&] {
          return ops::mean(ops::square(ops::add_noise(x, n_batched, gain)));
        }) < 1e-6);
}

TEST_CASE("rowwise dot and cross entropy match finite differences") {
  Rng rng(15);
  auto a = random_var({3, 5}, rng);
  auto b = random_var({3, 5}, rng);
  CHECK(grad_check({a, b}, [&] { return ops::mean(ops::rowwise_dot(a, b)); }) < 1e-6);

  auto logits = random_var({4, 6}, rng);
  std::vector<int> labels{0, 3, 5, 2};
  CHECK(grad_check({logits}, [&] { return ops::softmax_cross_entropy(logits, labels); }) <
        1e-6);
}

TEST_CASE("grad accumulates across backward calls until zeroed") {
  auto a = Var<double>::from_values({2}, {1.0, 2.0}, true);
  auto l1 = ops::sum(ops::square(a));
  backward(l1);
  CHECK(a.grad()[0] == doctest::Approx(2.0));
  auto l2 = ops::sum(ops::square(a));
  backward(l2);
  CHECK(a.grad()[0] == doctest::Approx(4.0));
  a.zero_grad();
  CHECK(a.grad()[0] == 0.0);
}

TEST_CASE("detach blocks gradient flow") {
  auto a = Var<double>::from_values({2}, {1.0, 2.0}, true);
  auto d = ops::detach(a);
  CHECK(!d.requires_grad());
  auto l = ops::sum(ops::mul(ops::square(a), d));
  backward(l);
  // d/da (a^2 * const) = 2 a * const
  CHECK(a.grad()[0] == doctest::Approx(2.0 * 1.0 * 1.0));
  CHECK(a.grad()[1] == doctest::Approx(2.0 * 2.0 * 2.0));
}

TEST_CASE("frozen parameters receive no gradient but pass it through") {
  Rng rng(16);
  auto x = random_var({2, 3}, rng);
  auto w = random_var({3, 3}, rng);
  auto bias = random_var({3}, rng);
  w.set_requires_grad(false);
  bias.set_requires_grad(false);
  auto loss = ops::mean(ops::square(ops::linear(x, w, bias)));
  backward(loss);
  CHECK(w.grad().empty() == false);  // buffer may exist from creation
  double wg = 0;
  for (double g : w.grad()) wg += std::abs(g);
  CHECK(wg == 0.0);
  double xg = 0;
  for (double g : x.grad()) xg += std::abs(g);
  CHECK(xg > 0.0);
}

TEST_CASE("adam reduces a simple quadratic") {
  ParamStore<double> ps;
  auto p = ps.add("p", {4});
  for (int i = 0; i < 4; ++i) p.val()[i] = 2.0 + i;
  Adam<double> opt(ps, 0.1);
  double first = 0;
  for (int it = 0; it < 200; ++it) {
    ps.zero_grad();
    auto loss = ops::sum(ops::square(p));
    if (it == 0) first = loss.item();
    backward(loss);
    opt.step();
  }
  auto final_loss = ops::sum(ops::square(p));
  CHECK(final_loss.item() < 0.01 * first);
}

TEST_CASE("param store checksum and copy") {
  Rng rng(17);
  ParamStore<float> a, b;
  auto pa = a.add_normal("x", {8}, rng, 1.0);
  auto pb = b.add("x", {8});
  CHECK(a.checksum() != b.checksum());
  b.copy_values_from(a);
  CHECK(a.checksum() == b.checksum());
  CHECK(a.values_equal(b));
  pb.val()[0] += 1.0f;
  CHECK(!a.values_equal(b));
  (void)pa;
}
