#pragma once

#include "wcycle/dataset.hpp"
#include "wcycle/generator.hpp"
#include "wcycle/latent.hpp"

namespace wcycle {

struct LossWeights {
  double l2 = 1.0;       // lambda_L2
  double lpips = 0.8;    // lambda_lpips
  double id = 0.1;       // lambda_id
  double adv = 0.1;      // lambda_adv (initial; the schedule decays it)
  double delta = 2e-4;   // lambda_delta (initial; the schedule ramps it)
  double reg = 1.0;      // lambda_reg, refinement regularization
  double noise = 0.01;   // lambda_n, noise regularization in latent optimization

  void validate() const {
    require(l2 >= 0 && lpips >= 0 && id >= 0 && adv >= 0 && delta >= 0 && reg >= 0 &&
                noise >= 0,
            "LossWeights: weights must be nonnegative");
  }
};

// pixel-wise L2: mean squared difference
template <typename T>
Var<T> l2_loss(const Var<T>& x, const Var<T>& y) {
  return ops::mse(x, y);
}

// Frozen, randomly initialized 3-stage feature extractor. The perceptual
// distance averages squared differences of channel-unit-normalized feature
// maps across stages, so it is zero iff the feature maps agree.
template <typename T>
class PerceptualNet {
 public:
  explicit PerceptualNet(uint64_t seed, int img_channels = 3,
                         std::vector<int> channels = {12, 24, 48}) {
    Rng rng = Rng(seed).fork(0x9e7ce);
    int cin = img_channels;
    for (size_t i = 0; i < channels.size(); ++i) {
      conv_.push_back(Conv2d<T>::create(params_, "perceptual.conv" + std::to_string(i), cin,
                                        channels[i], 3, 1, rng));
      cin = channels[i];
    }
    params_.set_requires_grad(false);
  }

  std::vector<Var<T>> features(const Var<T>& x) const {
    std::vector<Var<T>> out;
    Var<T> h = x;
    for (size_t i = 0; i < conv_.size(); ++i) {
      if (i > 0) h = ops::avgpool2x(h);
      h = ops::leaky_relu(conv_[i](h), T(0.2));
      out.push_back(h);
    }
    return out;
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

 private:
  ParamStore<T> params_;
  std::vector<Conv2d<T>> conv_;
};

template <typename T>
Var<T> perceptual_loss(const PerceptualNet<T>& net, const Var<T>& x, const Var<T>& y) {
  require(x.shape() == y.shape(), "perceptual_loss: shape mismatch");
  auto fx = net.features(x);
  auto fy = net.features(y);
  Var<T> total = Var<T>::scalar(T(0));
  for (size_t i = 0; i < fx.size(); ++i) {
    auto nx = ops::channel_unit_normalize(fx[i]);
    auto ny = ops::channel_unit_normalize(fy[i]);
    total = ops::add(total, ops::mse(nx, ny));
  }
  return total;
}

// Identity embedder: a small classifier over the dataset's identity factor;
// after training the head is discarded and the penultimate embedding is used.
template <typename T>
class IdentityEmbedder {
 public:
  explicit IdentityEmbedder(uint64_t seed, int img_res = 32, int img_channels = 3,
                            int embed_dim = 64, int n_classes = kNumIdentities)
      : embed_dim_(embed_dim) {
    Rng rng = Rng(seed).fork(0x1de);
    std::vector<int> chans{12, 24, 48, embed_dim};
    int cin = img_channels;
    for (size_t i = 0; i < chans.size(); ++i) {
      int stride = i == 0 ? 1 : 2;
      conv_.push_back(Conv2d<T>::create(params_, "identity.conv" + std::to_string(i), cin,
                                        chans[i], 3, stride, rng));
      cin = chans[i];
    }
    head_ = Linear<T>::create(params_, "identity.head", embed_dim, n_classes, rng);
    (void)img_res;
  }

  Var<T> embed(const Var<T>& x) const {
    Var<T> h = x;
    for (const auto& c : conv_) h = ops::leaky_relu(c(h), T(0.2));
    return ops::global_avgpool(h);
  }

  Var<T> logits(const Var<T>& x) const { return head_(embed(x)); }

  // brief supervised training on the identity factor, then freeze
  void train(const FactorDataset& ds, int steps, int batch, double lr, uint64_t seed) {
    params_.set_requires_grad(true);
    Adam<T> opt(params_, lr);
    Rng rng = Rng(seed).fork(0x1de77);
    for (int it = 0; it < steps; ++it) {
      auto idx = ds.sample_train(rng, batch);
      std::vector<int> labels(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) labels[i] = ds.factors(idx[i]).identity;
      auto x = images_to_var<T>(ds.batch(idx));
      auto loss = ops::softmax_cross_entropy(logits(x), labels);
      require(std::isfinite(double(loss.item())), "identity embedder: loss diverged");
      params_.zero_grad();
      backward(loss);
      opt.step();
    }
    params_.set_requires_grad(false);
    trained_ = true;
  }

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

 private:
  ParamStore<T> params_;
  std::vector<Conv2d<T>> conv_;
  Linear<T> head_;
  int embed_dim_;
  bool trained_ = false;
};

// 1 - cosine similarity of embeddings, averaged over the batch; in [0, 2]
template <typename T>
Var<T> identity_loss(const IdentityEmbedder<T>& embedder, const Var<T>& x, const Var<T>& y) {
  require(x.shape() == y.shape(), "identity_loss: shape mismatch");
  auto ex = ops::l2_normalize_rows(embedder.embed(x));
  auto ey = ops::l2_normalize_rows(embedder.embed(y));
  auto cos = ops::rowwise_dot(ex, ey);
  return ops::mean(ops::add_scalar(ops::neg(cos), T(1)));
}

// Eq.-3-style offset penalty: sum over layers of ||delta_i||_2, averaged
// over the batch.
template <typename T>
Var<T> delta_loss(const CodeBatch<T>& code) {
  int b = code.batch();
  Var<T> per_image = Var<T>::full({b}, T(0));
  for (const auto& d : code.deltas) per_image = ops::add(per_image, ops::norm_rows(d));
  return ops::mean(per_image);
}

// Non-saturating GAN losses over style rows.
// encoder term: mean softplus(-D(row)) over all rows;
// discriminator term: mean softplus(-D(real)) + mean softplus(D(fake)).
template <typename T>
Var<T> adv_encoder_loss(const LatentDiscriminator<T>& disc, const std::vector<Var<T>>& rows) {
  Var<T> total = Var<T>::scalar(T(0));
  for (const auto& r : rows) total = ops::add(total, ops::mean(ops::softplus(ops::neg(disc.logits(r)))));
  return ops::scale(total, T(1) / T(rows.size()));
}

template <typename T>
Var<T> adv_discriminator_loss(const LatentDiscriminator<T>& disc, const Var<T>& real_w,
                              const std::vector<Var<T>>& fake_rows_detached) {
  Var<T> loss = ops::mean(ops::softplus(ops::neg(disc.logits(real_w))));
  Var<T> fake = Var<T>::scalar(T(0));
  for (const auto& r : fake_rows_detached)
    fake = ops::add(fake, ops::mean(ops::softplus(disc.logits(r))));
  return ops::add(loss, ops::scale(fake, T(1) / T(fake_rows_detached.size())));
}

// Noise regularization: per map and pyramid level, squared spatial mean plus
// squared normalized lag-1 autocorrelation (horizontal and vertical).
// Levels: the map itself, then 2x average pooling while min(h, w) > 8.
template <typename T>
Var<T> noise_reg(const std::vector<Var<T>>& maps, T eps = T(1e-8)) {
  Var<T> total = Var<T>::scalar(T(0));
  for (const auto& m : maps) {
    require(m.shape().size() == 2 || m.shape().size() == 3, "noise_reg: bad map shape");
    int h = m.shape()[m.shape().size() - 2];
    int w = m.shape()[m.shape().size() - 1];
    int b = m.shape().size() == 3 ? m.shape()[0] : 1;
    Var<T> level = ops::reshape(m, {b, 1, h, w});
    while (true) {
      Var<T> mu = ops::mean(level);
      Var<T> ss = ops::add_scalar(ops::sum(ops::square(level)), eps);
      Var<T> ach = ops::div(ops::sum(ops::mul(level, ops::roll_last(level, false))), ss);
      Var<T> acv = ops::div(ops::sum(ops::mul(level, ops::roll_last(level, true))), ss);
      total = ops::add(total, ops::square(mu));
      total = ops::add(total, ops::add(ops::square(ach), ops::square(acv)));
      int lh = level.shape()[2], lw = level.shape()[3];
      if (std::min(lh, lw) <= 16) break;
      level = ops::avgpool2x(level);
    }
  }
  return total;
}

// mean-squared-based variant used by tests to inspect the mean term alone
template <typename T>
Var<T> noise_reg_mean_term(const std::vector<Var<T>>& maps) {
  Var<T> total = Var<T>::scalar(T(0));
  for (const auto& m : maps) {
    int h = m.shape()[m.shape().size() - 2];
    int w = m.shape()[m.shape().size() - 1];
    int b = m.shape().size() == 3 ? m.shape()[0] : 1;
    Var<T> level = ops::reshape(m, {b, 1, h, w});
    while (true) {
      total = ops::add(total, ops::square(ops::mean(level)));
      int lh = level.shape()[2], lw = level.shape()[3];
      if (std::min(lh, lw) <= 16) break;
      level = ops::avgpool2x(level);
    }
  }
  return total;
}

}  // namespace wcycle
