#pragma once

#include <functional>

#include "wcycle/image.hpp"
#include "wcycle/latent.hpp"
#include "wcycle/nn.hpp"

namespace wcycle {

struct GeneratorConfig {
  int d_z = 64;
  int d_w = 64;
  int base_res = 4;
  int img_res = 32;
  int img_channels = 3;
  std::vector<int> stage_channels{32, 24, 16, 12};  // coarse to fine
  int layers_per_stage = 2;
  int mapping_layers = 3;
  int mapping_hidden = 64;

  int n_stages() const {
    int s = 0, r = base_res;
    while (r < img_res) {
      r *= 2;
      ++s;
    }
    require(r == img_res, "GeneratorConfig: img_res must be base_res * 2^k");
    return s + 1;
  }
  int n_layers() const { return n_stages() * layers_per_stage; }
};

// Style-based generator: mapping MLP z->w plus a synthesis stack with one
// style injection per layer (instance norm, then per-channel scale/shift
// from an affine of that layer's style row) and additive per-layer noise.
template <typename T>
class Generator {
 public:
  Generator(GeneratorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    require(static_cast<int>(cfg_.stage_channels.size()) == cfg_.n_stages(),
            "Generator: stage_channels must have one entry per stage");
    Rng rng = Rng(seed).fork(0x6e6);
    int dz = cfg_.d_z, dw = cfg_.d_w, hid = cfg_.mapping_hidden;
    for (int i = 0; i < cfg_.mapping_layers; ++i) {
      int in = i == 0 ? dz : hid;
      int out = i == cfg_.mapping_layers - 1 ? dw : hid;
      map_fc_.push_back(Linear<T>::create(params_, "mapping.fc" + std::to_string(i), in, out, rng));
    }
    int c0 = cfg_.stage_channels[0];
    const_input_ = params_.add_normal("synthesis.const", {c0, cfg_.base_res, cfg_.base_res},
                                      rng, 1.0);
    int n = cfg_.n_layers();
    int res = cfg_.base_res;
    for (int l = 0; l < n; ++l) {
      int stage = l / cfg_.layers_per_stage;
      int k = l % cfg_.layers_per_stage;
      bool up = stage > 0 && k == 0;
      if (up) res *= 2;
      int cin = k == 0 ? cfg_.stage_channels[std::max(0, stage - (k == 0 ? 1 : 0))]
                       : cfg_.stage_channels[stage];
      if (stage == 0) cin = c0;
      int cout = cfg_.stage_channels[stage];
      std::string nm = "synthesis.layer" + std::to_string(l);
      Layer layer;
      layer.conv = Conv2d<T>::create(params_, nm + ".conv", cin, cout, 3, 1, rng);
      layer.style_scale = Linear<T>::create(params_, nm + ".style_scale", dw, cout, rng, 0.3);
      layer.style_shift = Linear<T>::create(params_, nm + ".style_shift", dw, cout, rng, 0.3);
      layer.noise_gain = params_.add_full(nm + ".noise_gain", {1}, T(0.1));
      layer.upsample_before = up;
      layer.res = res;
      layer.channels = cout;
      layers_.push_back(std::move(layer));
    }
    to_rgb_ = Conv2d<T>::create(params_, "synthesis.to_rgb", cfg_.stage_channels.back(),
                                cfg_.img_channels, 1, 1, rng, 0.5);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  // deep copy with fresh parameter storage (pivotal tuning operates on one)
  Generator clone() const {
    Generator copy(cfg_, 0);
    copy.params_.copy_values_from(params_);
    return copy;
  }

  const GeneratorConfig& config() const { return cfg_; }
  int n_layers() const { return static_cast<int>(layers_.size()); }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  void freeze() { params_.set_requires_grad(false); }
  void unfreeze() { params_.set_requires_grad(true); }

  // z [B,d_z] -> w [B,d_w]; deterministic given parameters and z
  Var<T> map(const Var<T>& z) const {
    require(z.shape().size() == 2 && z.shape()[1] == cfg_.d_z,
            "map: expected [B," + std::to_string(cfg_.d_z) + "], got " + shape_str(z.shape()));
    // pixel norm: scale rows to sqrt(d_z) length
    Var<T> h = ops::scale(ops::l2_normalize_rows(z, T(1e-8)),
                          static_cast<T>(std::sqrt(double(cfg_.d_z))));
    for (size_t i = 0; i < map_fc_.size(); ++i) h = ops::leaky_relu(map_fc_[i](h), T(0.2));
    return h;
  }

  // per-layer noise map sizes, in layer order
  std::vector<std::pair<int, int>> noise_shapes() const {
    std::vector<std::pair<int, int>> out;
    for (const auto& l : layers_) out.emplace_back(l.res, l.res);
    return out;
  }

  // batched constant noise, one [B,H,W] map per layer
  std::vector<Var<T>> sample_noise(Rng& rng, int batch) const {
    std::vector<Var<T>> out;
    for (const auto& l : layers_) {
      auto v = Var<T>::leaf({batch, l.res, l.res}, false);
      for (auto& x : v.val()) x = static_cast<T>(rng.normal());
      out.push_back(std::move(v));
    }
    return out;
  }

  // style_rows: one [B,d_w] row per layer (the W+ path)
  Var<T> synthesize(const std::vector<Var<T>>& style_rows,
                    const std::vector<Var<T>>& noise = {}) const {
    require(static_cast<int>(style_rows.size()) == n_layers(),
            "synthesize: invalid architecture, expected " + std::to_string(n_layers()) +
                " style rows, got " + std::to_string(style_rows.size()));
    return synthesize_impl([&](int l) { return style_rows[l]; }, style_rows[0].shape()[0],
                           noise);
  }

  // single shared style vector (the W path)
  Var<T> synthesize_w(const Var<T>& w, const std::vector<Var<T>>& noise = {}) const {
    require(w.shape().size() == 2 && w.shape()[1] == cfg_.d_w, "synthesize_w: bad w shape");
    return synthesize_impl([&](int) { return w; }, w.shape()[0], noise);
  }

  Var<T> synthesize(const CodeBatch<T>& code, const std::vector<Var<T>>& noise = {}) const {
    require(code.n_layers() == n_layers(),
            "synthesize: invalid architecture, code has " + std::to_string(code.n_layers()) +
                " rows, generator has " + std::to_string(n_layers()));
    return synthesize(code.rows(), noise);
  }

  // convenience single-image path with zero noise
  Image synthesize_image(const ExtendedStyleCode& code) const {
    auto cb = code_to_batch<T>(code);
    return var_to_image(synthesize(cb));
  }

  // Monte-Carlo estimate of the W-space center
  StyleCode mean_w(int n_samples, Rng rng) const {
    std::vector<double> acc(cfg_.d_w, 0.0);
    int chunk = 256;
    int done = 0;
    while (done < n_samples) {
      int b = std::min(chunk, n_samples - done);
      auto z = Var<T>::leaf({b, cfg_.d_z}, false);
      for (auto& x : z.val()) x = static_cast<T>(rng.normal());
      auto w = map(z);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < cfg_.d_w; ++j) acc[j] += w.val()[i * cfg_.d_w + j];
      done += b;
    }
    StyleCode out;
    out.v.resize(cfg_.d_w);
    for (int j = 0; j < cfg_.d_w; ++j) out.v[j] = acc[j] / n_samples;
    return out;
  }

 private:
  struct Layer {
    Conv2d<T> conv;
    Linear<T> style_scale, style_shift;
    Var<T> noise_gain;
    bool upsample_before = false;
    int res = 0, channels = 0;
  };

  Var<T> synthesize_impl(const std::function<Var<T>(int)>& style_for_layer, int batch,
                         const std::vector<Var<T>>& noise) const {
    require(noise.empty() || noise.size() == layers_.size(),
            "synthesize: invalid architecture, noise map count mismatch");
    Var<T> x = ops::tile_batch(const_input_, batch);
    for (size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      if (layer.upsample_before) x = ops::upsample2x(x);
      x = layer.conv(x);
      if (!noise.empty()) x = ops::add_noise(x, noise[l], layer.noise_gain);
      x = ops::instance_norm(x, T(1e-5));
      Var<T> row = style_for_layer(static_cast<int>(l));
      x = ops::mod_scale_shift(x, layer.style_scale(row), layer.style_shift(row));
      x = ops::leaky_relu(x, T(0.2));
    }
    return ops::tanh_op(to_rgb_(x));
  }

  GeneratorConfig cfg_;
  ParamStore<T> params_;
  std::vector<Linear<T>> map_fc_;
  Var<T> const_input_;
  std::vector<Layer> layers_;
  Conv2d<T> to_rgb_;
};

// MLP mapping a style vector to a realness logit (Eq. 4 adversarial term
// operates on materialized code rows).
template <typename T>
class LatentDiscriminator {
 public:
  LatentDiscriminator(int d_w, uint64_t seed, int hidden = 128, int depth = 3) {
    Rng rng = Rng(seed).fork(0x1a7d);
    for (int i = 0; i < depth; ++i) {
      int in = i == 0 ? d_w : hidden;
      int out = i == depth - 1 ? 1 : hidden;
      double scale = i == depth - 1 ? 0.1 : 1.0;
      fc_.push_back(Linear<T>::create(params_, "latent_d.fc" + std::to_string(i), in, out, rng,
                                      scale));
    }
  }

  // [B,d_w] -> [B] logits
  Var<T> logits(const Var<T>& w) const {
    Var<T> h = w;
    for (size_t i = 0; i < fc_.size(); ++i) {
      h = fc_[i](h);
      if (i + 1 < fc_.size()) h = ops::leaky_relu(h, T(0.2));
    }
    return ops::reshape(h, {h.shape()[0]});
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

 private:
  ParamStore<T> params_;
  std::vector<Linear<T>> fc_;
};

// Image discriminator used only for adversarial pretraining of the generator.
template <typename T>
class ImageDiscriminator {
 public:
  ImageDiscriminator(int img_res, int img_channels, uint64_t seed,
                     std::vector<int> channels = {16, 32, 64}) {
    Rng rng = Rng(seed).fork(0x1d15c);
    int res = img_res;
    int cin = img_channels;
    for (size_t i = 0; i < channels.size(); ++i) {
      conv_.push_back(Conv2d<T>::create(params_, "image_d.conv" + std::to_string(i), cin,
                                        channels[i], 3, 2, rng));
      cin = channels[i];
      res /= 2;
    }
    flat_dim_ = cin * res * res;
    fc_ = Linear<T>::create(params_, "image_d.fc", flat_dim_, 1, rng, 0.5);
  }

  Var<T> logits(const Var<T>& x) const {
    Var<T> h = x;
    for (const auto& c : conv_) h = ops::leaky_relu(c(h), T(0.2));
    h = ops::reshape(h, {h.shape()[0], flat_dim_});
    h = fc_(h);
    return ops::reshape(h, {h.shape()[0]});
  }

  ParamStore<T>& params() { return params_; }

 private:
  ParamStore<T> params_;
  std::vector<Conv2d<T>> conv_;
  Linear<T> fc_;
  int flat_dim_ = 0;
};

}  // namespace wcycle
