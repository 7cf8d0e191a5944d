#pragma once

#include "wcycle/image.hpp"
#include "wcycle/latent.hpp"
#include "wcycle/nn.hpp"
#include "wcycle/schedule.hpp"

namespace wcycle {

struct EncoderConfig {
  int d_w = 64;
  int n_layers = 8;  // must match the generator
  int img_res = 32;
  int img_channels = 3;
  std::vector<int> stage_channels{16, 32, 64, 96};  // stem + three stride-2 stages
};

// Image-to-latent encoder. A small convolutional pyramid feeds pooled
// features into one head per output: the base style vector reads the
// coarsest level, early offsets read coarse levels, late offsets read finer
// ones. Offsets are gated multiplicatively by the DeltaMask, so disabled
// offsets are exactly zero and their heads receive no gradient.
template <typename T>
class Encoder {
 public:
  Encoder(EncoderConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    require(cfg_.stage_channels.size() == 4, "Encoder: need 4 stage channel entries");
    Rng rng = Rng(seed).fork(0xe2c);
    stem_ = Conv2d<T>::create(params_, "encoder.stem", cfg_.img_channels,
                              cfg_.stage_channels[0], 3, 1, rng);
    for (int i = 0; i < 3; ++i)
      stage_.push_back(Conv2d<T>::create(params_, "encoder.stage" + std::to_string(i),
                                         cfg_.stage_channels[i], cfg_.stage_channels[i + 1], 3,
                                         2, rng));
    // heads: w0 plus one per offset; delta heads start small so early
    // training stays close to the W space
    base_head_ = Linear<T>::create(params_, "encoder.base_head", cfg_.stage_channels[3],
                                   cfg_.d_w, rng);
    int n_deltas = cfg_.n_layers - 1;
    int n_coarse = (n_deltas + 2) / 3;
    int n_mid = (n_deltas + 1) / 3;
    for (int i = 0; i < n_deltas; ++i) {
      int level = i < n_coarse ? 3 : (i < n_coarse + n_mid ? 2 : 1);
      delta_level_.push_back(level);
      delta_head_.push_back(Linear<T>::create(params_,
                                              "encoder.delta_head" + std::to_string(i + 1),
                                              cfg_.stage_channels[level], cfg_.d_w, rng, 0.1));
    }
  }

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  const EncoderConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  CodeBatch<T> encode(const Var<T>& x, const DeltaMask& mask) const {
    require(x.shape().size() == 4 && x.shape()[1] == cfg_.img_channels &&
                x.shape()[2] == cfg_.img_res && x.shape()[3] == cfg_.img_res,
            "encode: resolution mismatch, expected [B," + std::to_string(cfg_.img_channels) +
                "," + std::to_string(cfg_.img_res) + "," + std::to_string(cfg_.img_res) +
                "], got " + shape_str(x.shape()));
    require(mask.n_deltas() == cfg_.n_layers - 1, "encode: mask layer count mismatch");
    mask.validate();

    Var<T> h = ops::leaky_relu(stem_(x), T(0.2));
    std::vector<Var<T>> pooled(4);  // index by stage level 1..3
    for (int i = 0; i < 3; ++i) {
      h = ops::leaky_relu(stage_[i](h), T(0.2));
      pooled[i + 1] = ops::global_avgpool(h);
    }

    CodeBatch<T> code;
    code.base = base_head_(pooled[3]);
    for (size_t i = 0; i < delta_head_.size(); ++i) {
      Var<T> d = delta_head_[i](pooled[delta_level_[i]]);
      code.deltas.push_back(ops::scale(d, mask.enabled(static_cast<int>(i)) ? T(1) : T(0)));
    }
    return code;
  }

  ExtendedStyleCode encode_image(const Image& img, const DeltaMask& mask) const {
    auto cb = encode(image_to_var<T>(img), mask);
    return batch_to_code(cb);
  }

  // deep, independent copy (fresh parameter storage, same values)
  Encoder clone() const {
    Encoder copy(cfg_, 0);
    copy.params_.copy_values_from(params_);
    return copy;
  }

 private:
  EncoderConfig cfg_;
  ParamStore<T> params_;
  Conv2d<T> stem_;
  std::vector<Conv2d<T>> stage_;
  Linear<T> base_head_;
  std::vector<Linear<T>> delta_head_;
  std::vector<int> delta_level_;
};

}  // namespace wcycle
