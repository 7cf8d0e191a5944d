#pragma once

#include "wcycle/dataset.hpp"
#include "wcycle/nn.hpp"

namespace wcycle {

struct FactorPrediction {
  double x = 0, y = 0, rotation = 0, scale = 0, hue = 0;
  int identity = 0;
};

// Frozen model recovering the generative factors from rendered images; the
// evaluation-side replacement for attribute classifiers and pose estimators.
// Continuous factors are regressed against range-normalized targets; the
// identity factor is a 10-way classification head.
template <typename T>
class FactorRegressor {
 public:
  explicit FactorRegressor(uint64_t seed, int img_res = 32, int img_channels = 3,
                           FactorRanges ranges = {})
      : ranges_(ranges) {
    Rng rng = Rng(seed).fork(0xfac);
    std::vector<int> chans{16, 32, 64, 96};
    int cin = img_channels;
    for (size_t i = 0; i < chans.size(); ++i) {
      int stride = i == 0 ? 1 : 2;
      conv_.push_back(Conv2d<T>::create(params_, "regressor.conv" + std::to_string(i), cin,
                                        chans[i], 3, stride, rng));
      cin = chans[i];
    }
    head_ = Linear<T>::create(params_, "regressor.head", chans.back(),
                              5 + kNumIdentities, rng);
    (void)img_res;
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const FactorRanges& ranges() const { return ranges_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  Var<T> raw_outputs(const Var<T>& x) const {
    Var<T> h = x;
    for (const auto& c : conv_) h = ops::leaky_relu(c(h), T(0.2));
    return head_(ops::global_avgpool(h));
  }

  void train(const FactorDataset& ds, int steps, int batch, double lr, uint64_t seed) {
    params_.set_requires_grad(true);
    Adam<T> opt(params_, lr);
    Rng rng = Rng(seed).fork(0xfac77);
    for (int it = 0; it < steps; ++it) {
      auto idx = ds.sample_train(rng, batch);
      auto x = images_to_var<T>(ds.batch(idx));
      auto out = raw_outputs(x);
      // split: first 5 columns regression, rest identity logits
      int b = static_cast<int>(idx.size());
      auto target = Var<T>::leaf({b, 5}, false);
      std::vector<int> labels(b);
      for (int i = 0; i < b; ++i) {
        const auto& f = ds.factors(idx[i]);
        target.val()[i * 5 + 0] = static_cast<T>(norm_pos(f.x));
        target.val()[i * 5 + 1] = static_cast<T>(norm_pos(f.y));
        target.val()[i * 5 + 2] = static_cast<T>(norm_rot(f.rotation));
        target.val()[i * 5 + 3] = static_cast<T>(norm_scale(f.scale));
        target.val()[i * 5 + 4] = static_cast<T>(norm_hue(f.hue));
        labels[i] = f.identity;
      }
      auto cont = slice_cols(out, 0, 5);
      auto ident = slice_cols(out, 5, 5 + kNumIdentities);
      auto loss = ops::add(ops::mse(cont, target),
                           ops::scale(ops::softmax_cross_entropy(ident, labels), T(0.25)));
      require(std::isfinite(double(loss.item())), "factor regressor: loss diverged");
      params_.zero_grad();
      backward(loss);
      opt.step();
    }
    params_.set_requires_grad(false);
    trained_ = true;
  }

  FactorPrediction predict(const Image& img) const { return predict_batch({img})[0]; }

  std::vector<FactorPrediction> predict_batch(const std::vector<Image>& imgs) const {
    auto out = raw_outputs(images_to_var<T>(imgs));
    std::vector<FactorPrediction> preds(imgs.size());
    int cols = 5 + kNumIdentities;
    for (size_t i = 0; i < imgs.size(); ++i) {
      const T* row = out.val().data() + i * cols;
      FactorPrediction p;
      p.x = denorm_pos(row[0]);
      p.y = denorm_pos(row[1]);
      p.rotation = denorm_rot(row[2]);
      p.scale = denorm_scale(row[3]);
      p.hue = denorm_hue(row[4]);
      int best = 0;
      for (int k = 1; k < kNumIdentities; ++k)
        if (row[5 + k] > row[5 + best]) best = k;
      p.identity = best;
      preds[i] = p;
    }
    return preds;
  }

  double factor_of(const FactorPrediction& p, const std::string& name) const {
    if (name == "x") return p.x;
    if (name == "y") return p.y;
    if (name == "rotation") return p.rotation;
    if (name == "scale") return p.scale;
    if (name == "hue") return p.hue;
    throw std::runtime_error("unknown factor: " + name);
  }

  // held-out mean absolute error of the rotation factor, the documented gate
  double rotation_mae(const FactorDataset& ds, const std::vector<size_t>& indices) const {
    double acc = 0;
    int chunk = 64;
    size_t done = 0;
    while (done < indices.size()) {
      size_t n = std::min<size_t>(chunk, indices.size() - done);
      std::vector<Image> imgs;
      for (size_t i = 0; i < n; ++i) imgs.push_back(ds.image(indices[done + i]));
      auto preds = predict_batch(imgs);
      for (size_t i = 0; i < n; ++i)
        acc += std::abs(preds[i].rotation - ds.factors(indices[done + i]).rotation);
      done += n;
    }
    return acc / indices.size();
  }

  double rotation_range() const { return 2.0 * ranges_.rot; }

 private:
  double norm_pos(double v) const { return v / ranges_.pos; }
  double denorm_pos(double v) const { return v * ranges_.pos; }
  double norm_rot(double v) const { return v / ranges_.rot; }
  double denorm_rot(double v) const { return v * ranges_.rot; }
  double norm_scale(double v) const {
    double mid = 0.5 * (ranges_.scale_lo + ranges_.scale_hi);
    double half = 0.5 * (ranges_.scale_hi - ranges_.scale_lo);
    return (v - mid) / half;
  }
  double denorm_scale(double v) const {
    double mid = 0.5 * (ranges_.scale_lo + ranges_.scale_hi);
    double half = 0.5 * (ranges_.scale_hi - ranges_.scale_lo);
    return mid + v * half;
  }
  double norm_hue(double v) const { return (v - 0.5 * ranges_.hue_hi) / (0.5 * ranges_.hue_hi); }
  double denorm_hue(double v) const { return 0.5 * ranges_.hue_hi + v * 0.5 * ranges_.hue_hi; }

  static Var<T> slice_cols(const Var<T>& x, int c0, int c1) {
    int b = x.shape()[0], cols = x.shape()[1];
    auto out = make_op<T>({b, c1 - c0}, {x.node()}, [b, cols, c0, c1](Node<T>& n) {
      auto& in = n.inputs[0];
      if (!in->requires_grad) return;
      in->ensure_grad();
      for (int i = 0; i < b; ++i)
        for (int j = c0; j < c1; ++j)
          in->grad[static_cast<long>(i) * cols + j] +=
              n.grad[static_cast<long>(i) * (c1 - c0) + (j - c0)];
    });
    for (int i = 0; i < b; ++i)
      for (int j = c0; j < c1; ++j)
        out.val()[static_cast<long>(i) * (c1 - c0) + (j - c0)] =
            x.val()[static_cast<long>(i) * cols + j];
    return out;
  }

  FactorRanges ranges_;
  ParamStore<T> params_;
  std::vector<Conv2d<T>> conv_;
  Linear<T> head_;
  bool trained_ = false;
};

}  // namespace wcycle
