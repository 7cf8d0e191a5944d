#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wcycle/ops.hpp"
#include "wcycle/rng.hpp"

namespace wcycle {

// Ordered, named registry of trainable leaves. Networks register their
// parameters here; the optimizer and the checkpoint writer iterate it in
// registration order, which fixes the update and serialization order.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Shape shape) {
    auto v = Var<T>::leaf(std::move(shape), true);
    items_.emplace_back(name, v);
    return v;
  }

  Var<T> add_normal(const std::string& name, Shape shape, Rng& rng, double stddev) {
    auto v = add(name, std::move(shape));
    for (auto& x : v.val()) x = static_cast<T>(rng.normal(0.0, stddev));
    return v;
  }

  Var<T> add_full(const std::string& name, Shape shape, T fill) {
    auto v = add(name, std::move(shape));
    std::fill(v.val().begin(), v.val().end(), fill);
    return v;
  }

  size_t size() const { return items_.size(); }
  const std::string& name(size_t i) const { return items_[i].first; }
  Var<T>& param(size_t i) { return items_[i].second; }
  const Var<T>& param(size_t i) const { return items_[i].second; }

  Var<T>* find(const std::string& name) {
    for (auto& [n, v] : items_)
      if (n == name) return &v;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, v] : items_) v.zero_grad();
  }

  void set_requires_grad(bool rg) {
    for (auto& [n, v] : items_) v.set_requires_grad(rg);
  }

  long total_values() const {
    long n = 0;
    for (auto& [nm, v] : items_) n += v.size();
    return n;
  }

  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto& [nm, v] : items_) {
      h = fnv1a(nm, h);
      h = fnv1a(v.val().data(), v.val().size() * sizeof(T), h);
    }
    return h;
  }

  // value copy between stores with identical layout
  void copy_values_from(const ParamStore<T>& src) {
    require(items_.size() == src.items_.size(), "copy_values_from: store size mismatch");
    for (size_t i = 0; i < items_.size(); ++i) {
      require(items_[i].first == src.items_[i].first &&
                  items_[i].second.shape() == src.items_[i].second.shape(),
              "copy_values_from: layout mismatch at " + items_[i].first);
      items_[i].second.val() = src.items_[i].second.val();
    }
  }

  bool values_equal(const ParamStore<T>& other) const {
    if (items_.size() != other.items_.size()) return false;
    for (size_t i = 0; i < items_.size(); ++i)
      if (items_[i].second.val() != other.items_[i].second.val()) return false;
    return true;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
};

template <typename T>
struct Linear {
  Var<T> w, b;

  static Linear create(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
                       double scale = 1.0) {
    Linear l;
    l.w = ps.add_normal(name + ".weight", {in, out}, rng, scale * std::sqrt(2.0 / in));
    l.b = ps.add_full(name + ".bias", {out}, T(0));
    return l;
  }

  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, w, b); }
};

template <typename T>
struct Conv2d {
  Var<T> w, b;
  int stride = 1;

  static Conv2d create(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k,
                       int stride, Rng& rng, double scale = 1.0) {
    Conv2d c;
    c.w = ps.add_normal(name + ".weight", {cout, cin, k, k}, rng,
                        scale * std::sqrt(2.0 / (static_cast<double>(cin) * k * k)));
    c.b = ps.add_full(name + ".bias", {cout}, T(0));
    c.stride = stride;
    return c;
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, w, b, stride); }
};

// First-order adaptive-moment optimizer over one ParamStore.
template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      slots_[i].m.assign(params.param(i).size(), T(0));
      slots_[i].v.assign(params.param(i).size(), T(0));
    }
  }

  void step() { step(lr_); }

  void step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_->size(); ++i) {
      auto& p = params_->param(i);
      if (!p.requires_grad()) continue;
      auto& g = p.grad();
      auto& m = slots_[i].m;
      auto& v = slots_[i].v;
      for (size_t j = 0; j < g.size(); ++j) {
        m[j] = static_cast<T>(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
        v[j] = static_cast<T>(beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j]);
        double mh = m[j] / bc1, vh = v[j] / bc2;
        p.val()[j] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  void zero_grad() { params_->zero_grad(); }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long steps_taken() const { return t_; }

  // state access for checkpoint resume
  std::vector<T>& moment1(size_t i) { return slots_[i].m; }
  std::vector<T>& moment2(size_t i) { return slots_[i].v; }
  void set_steps_taken(long t) { t_ = t; }

 private:
  struct Slot {
    std::vector<T> m, v;
  };
  ParamStore<T>* params_;
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace wcycle
