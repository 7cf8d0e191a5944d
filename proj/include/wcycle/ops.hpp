#pragma once

#include <Eigen/Core>
#include <cmath>

#include "wcycle/tensor.hpp"

namespace wcycle {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Backward closures read input values through the graph (inputs are kept
// alive by the node's shared_ptrs), so ops never copy activations.

namespace ops {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = make_op<T>(a.shape(), {a.node(), b.node()}, [](Node<T>& n) {
    for (int k = 0; k < 2; ++k) {
      auto& in = n.inputs[k];
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
    }
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = a.val()[i] + b.val()[i];
  return out;
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  auto out = make_op<T>(a.shape(), {a.node(), b.node()}, [](Node<T>& n) {
    if (n.inputs[0]->requires_grad) {
      n.inputs[0]->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) n.inputs[0]->grad[i] += n.grad[i];
    }
    if (n.inputs[1]->requires_grad) {
      n.inputs[1]->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) n.inputs[1]->grad[i] -= n.grad[i];
    }
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = a.val()[i] - b.val()[i];
  return out;
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  auto out = make_op<T>(a.shape(), {a.node(), b.node()}, [](Node<T>& n) {
    const auto& av = n.inputs[0]->val;
    const auto& bv = n.inputs[1]->val;
    if (n.inputs[0]->requires_grad) {
      n.inputs[0]->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) n.inputs[0]->grad[i] += n.grad[i] * bv[i];
    }
    if (n.inputs[1]->requires_grad) {
      n.inputs[1]->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) n.inputs[1]->grad[i] += n.grad[i] * av[i];
    }
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = a.val()[i] * b.val()[i];
  return out;
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "div: shape mismatch");
  auto out = make_op<T>(a.shape(), {a.node(), b.node()}, [](Node<T>& n) {
    const auto& av = n.inputs[0]->val;
    const auto& bv = n.inputs[1]->val;
    if (n.inputs[0]->requires_grad) {
      n.inputs[0]->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) n.inputs[0]->grad[i] += n.grad[i] / bv[i];
    }
    if (n.inputs[1]->requires_grad) {
      n.inputs[1]->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        n.inputs[1]->grad[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = a.val()[i] / b.val()[i];
  return out;
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  auto out = make_op<T>(a.shape(), {a.node()}, [s](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += s * n.grad[i];
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = s * a.val()[i];
  return out;
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  auto out = make_op<T>(a.shape(), {a.node()}, [](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = a.val()[i] + c;
  return out;
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

// value copy with no graph connection
template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>::from_values(a.shape(), a.val(), false);
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  require(numel(shape) == a.size(), "reshape: size mismatch");
  auto out = make_op<T>(std::move(shape), {a.node()}, [](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
  });
  out.val() = a.val();
  return out;
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T alpha = T(0.2)) {
  auto out = make_op<T>(a.shape(), {a.node()}, [alpha](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    const auto& av = in->val;
    for (size_t i = 0; i < n.grad.size(); ++i)
      in->grad[i] += n.grad[i] * (av[i] > T(0) ? T(1) : alpha);
  });
  for (long i = 0; i < out.size(); ++i) {
    T x = a.val()[i];
    out.val()[i] = x > T(0) ? x : alpha * x;
  }
  return out;
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
  auto out = make_op<T>(a.shape(), {a.node()}, [](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      in->grad[i] += n.grad[i] * (T(1) - n.val[i] * n.val[i]);
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = std::tanh(a.val()[i]);
  return out;
}

// numerically stable log(1 + exp(x))
template <typename T>
Var<T> softplus(const Var<T>& a) {
  auto out = make_op<T>(a.shape(), {a.node()}, [](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    const auto& av = in->val;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T x = av[i];
      T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      in->grad[i] += n.grad[i] * sig;
    }
  });
  for (long i = 0; i < out.size(); ++i) {
    T x = a.val()[i];
    out.val()[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  return out;
}

template <typename T>
Var<T> square(const Var<T>& a) {
  auto out = make_op<T>(a.shape(), {a.node()}, [](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    const auto& av = in->val;
    for (size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i] * T(2) * av[i];
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = a.val()[i] * a.val()[i];
  return out;
}

template <typename T>
Var<T> sqrt_op(const Var<T>& a, T eps = T(0)) {
  auto out = make_op<T>(a.shape(), {a.node()}, [](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      in->grad[i] += n.grad[i] / (T(2) * n.val[i]);
  });
  for (long i = 0; i < out.size(); ++i) out.val()[i] = std::sqrt(a.val()[i] + eps);
  return out;
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  auto out = make_op<T>({1}, {a.node()}, [](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += n.grad[0];
  });
  T acc = T(0);
  for (long i = 0; i < a.size(); ++i) acc += a.val()[i];
  out.val()[0] = acc;
  return out;
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  T inv = T(1) / T(a.size());
  auto out = make_op<T>({1}, {a.node()}, [inv](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += n.grad[0] * inv;
  });
  T acc = T(0);
  for (long i = 0; i < a.size(); ++i) acc += a.val()[i];
  out.val()[0] = acc * inv;
  return out;
}

// mean squared difference, the pixel-wise L2 loss
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T inv = T(1) / T(a.size());
  auto out = make_op<T>({1}, {a.node(), b.node()}, [inv](Node<T>& n) {
    const auto& av = n.inputs[0]->val;
    const auto& bv = n.inputs[1]->val;
    T g = n.grad[0] * T(2) * inv;
    if (n.inputs[0]->requires_grad) {
      n.inputs[0]->ensure_grad();
      for (size_t i = 0; i < av.size(); ++i) n.inputs[0]->grad[i] += g * (av[i] - bv[i]);
    }
    if (n.inputs[1]->requires_grad) {
      n.inputs[1]->ensure_grad();
      for (size_t i = 0; i < av.size(); ++i) n.inputs[1]->grad[i] -= g * (av[i] - bv[i]);
    }
  });
  T acc = T(0);
  for (long i = 0; i < a.size(); ++i) {
    T d = a.val()[i] - b.val()[i];
    acc += d * d;
  }
  out.val()[0] = acc * inv;
  return out;
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
          "matmul: bad shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int m = a.shape()[0], k = a.shape()[1], n_ = b.shape()[1];
  auto out = make_op<T>({m, n_}, {a.node(), b.node()}, [m, k, n_](Node<T>& n) {
    ConstMatMap<T> A(n.inputs[0]->val.data(), m, k), B(n.inputs[1]->val.data(), k, n_),
        G(n.grad.data(), m, n_);
    if (n.inputs[0]->requires_grad) {
      n.inputs[0]->ensure_grad();
      MatMap<T> dA(n.inputs[0]->grad.data(), m, k);
      dA.noalias() += G * B.transpose();
    }
    if (n.inputs[1]->requires_grad) {
      n.inputs[1]->ensure_grad();
      MatMap<T> dB(n.inputs[1]->grad.data(), k, n_);
      dB.noalias() += A.transpose() * G;
    }
  });
  ConstMatMap<T> A(a.val().data(), m, k), B(b.val().data(), k, n_);
  MatMap<T> O(out.val().data(), m, n_);
  O.noalias() = A * B;
  return out;
}

// x[B,K] * w[K,N] + bias[N]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  require(x.shape().size() == 2 && w.shape().size() == 2 && x.shape()[1] == w.shape()[0],
          "linear: bad shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  require(bias.shape() == Shape{w.shape()[1]}, "linear: bad bias shape");
  int bsz = x.shape()[0], k = x.shape()[1], n_ = w.shape()[1];
  auto out = make_op<T>({bsz, n_}, {x.node(), w.node(), bias.node()}, [bsz, k, n_](Node<T>& n) {
    ConstMatMap<T> X(n.inputs[0]->val.data(), bsz, k), W(n.inputs[1]->val.data(), k, n_),
        G(n.grad.data(), bsz, n_);
    if (n.inputs[0]->requires_grad) {
      n.inputs[0]->ensure_grad();
      MatMap<T> dX(n.inputs[0]->grad.data(), bsz, k);
      dX.noalias() += G * W.transpose();
    }
    if (n.inputs[1]->requires_grad) {
      n.inputs[1]->ensure_grad();
      MatMap<T> dW(n.inputs[1]->grad.data(), k, n_);
      dW.noalias() += X.transpose() * G;
    }
    if (n.inputs[2]->requires_grad) {
      n.inputs[2]->ensure_grad();
      for (int j = 0; j < n_; ++j) {
        T acc = T(0);
        for (int b = 0; b < bsz; ++b) acc += G(b, j);
        n.inputs[2]->grad[j] += acc;
      }
    }
  });
  ConstMatMap<T> X(x.val().data(), bsz, k), W(w.val().data(), k, n_);
  MatMap<T> O(out.val().data(), bsz, n_);
  O.noalias() = X * W;
  for (int b = 0; b < bsz; ++b)
    for (int j = 0; j < n_; ++j) O(b, j) += bias.val()[j];
  return out;
}

namespace detail {

// Patch-major layout: col[(ci*kh+ky)*kw+kx][oy*wo+ox]. For stride 1 every
// (ci,ky,kx) slice is a shifted copy of an input row, so the inner loop is
// a contiguous run.
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, T* col) {
  long opix = static_cast<long>(ho) * wo;
  long pidx = 0;
  for (int ci = 0; ci < c; ++ci) {
    const T* xc = x + static_cast<long>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++pidx) {
        T* dst = col + pidx * opix;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ky;
          T* drow = dst + static_cast<long>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + wo, T(0));
            continue;
          }
          const T* srow = xc + static_cast<long>(iy) * w;
          if (stride == 1) {
            int ix0 = kx - pad;
            int lo = std::max(0, -ix0);           // first valid ox
            int hi = std::min(wo, w - ix0);        // one past last valid ox
            if (lo > 0) std::fill(drow, drow + lo, T(0));
            if (hi > lo) std::copy(srow + ix0 + lo, srow + ix0 + hi, drow + lo);
            if (hi < wo) std::fill(drow + std::max(hi, lo), drow + wo, T(0));
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox * stride - pad + kx;
              drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, T* dx) {
  long opix = static_cast<long>(ho) * wo;
  long pidx = 0;
  for (int ci = 0; ci < c; ++ci) {
    T* xc = dx + static_cast<long>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++pidx) {
        const T* src = col + pidx * opix;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* srow = src + static_cast<long>(oy) * wo;
          T* drow = xc + static_cast<long>(iy) * w;
          if (stride == 1) {
            int ix0 = kx - pad;
            int lo = std::max(0, -ix0);
            int hi = std::min(wo, w - ix0);
            for (int ox = lo; ox < hi; ++ox) drow[ix0 + ox] += srow[ox];
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// x[B,Ci,H,W], w[Co,Ci,kh,kw], bias[Co]. Per-sample patch-major im2col plus
// a plain row-major GEMM whose result lands directly in the [Co,Ho,Wo]
// output block; the col buffer is kept alive for the backward pass.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride = 1,
              int pad = -1) {
  require(x.shape().size() == 4 && w.shape().size() == 4, "conv2d: need 4-d input and weight");
  int bsz = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  int co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  require(w.shape()[1] == ci, "conv2d: channel mismatch");
  require(bias.shape() == Shape{co}, "conv2d: bad bias shape");
  if (pad < 0) pad = kh / 2;
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (wd + 2 * pad - kw) / stride + 1;
  long patch = static_cast<long>(ci) * kh * kw;
  long opix = static_cast<long>(ho) * wo;

  auto col = std::make_shared<std::vector<T>>(static_cast<size_t>(bsz) * patch * opix);
  for (int b = 0; b < bsz; ++b)
    detail::im2col(x.val().data() + static_cast<long>(b) * ci * h * wd, ci, h, wd, kh, kw,
                   stride, pad, ho, wo, col->data() + static_cast<long>(b) * patch * opix);

  auto out = make_op<T>(
      {bsz, co, ho, wo}, {x.node(), w.node(), bias.node()},
      [col, bsz, ci, h, wd, co, kh, kw, stride, pad, ho, wo, patch, opix](Node<T>& n) {
        ConstMatMap<T> W(n.inputs[1]->val.data(), co, patch);
        bool need_dw = n.inputs[1]->requires_grad;
        bool need_db = n.inputs[2]->requires_grad;
        bool need_dx = n.inputs[0]->requires_grad;
        if (need_dw) n.inputs[1]->ensure_grad();
        if (need_db) n.inputs[2]->ensure_grad();
        if (need_dx) n.inputs[0]->ensure_grad();
        std::vector<T> dcol;
        if (need_dx) dcol.resize(static_cast<size_t>(patch) * opix);
        for (int b = 0; b < bsz; ++b) {
          ConstMatMap<T> Gb(n.grad.data() + static_cast<long>(b) * co * opix, co, opix);
          ConstMatMap<T> Cb(col->data() + static_cast<long>(b) * patch * opix, patch, opix);
          if (need_dw) {
            MatMap<T> dW(n.inputs[1]->grad.data(), co, patch);
            dW.noalias() += Gb * Cb.transpose();
          }
          if (need_db) {
            for (int c = 0; c < co; ++c) {
              T acc = T(0);
              const T* g = n.grad.data() + (static_cast<long>(b) * co + c) * opix;
              for (long p = 0; p < opix; ++p) acc += g[p];
              n.inputs[2]->grad[c] += acc;
            }
          }
          if (need_dx) {
            MatMap<T> DC(dcol.data(), patch, opix);
            DC.noalias() = W.transpose() * Gb;
            detail::col2im_add(dcol.data(), ci, h, wd, kh, kw, stride, pad, ho, wo,
                               n.inputs[0]->grad.data() + static_cast<long>(b) * ci * h * wd);
          }
        }
      });

  ConstMatMap<T> W(w.val().data(), co, patch);
  for (int b = 0; b < bsz; ++b) {
    ConstMatMap<T> Cb(col->data() + static_cast<long>(b) * patch * opix, patch, opix);
    MatMap<T> Ob(out.val().data() + static_cast<long>(b) * co * opix, co, opix);
    Ob.noalias() = W * Cb;
  }
  for (int b = 0; b < bsz; ++b)
    for (int c = 0; c < co; ++c) {
      T* dst = out.val().data() + (static_cast<long>(b) * co + c) * opix;
      T bv = bias.val()[c];
      for (long p = 0; p < opix; ++p) dst[p] += bv;
    }
  return out;
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  require(x.shape().size() == 4, "upsample2x: need 4-d input");
  int bsz = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  auto out = make_op<T>({bsz, c, 2 * h, 2 * w}, {x.node()}, [bsz, c, h, w](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
      const T* g = n.grad.data() + bc * 4 * h * w;
      T* d = in->grad.data() + bc * h * w;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          d[i * w + j] += g[(2 * i) * 2 * w + 2 * j] + g[(2 * i) * 2 * w + 2 * j + 1] +
                          g[(2 * i + 1) * 2 * w + 2 * j] + g[(2 * i + 1) * 2 * w + 2 * j + 1];
    }
  });
  for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
    const T* s = x.val().data() + bc * h * w;
    T* d = out.val().data() + bc * 4 * h * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        T v = s[i * w + j];
        d[(2 * i) * 2 * w + 2 * j] = v;
        d[(2 * i) * 2 * w + 2 * j + 1] = v;
        d[(2 * i + 1) * 2 * w + 2 * j] = v;
        d[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
      }
  }
  return out;
}

template <typename T>
Var<T> avgpool2x(const Var<T>& x) {
  require(x.shape().size() == 4, "avgpool2x: need 4-d input");
  int bsz = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(h % 2 == 0 && w % 2 == 0, "avgpool2x: odd spatial size");
  int ho = h / 2, wo = w / 2;
  auto out = make_op<T>({bsz, c, ho, wo}, {x.node()}, [bsz, c, h, w, ho, wo](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
      const T* g = n.grad.data() + bc * ho * wo;
      T* d = in->grad.data() + bc * h * w;
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          T v = g[i * wo + j] * T(0.25);
          d[(2 * i) * w + 2 * j] += v;
          d[(2 * i) * w + 2 * j + 1] += v;
          d[(2 * i + 1) * w + 2 * j] += v;
          d[(2 * i + 1) * w + 2 * j + 1] += v;
        }
    }
  });
  for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
    const T* s = x.val().data() + bc * h * w;
    T* d = out.val().data() + bc * ho * wo;
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j)
        d[i * wo + j] = (s[(2 * i) * w + 2 * j] + s[(2 * i) * w + 2 * j + 1] +
                         s[(2 * i + 1) * w + 2 * j] + s[(2 * i + 1) * w + 2 * j + 1]) *
                        T(0.25);
  }
  return out;
}

// [B,C,H,W] -> [B,C]
template <typename T>
Var<T> global_avgpool(const Var<T>& x) {
  require(x.shape().size() == 4, "global_avgpool: need 4-d input");
  int bsz = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  long hw = static_cast<long>(h) * w;
  T inv = T(1) / T(hw);
  auto out = make_op<T>({bsz, c}, {x.node()}, [bsz, c, hw, inv](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
      T g = n.grad[bc] * inv;
      T* d = in->grad.data() + bc * hw;
      for (long i = 0; i < hw; ++i) d[i] += g;
    }
  });
  for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
    const T* s = x.val().data() + bc * hw;
    T acc = T(0);
    for (long i = 0; i < hw; ++i) acc += s[i];
    out.val()[bc] = acc * inv;
  }
  return out;
}

// per-sample, per-channel normalization over the spatial extent (no affine)
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5)) {
  require(x.shape().size() == 4, "instance_norm: need 4-d input");
  int bsz = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  long hw = static_cast<long>(h) * w;
  T inv = T(1) / T(hw);
  auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<size_t>(bsz) * c);
  auto out = make_op<T>(x.shape(), {x.node()}, [bsz, c, hw, inv, inv_sigma](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
      const T* y = n.val.data() + bc * hw;
      const T* g = n.grad.data() + bc * hw;
      T* d = in->grad.data() + bc * hw;
      T gmean = T(0), gymean = T(0);
      for (long i = 0; i < hw; ++i) {
        gmean += g[i];
        gymean += g[i] * y[i];
      }
      gmean *= inv;
      gymean *= inv;
      T is = (*inv_sigma)[bc];
      for (long i = 0; i < hw; ++i) d[i] += is * (g[i] - gmean - y[i] * gymean);
    }
  });
  for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
    const T* s = x.val().data() + bc * hw;
    T* d = out.val().data() + bc * hw;
    T mu = T(0);
    for (long i = 0; i < hw; ++i) mu += s[i];
    mu *= inv;
    T var = T(0);
    for (long i = 0; i < hw; ++i) {
      T t = s[i] - mu;
      var += t * t;
    }
    var *= inv;
    T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[bc] = is;
    for (long i = 0; i < hw; ++i) d[i] = (s[i] - mu) * is;
  }
  return out;
}

// y = x * (1 + s) + t with s,t of shape [B,C] broadcast over H,W
template <typename T>
Var<T> mod_scale_shift(const Var<T>& x, const Var<T>& s, const Var<T>& t) {
  require(x.shape().size() == 4, "mod_scale_shift: need 4-d input");
  int bsz = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(s.shape() == Shape({bsz, c}) && t.shape() == Shape({bsz, c}),
          "mod_scale_shift: bad style shape");
  long hw = static_cast<long>(h) * w;
  auto out = make_op<T>(x.shape(), {x.node(), s.node(), t.node()}, [bsz, c, hw](Node<T>& n) {
    const auto& xv = n.inputs[0]->val;
    const auto& sv = n.inputs[1]->val;
    for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
      const T* g = n.grad.data() + bc * hw;
      const T* xs = xv.data() + bc * hw;
      if (n.inputs[0]->requires_grad) {
        n.inputs[0]->ensure_grad();
        T* d = n.inputs[0]->grad.data() + bc * hw;
        T m = T(1) + sv[bc];
        for (long i = 0; i < hw; ++i) d[i] += g[i] * m;
      }
      if (n.inputs[1]->requires_grad) {
        n.inputs[1]->ensure_grad();
        T acc = T(0);
        for (long i = 0; i < hw; ++i) acc += g[i] * xs[i];
        n.inputs[1]->grad[bc] += acc;
      }
      if (n.inputs[2]->requires_grad) {
        n.inputs[2]->ensure_grad();
        T acc = T(0);
        for (long i = 0; i < hw; ++i) acc += g[i];
        n.inputs[2]->grad[bc] += acc;
      }
    }
  });
  for (long bc = 0; bc < static_cast<long>(bsz) * c; ++bc) {
    const T* xs = x.val().data() + bc * hw;
    T* d = out.val().data() + bc * hw;
    T m = T(1) + s.val()[bc], tt = t.val()[bc];
    for (long i = 0; i < hw; ++i) d[i] = xs[i] * m + tt;
  }
  return out;
}

// y = x + gain * n, n of shape [H,W] or [B,H,W], broadcast over channels
template <typename T>
Var<T> add_noise(const Var<T>& x, const Var<T>& noise, const Var<T>& gain) {
  require(x.shape().size() == 4, "add_noise: need 4-d input");
  int bsz = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  bool batched = noise.shape().size() == 3;
  require((batched && noise.shape() == Shape({bsz, h, w})) ||
              (!batched && noise.shape() == Shape({h, w})),
          "add_noise: bad noise shape " + shape_str(noise.shape()));
  require(gain.size() == 1, "add_noise: gain must be scalar");
  long hw = static_cast<long>(h) * w;
  T g0 = gain.val()[0];
  auto out = make_op<T>(
      x.shape(), {x.node(), noise.node(), gain.node()}, [g0, bsz, c, hw, batched](Node<T>& n) {
        const auto& nv = n.inputs[1]->val;
        if (n.inputs[0]->requires_grad) {
          n.inputs[0]->ensure_grad();
          for (size_t i = 0; i < n.grad.size(); ++i) n.inputs[0]->grad[i] += n.grad[i];
        }
        if (n.inputs[1]->requires_grad) {
          n.inputs[1]->ensure_grad();
          for (int b = 0; b < bsz; ++b)
            for (int ci = 0; ci < c; ++ci) {
              const T* g = n.grad.data() + (static_cast<long>(b) * c + ci) * hw;
              T* d = n.inputs[1]->grad.data() + (batched ? static_cast<long>(b) * hw : 0);
              for (long i = 0; i < hw; ++i) d[i] += g0 * g[i];
            }
        }
        if (n.inputs[2]->requires_grad) {
          n.inputs[2]->ensure_grad();
          T acc = T(0);
          for (int b = 0; b < bsz; ++b)
            for (int ci = 0; ci < c; ++ci) {
              const T* g = n.grad.data() + (static_cast<long>(b) * c + ci) * hw;
              const T* np = nv.data() + (batched ? static_cast<long>(b) * hw : 0);
              for (long i = 0; i < hw; ++i) acc += g[i] * np[i];
            }
          n.inputs[2]->grad[0] += acc;
        }
      });
  for (int b = 0; b < bsz; ++b)
    for (int ci = 0; ci < c; ++ci) {
      const T* xs = x.val().data() + (static_cast<long>(b) * c + ci) * hw;
      const T* np = noise.val().data() + (batched ? static_cast<long>(b) * hw : 0);
      T* d = out.val().data() + (static_cast<long>(b) * c + ci) * hw;
      for (long i = 0; i < hw; ++i) d[i] = xs[i] + g0 * np[i];
    }
  return out;
}

// rows scaled to unit length: y_b = x_b / sqrt(|x_b|^2 + eps)
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-8)) {
  require(x.shape().size() == 2, "l2_normalize_rows: need 2-d input");
  int bsz = x.shape()[0], d = x.shape()[1];
  auto inv_norm = std::make_shared<std::vector<T>>(bsz);
  auto out = make_op<T>(x.shape(), {x.node()}, [inv_norm, bsz, d](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (int b = 0; b < bsz; ++b) {
      const T* y = n.val.data() + static_cast<long>(b) * d;
      const T* g = n.grad.data() + static_cast<long>(b) * d;
      T* dd = in->grad.data() + static_cast<long>(b) * d;
      T dot = T(0);
      for (int j = 0; j < d; ++j) dot += g[j] * y[j];
      T is = (*inv_norm)[b];
      for (int j = 0; j < d; ++j) dd[j] += is * (g[j] - y[j] * dot);
    }
  });
  for (int b = 0; b < bsz; ++b) {
    const T* s = x.val().data() + static_cast<long>(b) * d;
    T* dst = out.val().data() + static_cast<long>(b) * d;
    T ss = eps;
    for (int j = 0; j < d; ++j) ss += s[j] * s[j];
    T is = T(1) / std::sqrt(ss);
    (*inv_norm)[b] = is;
    for (int j = 0; j < d; ++j) dst[j] = s[j] * is;
  }
  return out;
}

// [B,D] x [B,D] -> [B]
template <typename T>
Var<T> rowwise_dot(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape() && a.shape().size() == 2, "rowwise_dot: bad shapes");
  int bsz = a.shape()[0], d = a.shape()[1];
  auto out = make_op<T>({bsz}, {a.node(), b.node()}, [bsz, d](Node<T>& n) {
    const auto& av = n.inputs[0]->val;
    const auto& bv = n.inputs[1]->val;
    for (int b = 0; b < bsz; ++b) {
      T g = n.grad[b];
      if (n.inputs[0]->requires_grad) {
        n.inputs[0]->ensure_grad();
        T* da = n.inputs[0]->grad.data() + static_cast<long>(b) * d;
        const T* bb = bv.data() + static_cast<long>(b) * d;
        for (int j = 0; j < d; ++j) da[j] += g * bb[j];
      }
      if (n.inputs[1]->requires_grad) {
        n.inputs[1]->ensure_grad();
        T* db = n.inputs[1]->grad.data() + static_cast<long>(b) * d;
        const T* aa = av.data() + static_cast<long>(b) * d;
        for (int j = 0; j < d; ++j) db[j] += g * aa[j];
      }
    }
  });
  for (int r = 0; r < bsz; ++r) {
    T acc = T(0);
    const T* aa = a.val().data() + static_cast<long>(r) * d;
    const T* bb = b.val().data() + static_cast<long>(r) * d;
    for (int j = 0; j < d; ++j) acc += aa[j] * bb[j];
    out.val()[r] = acc;
  }
  return out;
}

// Euclidean norm per row: [B,D] -> [B]; gradient is 0 at exactly-zero rows
template <typename T>
Var<T> norm_rows(const Var<T>& x, T eps = T(1e-12)) {
  require(x.shape().size() == 2, "norm_rows: need 2-d input");
  int bsz = x.shape()[0], d = x.shape()[1];
  auto out = make_op<T>({bsz}, {x.node(), }, [bsz, d, eps](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    const auto& xv = in->val;
    for (int b = 0; b < bsz; ++b) {
      T denom = std::sqrt(n.val[b] * n.val[b] + eps);
      T g = n.grad[b] / denom;
      const T* s = xv.data() + static_cast<long>(b) * d;
      T* dd = in->grad.data() + static_cast<long>(b) * d;
      for (int j = 0; j < d; ++j) dd[j] += g * s[j];
    }
  });
  for (int b = 0; b < bsz; ++b) {
    const T* s = x.val().data() + static_cast<long>(b) * d;
    T ss = T(0);
    for (int j = 0; j < d; ++j) ss += s[j] * s[j];
    out.val()[b] = std::sqrt(ss);
  }
  return out;
}

// LPIPS-style: unit-normalize the channel vector at every spatial position
template <typename T>
Var<T> channel_unit_normalize(const Var<T>& x, T eps = T(1e-10)) {
  require(x.shape().size() == 4, "channel_unit_normalize: need 4-d input");
  int bsz = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  long hw = static_cast<long>(h) * w;
  auto inv_norm = std::make_shared<std::vector<T>>(static_cast<size_t>(bsz) * hw);
  auto out = make_op<T>(x.shape(), {x.node()}, [inv_norm, bsz, c, hw](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (int b = 0; b < bsz; ++b)
      for (long p = 0; p < hw; ++p) {
        T dot = T(0);
        for (int ci = 0; ci < c; ++ci) {
          long idx = (static_cast<long>(b) * c + ci) * hw + p;
          dot += n.grad[idx] * n.val[idx];
        }
        T is = (*inv_norm)[static_cast<long>(b) * hw + p];
        for (int ci = 0; ci < c; ++ci) {
          long idx = (static_cast<long>(b) * c + ci) * hw + p;
          in->grad[idx] += is * (n.grad[idx] - n.val[idx] * dot);
        }
      }
  });
  for (int b = 0; b < bsz; ++b)
    for (long p = 0; p < hw; ++p) {
      T ss = eps;
      for (int ci = 0; ci < c; ++ci) {
        T v = x.val()[(static_cast<long>(b) * c + ci) * hw + p];
        ss += v * v;
      }
      T is = T(1) / std::sqrt(ss);
      (*inv_norm)[static_cast<long>(b) * hw + p] = is;
      for (int ci = 0; ci < c; ++ci) {
        long idx = (static_cast<long>(b) * c + ci) * hw + p;
        out.val()[idx] = x.val()[idx] * is;
      }
    }
  return out;
}

// circular shift by one along the last (roll_w) or second-to-last (roll_h) axis
template <typename T>
Var<T> roll_last(const Var<T>& x, bool along_h) {
  require(x.shape().size() >= 2, "roll_last: need >= 2-d input");
  int h = x.shape()[x.shape().size() - 2];
  int w = x.shape()[x.shape().size() - 1];
  long planes = x.size() / (static_cast<long>(h) * w);
  auto out = make_op<T>(x.shape(), {x.node()}, [planes, h, w, along_h](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (long pl = 0; pl < planes; ++pl) {
      const T* g = n.grad.data() + pl * h * w;
      T* d = in->grad.data() + pl * h * w;
      if (along_h) {
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j)
            d[(static_cast<long>((i + 1) % h)) * w + j] += g[static_cast<long>(i) * w + j];
      } else {
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j)
            d[static_cast<long>(i) * w + (j + 1) % w] += g[static_cast<long>(i) * w + j];
      }
    }
  });
  for (long pl = 0; pl < planes; ++pl) {
    const T* s = x.val().data() + pl * h * w;
    T* d = out.val().data() + pl * h * w;
    if (along_h) {
      for (int i = 0; i < h; ++i) {
        const T* row = s + (static_cast<long>((i + 1) % h)) * w;
        for (int j = 0; j < w; ++j) d[static_cast<long>(i) * w + j] = row[j];
      }
    } else {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          d[static_cast<long>(i) * w + j] = s[static_cast<long>(i) * w + (j + 1) % w];
    }
  }
  return out;
}

// replicate a [C,H,W] tensor across a batch dimension
template <typename T>
Var<T> tile_batch(const Var<T>& x, int bsz) {
  require(x.shape().size() == 3, "tile_batch: need 3-d input");
  long per = x.size();
  Shape out_shape{bsz, x.shape()[0], x.shape()[1], x.shape()[2]};
  auto out = make_op<T>(out_shape, {x.node()}, [bsz, per](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    for (int b = 0; b < bsz; ++b)
      for (long i = 0; i < per; ++i) in->grad[i] += n.grad[static_cast<long>(b) * per + i];
  });
  for (int b = 0; b < bsz; ++b)
    for (long i = 0; i < per; ++i) out.val()[static_cast<long>(b) * per + i] = x.val()[i];
  return out;
}

// mean cross entropy over the batch; labels are class indices
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  require(logits.shape().size() == 2, "softmax_cross_entropy: need 2-d logits");
  int bsz = logits.shape()[0], k = logits.shape()[1];
  require(static_cast<int>(labels.size()) == bsz, "softmax_cross_entropy: label count");
  auto probs = std::make_shared<std::vector<T>>(logits.val());
  T loss = T(0);
  for (int b = 0; b < bsz; ++b) {
    T* row = probs->data() + static_cast<long>(b) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (int j = 0; j < k; ++j) row[j] /= z;
    loss -= std::log(std::max(row[labels[b]], T(1e-20)));
  }
  loss /= T(bsz);
  auto out = make_op<T>({1}, {logits.node()}, [probs, labels, bsz, k](Node<T>& n) {
    auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    in->ensure_grad();
    T g = n.grad[0] / T(bsz);
    for (int b = 0; b < bsz; ++b)
      for (int j = 0; j < k; ++j) {
        T p = (*probs)[static_cast<long>(b) * k + j];
        in->grad[static_cast<long>(b) * k + j] += g * (p - (j == labels[b] ? T(1) : T(0)));
      }
  });
  out.val()[0] = loss;
  return out;
}

}  // namespace ops
}  // namespace wcycle
