#pragma once

#include "wcycle/ops.hpp"

namespace wcycle {

// Latent-code value types. These are plain data, independent of any graph;
// batched graph-side counterparts live in CodeBatch below.

struct LatentZ {
  std::vector<double> v;
};

// one style vector shared by all generator layers
struct StyleCode {
  std::vector<double> v;

  int dim() const { return static_cast<int>(v.size()); }
};

// base vector plus per-layer offsets: rows are (w0, w0+d1, ..., w0+d{N-1})
struct ExtendedStyleCode {
  StyleCode base;
  std::vector<std::vector<double>> deltas;  // N-1 entries, each d_w long

  int dim() const { return base.dim(); }
  int n_layers() const { return static_cast<int>(deltas.size()) + 1; }
};

inline void validate(const ExtendedStyleCode& code) {
  require(all_finite(code.base.v), "code: non-finite base");
  for (const auto& d : code.deltas) {
    require(static_cast<int>(d.size()) == code.dim(), "code: delta dimension mismatch");
    require(all_finite(d), "code: non-finite delta");
  }
}

// realizes W as the diagonal of W+: base = w, all offsets zero
inline ExtendedStyleCode broadcast(const StyleCode& w, int n_layers) {
  require(n_layers >= 2, "broadcast: invalid architecture, n_layers must be >= 2");
  ExtendedStyleCode code;
  code.base = w;
  code.deltas.assign(n_layers - 1, std::vector<double>(w.v.size(), 0.0));
  return code;
}

// per-layer style rows; row 0 is the base itself
inline std::vector<std::vector<double>> materialize(const ExtendedStyleCode& code) {
  std::vector<std::vector<double>> rows;
  rows.reserve(code.n_layers());
  rows.push_back(code.base.v);
  for (const auto& d : code.deltas) {
    std::vector<double> row(code.base.v);
    for (size_t j = 0; j < row.size(); ++j) row[j] += d[j];
    rows.push_back(std::move(row));
  }
  return rows;
}

// inverse of materialize
inline ExtendedStyleCode code_from_rows(const std::vector<std::vector<double>>& rows) {
  require(rows.size() >= 2, "code_from_rows: need at least 2 rows");
  ExtendedStyleCode code;
  code.base.v = rows[0];
  for (size_t i = 1; i < rows.size(); ++i) {
    std::vector<double> d(rows[i]);
    for (size_t j = 0; j < d.size(); ++j) d[j] -= rows[0][j];
    code.deltas.push_back(std::move(d));
  }
  return code;
}

// value-level Eq.-style offset penalty: sum of Euclidean norms of the deltas
inline double delta_norm_sum(const ExtendedStyleCode& code) {
  double total = 0;
  for (const auto& d : code.deltas) {
    double ss = 0;
    for (double x : d) ss += x * x;
    total += std::sqrt(ss);
  }
  return total;
}

// noise inputs, one map per synthesis layer
struct NoiseMaps {
  std::vector<std::vector<double>> maps;
  std::vector<std::pair<int, int>> shapes;  // (h, w) per layer

  bool empty() const { return maps.empty(); }
};

// Batched graph-side code: base [B,dw] plus N-1 delta vars [B,dw].
template <typename T>
struct CodeBatch {
  Var<T> base;
  std::vector<Var<T>> deltas;

  int n_layers() const { return static_cast<int>(deltas.size()) + 1; }
  int batch() const { return base.shape()[0]; }

  std::vector<Var<T>> rows() const {
    std::vector<Var<T>> out;
    out.reserve(deltas.size() + 1);
    out.push_back(base);
    for (const auto& d : deltas) out.push_back(ops::add(base, d));
    return out;
  }
};

template <typename T>
CodeBatch<T> code_to_batch(const ExtendedStyleCode& code, bool requires_grad = false) {
  CodeBatch<T> cb;
  std::vector<T> bv(code.base.v.begin(), code.base.v.end());
  cb.base = Var<T>::from_values({1, code.dim()}, std::move(bv), requires_grad);
  for (const auto& d : code.deltas) {
    std::vector<T> dv(d.begin(), d.end());
    cb.deltas.push_back(Var<T>::from_values({1, code.dim()}, std::move(dv), requires_grad));
  }
  return cb;
}

template <typename T>
ExtendedStyleCode batch_to_code(const CodeBatch<T>& cb, int batch_index = 0) {
  ExtendedStyleCode code;
  int d = cb.base.shape()[1];
  code.base.v.resize(d);
  for (int j = 0; j < d; ++j)
    code.base.v[j] = static_cast<double>(cb.base.val()[batch_index * d + j]);
  for (const auto& dv : cb.deltas) {
    std::vector<double> row(d);
    for (int j = 0; j < d; ++j) row[j] = static_cast<double>(dv.val()[batch_index * d + j]);
    code.deltas.push_back(std::move(row));
  }
  return code;
}

}  // namespace wcycle
