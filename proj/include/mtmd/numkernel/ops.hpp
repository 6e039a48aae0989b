/* Copyright 2026 The MTMD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtmd/errors.hpp"
#include "mtmd/numkernel/graph.hpp"
#include "mtmd/numkernel/tensor.hpp"

namespace mtmd::nk {

enum class Mode { kTrain, kInfer };

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ConfigError(std::string(op) + ": " + what);
}

inline std::string shapes(const Tensor2& a, const Tensor2& b) {
  return a.shape_string() + " vs " + b.shape_string();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense algebra

// y = x W^T + b for every row x. W is (d_out x d_in); b is 1 x d_out or absent.
inline Var linear(Graph& g, Var x, Var w, Var b = {}) {
  const Tensor2& X = g.value(x);
  const Tensor2& W = g.value(w);
  detail::require(X.cols() == W.cols(), "linear", "input/weight " + detail::shapes(X, W));
  Tensor2 y(X.rows(), W.rows());
  y.mat().noalias() = X.mat() * W.mat().transpose();
  if (b.valid()) {
    const Tensor2& B = g.value(b);
    detail::require(B.rows() == 1 && B.cols() == W.rows(), "linear",
                    "bias " + B.shape_string() + " for output dim " + std::to_string(W.rows()));
    y.mat().rowwise() += B.mat().row(0);
  }
  return g.emit(std::move(y), {x, w, b}, [x, w, b](Graph& g, const Tensor2& dy) {
    if (g.requires_grad(x)) g.grad(x).mat().noalias() += dy.mat() * g.value(w).mat();
    if (g.requires_grad(w)) g.grad(w).mat().noalias() += dy.mat().transpose() * g.value(x).mat();
    if (b.valid() && g.requires_grad(b)) g.grad(b).mat().row(0) += dy.mat().colwise().sum();
  });
}

// A (n x k) times B (k x m).
inline Var matmul(Graph& g, Var a, Var b) {
  const Tensor2& A = g.value(a);
  const Tensor2& B = g.value(b);
  detail::require(A.cols() == B.rows(), "matmul", detail::shapes(A, B));
  Tensor2 y(A.rows(), B.cols());
  y.mat().noalias() = A.mat() * B.mat();
  return g.emit(std::move(y), {a, b}, [a, b](Graph& g, const Tensor2& dy) {
    if (g.requires_grad(a)) g.grad(a).mat().noalias() += dy.mat() * g.value(b).mat().transpose();
    if (g.requires_grad(b)) g.grad(b).mat().noalias() += g.value(a).mat().transpose() * dy.mat();
  });
}

inline Var add(Graph& g, Var a, Var b) {
  const Tensor2& A = g.value(a);
  const Tensor2& B = g.value(b);
  detail::require(A.same_shape(B), "add", detail::shapes(A, B));
  Tensor2 y = A;
  y += B;
  return g.emit(std::move(y), {a, b}, [a, b](Graph& g, const Tensor2& dy) {
    if (g.requires_grad(a)) g.grad(a) += dy;
    if (g.requires_grad(b)) g.grad(b) += dy;
  });
}

// Elementwise product.
inline Var mul(Graph& g, Var a, Var b) {
  const Tensor2& A = g.value(a);
  const Tensor2& B = g.value(b);
  detail::require(A.same_shape(B), "mul", detail::shapes(A, B));
  Tensor2 y(A.rows(), A.cols());
  y.mat() = A.mat().cwiseProduct(B.mat());
  return g.emit(std::move(y), {a, b}, [a, b](Graph& g, const Tensor2& dy) {
    if (g.requires_grad(a)) g.grad(a).mat() += dy.mat().cwiseProduct(g.value(b).mat());
    if (g.requires_grad(b)) g.grad(b).mat() += dy.mat().cwiseProduct(g.value(a).mat());
  });
}

inline Var scale(Graph& g, Var a, double c) {
  Tensor2 y = g.value(a);
  for (double& v : y.values()) v *= c;
  return g.emit(std::move(y), {a}, [a, c](Graph& g, const Tensor2& dy) {
    g.grad(a).mat() += c * dy.mat();
  });
}

// X (n x d) scaled row-wise by s (n x 1).
inline Var col_scale(Graph& g, Var x, Var s) {
  const Tensor2& X = g.value(x);
  const Tensor2& S = g.value(s);
  detail::require(S.rows() == X.rows() && S.cols() == 1, "col_scale", detail::shapes(X, S));
  Tensor2 y(X.rows(), X.cols());
  y.mat() = X.mat().array().colwise() * S.mat().col(0).array();
  return g.emit(std::move(y), {x, s}, [x, s](Graph& g, const Tensor2& dy) {
    if (g.requires_grad(x)) {
      g.grad(x).mat().array() += dy.mat().array().colwise() * g.value(s).mat().col(0).array();
    }
    if (g.requires_grad(s)) {
      g.grad(s).mat().col(0) += dy.mat().cwiseProduct(g.value(x).mat()).rowwise().sum();
    }
  });
}

// ---------------------------------------------------------------------------
// Activations

inline Var leaky_relu(Graph& g, Var x, double slope = 0.2) {
  detail::require(slope >= 0.0 && slope <= 1.0, "leaky_relu", "slope must be in [0, 1]");
  const Tensor2& X = g.value(x);
  Tensor2 y(X.rows(), X.cols());
  y.mat().array() = X.mat().array().cwiseMax(slope * X.mat().array());
  return g.emit(std::move(y), {x}, [x, slope](Graph& g, const Tensor2& dy) {
    const auto X = g.value(x).mat().array();
    g.grad(x).mat().array() += (X >= 0.0).select(dy.mat().array(), slope * dy.mat().array());
  });
}

inline Var relu(Graph& g, Var x) { return leaky_relu(g, x, 0.0); }

inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline Var sigmoid(Graph& g, Var x) {
  Tensor2 y = g.value(x);
  for (double& v : y.values()) v = sigmoid(v);
  const std::uint32_t out = static_cast<std::uint32_t>(g.size());
  return g.emit(std::move(y), {x}, [x, out](Graph& g, const Tensor2& dy) {
    const Tensor2& Y = g.value(Var{out});
    Tensor2& dx = g.grad(x);
    for (std::size_t i = 0; i < Y.size(); ++i) dx[i] += dy[i] * Y[i] * (1.0 - Y[i]);
  });
}

inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.begin(), z.end());
  if (p.empty()) throw ConfigError("softmax: empty input");
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) sum += (v = std::exp(v - m));
  for (double& v : p) v /= sum;
  return p;
}

// Row-wise softmax with max subtraction.
inline Var softmax_rows(Graph& g, Var x) {
  const Tensor2& X = g.value(x);
  Tensor2 y(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto p = softmax(X.row_span(r));
    std::copy(p.begin(), p.end(), y.row_span(r).begin());
  }
  const std::uint32_t out = static_cast<std::uint32_t>(g.size());
  return g.emit(std::move(y), {x}, [x, out](Graph& g, const Tensor2& dy) {
    const Tensor2& Y = g.value(Var{out});
    Tensor2& dx = g.grad(x);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += dy(r, c) * Y(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c) dx(r, c) += Y(r, c) * (dy(r, c) - dot);
    }
  });
}

// Clamp with the exact derivative: 1 inside [lo, hi], 0 outside.
inline Var clamp(Graph& g, Var x, double lo, double hi) {
  Tensor2 y = g.value(x);
  for (double& v : y.values()) v = std::clamp(v, lo, hi);
  return g.emit(std::move(y), {x}, [x, lo, hi](Graph& g, const Tensor2& dy) {
    const Tensor2& X = g.value(x);
    Tensor2& dx = g.grad(x);
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (X[i] >= lo && X[i] <= hi) dx[i] += dy[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

// Row-wise layer norm with population variance.
inline Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Tensor2& X = g.value(x);
  const std::size_t n = X.rows(), d = X.cols();
  detail::require(d >= 2, "layer_norm", "needs at least 2 features, got " + std::to_string(d));
  const Tensor2& G = g.value(gamma);
  const Tensor2& B = g.value(beta);
  detail::require(G.size() == d && B.size() == d, "layer_norm", "affine size mismatch");
  Tensor2 xhat(n, d);
  std::vector<double> inv_std(n);
  Tensor2 y(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += X(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (X(r, c) - mean) * (X(r, c) - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (X(r, c) - mean) * inv_std[r];
      y(r, c) = G[c] * xhat(r, c) + B[c];
    }
  }
  return g.emit(std::move(y), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Graph& g, const Tensor2& dy) {
                  const std::size_t n = xhat.rows(), d = xhat.cols();
                  const Tensor2& G = g.value(gamma);
                  if (g.requires_grad(gamma)) {
                    Tensor2& dg = g.grad(gamma);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < d; ++c) dg[c] += dy(r, c) * xhat(r, c);
                  }
                  if (g.requires_grad(beta)) {
                    Tensor2& db = g.grad(beta);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < d; ++c) db[c] += dy(r, c);
                  }
                  if (g.requires_grad(x)) {
                    Tensor2& dx = g.grad(x);
                    std::vector<double> dxh(d);
                    for (std::size_t r = 0; r < n; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        dxh[c] = dy(r, c) * G[c];
                        m1 += dxh[c];
                        m2 += dxh[c] * xhat(r, c);
                      }
                      m1 /= static_cast<double>(d);
                      m2 /= static_cast<double>(d);
                      for (std::size_t c = 0; c < d; ++c)
                        dx(r, c) += inv_std[r] * (dxh[c] - m1 - xhat(r, c) * m2);
                    }
                  }
                });
}

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

// Column-wise batch norm without affine terms. Every row of `x` must belong to
// the same normalization domain, whose running statistics are `running_mean`
// and `running_var` (1 x C each). Train mode normalizes by the batch
// statistics (population variance) and updates the running statistics; infer
// mode normalizes by the running statistics.
inline Var batch_norm(Graph& g, Var x, Tensor2& running_mean, Tensor2& running_var, Mode mode,
                      BatchNormOptions opt = {}) {
  const Tensor2& X = g.value(x);
  const std::size_t n = X.rows(), c = X.cols();
  detail::require(running_mean.size() == c && running_var.size() == c, "batch_norm",
                  "running stats size mismatch");
  Tensor2 y(n, c);
  if (mode == Mode::kInfer) {
    std::vector<double> inv(c);
    for (std::size_t j = 0; j < c; ++j) inv[j] = 1.0 / std::sqrt(running_var[j] + opt.eps);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) y(r, j) = (X(r, j) - running_mean[j]) * inv[j];
    return g.emit(std::move(y), {x}, [x, inv = std::move(inv)](Graph& g, const Tensor2& dy) {
      Tensor2& dx = g.grad(x);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t j = 0; j < dy.cols(); ++j) dx(r, j) += dy(r, j) * inv[j];
    });
  }
  if (n < 2) {
    throw DataError("batch_norm: train mode needs a batch of at least 2, got " +
                    std::to_string(n));
  }
  std::vector<double> inv(c);
  const double dn = static_cast<double>(n);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += X(r, j);
    mean /= dn;
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (X(r, j) - mean) * (X(r, j) - mean);
    var /= dn;
    inv[j] = 1.0 / std::sqrt(var + opt.eps);
    for (std::size_t r = 0; r < n; ++r) y(r, j) = (X(r, j) - mean) * inv[j];
    running_mean[j] = (1.0 - opt.momentum) * running_mean[j] + opt.momentum * mean;
    running_var[j] = (1.0 - opt.momentum) * running_var[j] + opt.momentum * var;
  }
  const std::uint32_t out = static_cast<std::uint32_t>(g.size());
  return g.emit(std::move(y), {x}, [x, out, inv = std::move(inv)](Graph& g, const Tensor2& dy) {
    const Tensor2& Y = g.value(Var{out});
    Tensor2& dx = g.grad(x);
    const std::size_t n = Y.rows();
    const double dn = static_cast<double>(n);
    for (std::size_t j = 0; j < Y.cols(); ++j) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        m1 += dy(r, j);
        m2 += dy(r, j) * Y(r, j);
      }
      m1 /= dn;
      m2 /= dn;
      for (std::size_t r = 0; r < n; ++r) dx(r, j) += inv[j] * (dy(r, j) - m1 - Y(r, j) * m2);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape plumbing

inline Var concat_cols(Graph& g, const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t n = g.value(parts.front()).rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    detail::require(g.value(p).rows() == n, "concat_cols", "row count mismatch");
    offsets.push_back(total);
    total += g.value(p).cols();
  }
  Tensor2 y(n, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor2& P = g.value(parts[k]);
    y.mat().middleCols(offsets[k], P.cols()) = P.mat();
  }
  return g.emit(std::move(y), parts, [parts, offsets](Graph& g, const Tensor2& dy) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!g.requires_grad(parts[k])) continue;
      Tensor2& dp = g.grad(parts[k]);
      dp.mat() += dy.mat().middleCols(offsets[k], dp.cols());
    }
  });
}

inline Var slice_cols(Graph& g, Var x, std::size_t begin, std::size_t count) {
  const Tensor2& X = g.value(x);
  detail::require(begin + count <= X.cols(), "slice_cols", "range out of bounds");
  Tensor2 y(X.rows(), count);
  y.mat() = X.mat().middleCols(begin, count);
  return g.emit(std::move(y), {x}, [x, begin, count](Graph& g, const Tensor2& dy) {
    g.grad(x).mat().middleCols(begin, count) += dy.mat();
  });
}

inline Var gather_rows(Graph& g, Var x, const std::vector<std::size_t>& idx) {
  const Tensor2& X = g.value(x);
  Tensor2 y(idx.size(), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require(idx[i] < X.rows(), "gather_rows", "row index out of bounds");
    y.mat().row(i) = X.mat().row(idx[i]);
  }
  return g.emit(std::move(y), {x}, [x, idx](Graph& g, const Tensor2& dy) {
    Tensor2& dx = g.grad(x);
    for (std::size_t i = 0; i < idx.size(); ++i) dx.mat().row(idx[i]) += dy.mat().row(i);
  });
}

// Inverse of a partition: row i of parts[k] lands at row idx[k][i] of the result.
inline Var scatter_rows(Graph& g, const std::vector<Var>& parts,
                        const std::vector<std::vector<std::size_t>>& idx, std::size_t rows) {
  detail::require(!parts.empty() && parts.size() == idx.size(), "scatter_rows", "bad partition");
  const std::size_t cols = g.value(parts.front()).cols();
  Tensor2 y(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor2& P = g.value(parts[k]);
    detail::require(P.cols() == cols && P.rows() == idx[k].size(), "scatter_rows",
                    "part shape mismatch");
    for (std::size_t i = 0; i < idx[k].size(); ++i) y.mat().row(idx[k][i]) = P.mat().row(i);
  }
  return g.emit(std::move(y), parts, [parts, idx](Graph& g, const Tensor2& dy) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!g.requires_grad(parts[k])) continue;
      Tensor2& dp = g.grad(parts[k]);
      for (std::size_t i = 0; i < idx[k].size(); ++i) dp.mat().row(i) += dy.mat().row(idx[k][i]);
    }
  });
}

// Rows of `table` selected by `ids`; gradient scatter-adds into the table.
inline Var embedding(Graph& g, Var table, const std::vector<std::size_t>& ids) {
  const Tensor2& T = g.value(table);
  for (std::size_t id : ids) {
    if (id >= T.rows()) {
      throw DataError("embedding: id " + std::to_string(id) + " >= cardinality " +
                      std::to_string(T.rows()));
    }
  }
  return gather_rows(g, table, ids);
}

// ---------------------------------------------------------------------------
// Reductions

inline Var row_mean(Graph& g, Var x) {
  const Tensor2& X = g.value(x);
  Tensor2 y(X.rows(), 1);
  y.mat().col(0) = X.mat().rowwise().mean();
  return g.emit(std::move(y), {x}, [x](Graph& g, const Tensor2& dy) {
    Tensor2& dx = g.grad(x);
    const double inv = 1.0 / static_cast<double>(dx.cols());
    dx.mat().array().colwise() += inv * dy.mat().col(0).array();
  });
}

inline Var row_dot(Graph& g, Var a, Var b) {
  const Tensor2& A = g.value(a);
  const Tensor2& B = g.value(b);
  detail::require(A.same_shape(B), "row_dot", detail::shapes(A, B));
  Tensor2 y(A.rows(), 1);
  y.mat().col(0) = A.mat().cwiseProduct(B.mat()).rowwise().sum();
  return g.emit(std::move(y), {a, b}, [a, b](Graph& g, const Tensor2& dy) {
    if (g.requires_grad(a)) {
      g.grad(a).mat().array() += g.value(b).mat().array().colwise() * dy.mat().col(0).array();
    }
    if (g.requires_grad(b)) {
      g.grad(b).mat().array() += g.value(a).mat().array().colwise() * dy.mat().col(0).array();
    }
  });
}

inline Var sum(Graph& g, Var x) {
  Tensor2 y(1, 1, g.value(x).mat().sum());
  return g.emit(std::move(y), {x}, [x](Graph& g, const Tensor2& dy) {
    g.grad(x).mat().array() += dy[0];
  });
}

// sum(r * x) for a constant weight tensor r.
inline Var dot_const(Graph& g, Var x, Tensor2 r) {
  const Tensor2& X = g.value(x);
  detail::require(X.same_shape(r), "dot_const", detail::shapes(X, r));
  Tensor2 y(1, 1, X.mat().cwiseProduct(r.mat()).sum());
  return g.emit(std::move(y), {x}, [x, r = std::move(r)](Graph& g, const Tensor2& dy) {
    g.grad(x).mat() += dy[0] * r.mat();
  });
}

inline Var add_all(Graph& g, const std::vector<Var>& terms) {
  detail::require(!terms.empty(), "add_all", "no terms");
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(g, acc, terms[i]);
  return acc;
}

}  // namespace mtmd::nk
