#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "soat/nn/tape.hpp"

namespace soat::nn {

template <class T>
Var constant(Tape<T>& tp, Tensor<T> value) {
  return tp.leaf(std::move(value));
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Var add(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  if (!av.same_shape(bv)) throw util::ConfigError("add: shape mismatch");
  Tensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  return tp.node(std::move(out), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(a);
    Tensor<T>& gb = t.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] += g.data[i];
    }
  });
}

template <class T>
Var sub(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  if (!av.same_shape(bv)) throw util::ConfigError("sub: shape mismatch");
  Tensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  return tp.node(std::move(out), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(a);
    Tensor<T>& gb = t.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] -= g.data[i];
    }
  });
}

// Elementwise (Hadamard) product.
template <class T>
Var mul(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  if (!av.same_shape(bv)) throw util::ConfigError("mul: shape mismatch");
  Tensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  return tp.node(std::move(out), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& avv = t.val(a);
    const Tensor<T>& bvv = t.val(b);
    Tensor<T>& ga = t.grad(a);
    Tensor<T>& gb = t.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i] * bvv.data[i];
      gb.data[i] += g.data[i] * avv.data[i];
    }
  });
}

template <class T>
Var scale(Tape<T>& tp, Var a, T factor) {
  Tensor<T> out = tp.val(a);
  for (auto& x : out.data) x *= factor;
  return tp.node(std::move(out), [a, factor](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * factor;
  });
}

// out[i][j] = x[i][j] + row[0][j]
template <class T>
Var add_row_broadcast(Tape<T>& tp, Var x, Var row) {
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& rv = tp.val(row);
  if (rv.rows != 1 || rv.cols != xv.cols) throw util::ConfigError("add_row_broadcast: shape mismatch");
  Tensor<T> out = xv;
  for (int i = 0; i < out.rows; ++i) {
    T* orow = out.row(i);
    for (int j = 0; j < out.cols; ++j) orow[j] += rv.data[static_cast<size_t>(j)];
  }
  return tp.node(std::move(out), [x, row](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    Tensor<T>& gr = t.grad(row);
    for (int i = 0; i < g.rows; ++i) {
      const T* grow = g.row(i);
      T* gxrow = gx.row(i);
      for (int j = 0; j < g.cols; ++j) {
        gxrow[j] += grow[j];
        gr.data[static_cast<size_t>(j)] += grow[j];
      }
    }
  });
}

// Exact GELU: x * Phi(x) with the Gaussian CDF via erf. The tanh
// approximation is deliberately not used; gradient checks assume the exact
// derivative Phi(x) + x * phi(x).
template <class T>
Var gelu(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out(xv.rows, xv.cols);
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (size_t i = 0; i < xv.size(); ++i) {
    const double v = static_cast<double>(xv.data[i]);
    out.data[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)));
  }
  return tp.node(std::move(out), [x](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xvv = t.val(x);
    Tensor<T>& gx = t.grad(x);
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = static_cast<double>(xvv.data[i]);
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      gx.data[i] += g.data[i] * static_cast<T>(cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <class T>
Var matmul(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  if (av.cols != bv.rows) throw util::ConfigError("matmul: inner dimension mismatch");
  Tensor<T> out(av.rows, bv.cols);
  matmul_acc(av, bv, out);
  return tp.node(std::move(out), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    matmul_nt_acc(g, t.val(b), t.grad(a));   // ga += g * b^T
    matmul_tn_acc(t.val(a), g, t.grad(b));   // gb += a^T * g
  });
}

// out = a * b^T
template <class T>
Var matmul_nt(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  if (av.cols != bv.cols) throw util::ConfigError("matmul_nt: inner dimension mismatch");
  Tensor<T> out(av.rows, bv.rows);
  matmul_nt_acc(av, bv, out);
  return tp.node(std::move(out), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    matmul_acc(g, t.val(b), t.grad(a));      // ga += g * b
    matmul_tn_acc(g, t.val(a), t.grad(b));   // gb += g^T * a
  });
}

// ---------------------------------------------------------------------------
// Row selection / assembly
// ---------------------------------------------------------------------------

template <class T>
Var gather_rows(Tape<T>& tp, Var x, std::vector<int> idx) {
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out(static_cast<int>(idx.size()), xv.cols);
  for (size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(xv.row(idx[i]), xv.cols, out.row(static_cast<int>(i)));
  }
  return tp.node(std::move(out), [x, idx = std::move(idx)](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (size_t i = 0; i < idx.size(); ++i) {
      const T* grow = g.row(static_cast<int>(i));
      T* gxrow = gx.row(idx[i]);
      for (int j = 0; j < g.cols; ++j) gxrow[j] += grow[j];
    }
  });
}

// Copy of `base` with rows idx[i] replaced by rows[i]'s rows. Untouched rows
// are byte-identical to the input; this is what keeps frozen tokens frozen.
template <class T>
Var scatter_rows(Tape<T>& tp, Var base, std::vector<int> idx, Var rows) {
  const Tensor<T>& bv = tp.val(base);
  const Tensor<T>& rv = tp.val(rows);
  if (rv.rows != static_cast<int>(idx.size()) || rv.cols != bv.cols) {
    throw util::ConfigError("scatter_rows: shape mismatch");
  }
  Tensor<T> out = bv;
  for (size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(rv.row(static_cast<int>(i)), rv.cols, out.row(idx[i]));
  }
  return tp.node(std::move(out), [base, rows, idx = std::move(idx)](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gb = t.grad(base);
    Tensor<T>& gr = t.grad(rows);
    std::vector<uint8_t> replaced(static_cast<size_t>(g.rows), 0);
    for (size_t i = 0; i < idx.size(); ++i) {
      replaced[static_cast<size_t>(idx[i])] = 1;
      const T* grow = g.row(idx[i]);
      T* grrow = gr.row(static_cast<int>(i));
      for (int j = 0; j < g.cols; ++j) grrow[j] += grow[j];
    }
    for (int r = 0; r < g.rows; ++r) {
      if (replaced[static_cast<size_t>(r)]) continue;
      const T* grow = g.row(r);
      T* gbrow = gb.row(r);
      for (int j = 0; j < g.cols; ++j) gbrow[j] += grow[j];
    }
  });
}

template <class T>
Var concat_rows(Tape<T>& tp, std::vector<Var> parts) {
  if (parts.empty()) throw util::ConfigError("concat_rows: empty part list");
  int cols = tp.val(parts[0]).cols;
  int rows = 0;
  for (Var p : parts) {
    const Tensor<T>& pv = tp.val(p);
    if (pv.cols != cols) throw util::ConfigError("concat_rows: column mismatch");
    rows += pv.rows;
  }
  Tensor<T> out(rows, cols);
  int r = 0;
  for (Var p : parts) {
    const Tensor<T>& pv = tp.val(p);
    std::copy_n(pv.data.data(), pv.size(), out.row(r));
    r += pv.rows;
  }
  return tp.node(std::move(out), [parts = std::move(parts)](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    int r = 0;
    for (Var p : parts) {
      Tensor<T>& gp = t.grad(p);
      for (int i = 0; i < gp.rows; ++i) {
        const T* grow = g.row(r + i);
        T* prow = gp.row(i);
        for (int j = 0; j < g.cols; ++j) prow[j] += grow[j];
      }
      r += gp.rows;
    }
  });
}

template <class T>
Var concat_cols(Tape<T>& tp, std::vector<Var> parts) {
  if (parts.empty()) throw util::ConfigError("concat_cols: empty part list");
  int rows = tp.val(parts[0]).rows;
  int cols = 0;
  for (Var p : parts) {
    const Tensor<T>& pv = tp.val(p);
    if (pv.rows != rows) throw util::ConfigError("concat_cols: row mismatch");
    cols += pv.cols;
  }
  Tensor<T> out(rows, cols);
  int c = 0;
  for (Var p : parts) {
    const Tensor<T>& pv = tp.val(p);
    for (int i = 0; i < rows; ++i) std::copy_n(pv.row(i), pv.cols, out.row(i) + c);
    c += pv.cols;
  }
  return tp.node(std::move(out), [parts = std::move(parts)](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    int c = 0;
    for (Var p : parts) {
      Tensor<T>& gp = t.grad(p);
      for (int i = 0; i < gp.rows; ++i) {
        const T* grow = g.row(i) + c;
        T* prow = gp.row(i);
        for (int j = 0; j < gp.cols; ++j) prow[j] += grow[j];
      }
      c += gp.cols;
    }
  });
}

template <class T>
Var slice_cols(Tape<T>& tp, Var x, int c0, int c1) {
  const Tensor<T>& xv = tp.val(x);
  if (c0 < 0 || c1 > xv.cols || c0 >= c1) throw util::ConfigError("slice_cols: bad range");
  Tensor<T> out(xv.rows, c1 - c0);
  for (int i = 0; i < xv.rows; ++i) std::copy_n(xv.row(i) + c0, c1 - c0, out.row(i));
  return tp.node(std::move(out), [x, c0](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x);
    for (int i = 0; i < g.rows; ++i) {
      const T* grow = g.row(i);
      T* gxrow = gx.row(i) + c0;
      for (int j = 0; j < g.cols; ++j) gxrow[j] += grow[j];
    }
  });
}

// 1x1 extraction.
template <class T>
Var pick(Tape<T>& tp, Var x, int r, int c) {
  const Tensor<T>& xv = tp.val(x);
  if (r < 0 || r >= xv.rows || c < 0 || c >= xv.cols) throw util::ConfigError("pick: index out of range");
  Tensor<T> out(1, 1);
  out.data[0] = xv.at(r, c);
  return tp.node(std::move(out), [x, r, c](Tape<T>& t, Var self) {
    t.grad(x).at(r, c) += t.grad(self).data[0];
  });
}

template <class T>
Var sum_all(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out(1, 1);
  T acc = T(0);
  for (const T& v : xv.data) acc += v;
  out.data[0] = acc;
  return tp.node(std::move(out), [x](Tape<T>& t, Var self) {
    const T g = t.grad(self).data[0];
    Tensor<T>& gx = t.grad(x);
    for (auto& v : gx.data) v += g;
  });
}

template <class T>
Var add_n(Tape<T>& tp, std::vector<Var> parts) {
  if (parts.empty()) throw util::ConfigError("add_n: empty part list");
  Tensor<T> out = tp.val(parts[0]);
  for (size_t k = 1; k < parts.size(); ++k) {
    const Tensor<T>& pv = tp.val(parts[k]);
    if (!pv.same_shape(out)) throw util::ConfigError("add_n: shape mismatch");
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += pv.data[i];
  }
  return tp.node(std::move(out), [parts = std::move(parts)](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    for (Var p : parts) {
      Tensor<T>& gp = t.grad(p);
      for (size_t i = 0; i < g.size(); ++i) gp.data[i] += g.data[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization, softmax, losses
// ---------------------------------------------------------------------------

// Row-wise layer normalization with learned gain/shift (1 x cols each).
template <class T>
Var layer_norm(Tape<T>& tp, Var x, Var gamma, Var beta, T eps) {
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& gv = tp.val(gamma);
  const Tensor<T>& bv = tp.val(beta);
  if (gv.rows != 1 || gv.cols != xv.cols || bv.rows != 1 || bv.cols != xv.cols) {
    throw util::ConfigError("layer_norm: parameter shape mismatch");
  }
  if (!(eps > T(0))) throw util::ConfigError("layer_norm: epsilon must be positive");
  Tensor<T> out(xv.rows, xv.cols);
  const int n = xv.cols;
  for (int i = 0; i < xv.rows; ++i) {
    const T* xr = xv.row(i);
    T* orow = out.row(i);
    T mean = T(0);
    for (int j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) {
      const T d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) {
      orow[j] = (xr[j] - mean) * inv * gv.data[static_cast<size_t>(j)] + bv.data[static_cast<size_t>(j)];
    }
  }
  return tp.node(std::move(out), [x, gamma, beta, eps](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xvv = t.val(x);
    const Tensor<T>& gvv = t.val(gamma);
    Tensor<T>& gx = t.grad(x);
    Tensor<T>& gg = t.grad(gamma);
    Tensor<T>& gb = t.grad(beta);
    const int n = xvv.cols;
    std::vector<T> xhat(static_cast<size_t>(n));
    for (int i = 0; i < xvv.rows; ++i) {
      const T* xr = xvv.row(i);
      const T* gr = g.row(i);
      T* gxr = gx.row(i);
      T mean = T(0);
      for (int j = 0; j < n; ++j) mean += xr[j];
      mean /= static_cast<T>(n);
      T var = T(0);
      for (int j = 0; j < n; ++j) {
        const T d = xr[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      const T inv = T(1) / std::sqrt(var + eps);
      // dy = g * gamma; dx = inv * (dy - mean(dy) - xhat * mean(dy * xhat))
      T dy_mean = T(0);
      T dyxh_mean = T(0);
      for (int j = 0; j < n; ++j) {
        xhat[static_cast<size_t>(j)] = (xr[j] - mean) * inv;
        const T dy = gr[j] * gvv.data[static_cast<size_t>(j)];
        dy_mean += dy;
        dyxh_mean += dy * xhat[static_cast<size_t>(j)];
      }
      dy_mean /= static_cast<T>(n);
      dyxh_mean /= static_cast<T>(n);
      for (int j = 0; j < n; ++j) {
        const T dy = gr[j] * gvv.data[static_cast<size_t>(j)];
        gxr[j] += inv * (dy - dy_mean - xhat[static_cast<size_t>(j)] * dyxh_mean);
        gg.data[static_cast<size_t>(j)] += gr[j] * xhat[static_cast<size_t>(j)];
        gb.data[static_cast<size_t>(j)] += gr[j];
      }
    }
  });
}

// Row-wise softmax restricted to permitted entries. Forbidden entries are
// exactly zero in the output; permitted entries are renormalized so each row
// sums to 1 over its permitted set. A row with no permitted entry is a
// degenerate mask.
template <class T>
Var masked_softmax(Tape<T>& tp, Var x, const BoolMatrix& mask) {
  const Tensor<T>& xv = tp.val(x);
  if (mask.rows != xv.rows || mask.cols != xv.cols) {
    throw util::ConfigError("masked_softmax: mask shape mismatch");
  }
  Tensor<T> out(xv.rows, xv.cols);
  for (int i = 0; i < xv.rows; ++i) {
    const T* xr = xv.row(i);
    T* orow = out.row(i);
    T mx = T(0);
    bool any = false;
    for (int j = 0; j < xv.cols; ++j) {
      if (!mask.at(i, j)) continue;
      if (!any || xr[j] > mx) mx = xr[j];
      any = true;
    }
    if (!any) {
      throw util::NumericError("masked_softmax: query row " + std::to_string(i) +
                               " permits no keys (degenerate mask)");
    }
    T sum = T(0);
    for (int j = 0; j < xv.cols; ++j) {
      if (mask.at(i, j)) {
        const T e = std::exp(xr[j] - mx);
        orow[j] = e;
        sum += e;
      } else {
        orow[j] = T(0);
      }
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < xv.cols; ++j) orow[j] *= inv;
  }
  return tp.node(std::move(out), [x](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& p = t.val(self);
    Tensor<T>& gx = t.grad(x);
    // Masked entries have p == 0, so the standard softmax Jacobian already
    // routes zero gradient to them.
    for (int i = 0; i < p.rows; ++i) {
      const T* pr = p.row(i);
      const T* gr = g.row(i);
      T* gxr = gx.row(i);
      T dot = T(0);
      for (int j = 0; j < p.cols; ++j) dot += gr[j] * pr[j];
      for (int j = 0; j < p.cols; ++j) gxr[j] += pr[j] * (gr[j] - dot);
    }
  });
}

template <class T>
Var softmax(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  return masked_softmax(tp, x, BoolMatrix(xv.rows, xv.cols, true));
}

template <class T>
Var log_softmax(Tape<T>& tp, Var x) {
  const Tensor<T>& xv = tp.val(x);
  Tensor<T> out(xv.rows, xv.cols);
  for (int i = 0; i < xv.rows; ++i) {
    const T* xr = xv.row(i);
    T* orow = out.row(i);
    T mx = xr[0];
    for (int j = 1; j < xv.cols; ++j) mx = std::max(mx, xr[j]);
    T sum = T(0);
    for (int j = 0; j < xv.cols; ++j) sum += std::exp(xr[j] - mx);
    const T lse = mx + std::log(sum);
    for (int j = 0; j < xv.cols; ++j) orow[j] = xr[j] - lse;
  }
  return tp.node(std::move(out), [x](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& lsm = t.val(self);
    Tensor<T>& gx = t.grad(x);
    for (int i = 0; i < g.rows; ++i) {
      const T* gr = g.row(i);
      const T* lr = lsm.row(i);
      T* gxr = gx.row(i);
      T gsum = T(0);
      for (int j = 0; j < g.cols; ++j) gsum += gr[j];
      for (int j = 0; j < g.cols; ++j) gxr[j] += gr[j] - std::exp(lr[j]) * gsum;
    }
  });
}

// Scalar cross-entropy of a 1 x n logit row against a target index.
template <class T>
Var cross_entropy_with_logits(Tape<T>& tp, Var logits, int target) {
  const Tensor<T>& xv = tp.val(logits);
  if (xv.rows != 1) throw util::ConfigError("cross_entropy_with_logits: expected a single row");
  if (target < 0 || target >= xv.cols) throw util::ConfigError("cross_entropy_with_logits: bad target");
  T mx = xv.data[0];
  for (int j = 1; j < xv.cols; ++j) mx = std::max(mx, xv.data[static_cast<size_t>(j)]);
  T sum = T(0);
  for (int j = 0; j < xv.cols; ++j) sum += std::exp(xv.data[static_cast<size_t>(j)] - mx);
  Tensor<T> out(1, 1);
  out.data[0] = mx + std::log(sum) - xv.data[static_cast<size_t>(target)];
  return tp.node(std::move(out), [logits, target](Tape<T>& t, Var self) {
    const T g = t.grad(self).data[0];
    const Tensor<T>& xvv = t.val(logits);
    Tensor<T>& gx = t.grad(logits);
    T mx = xvv.data[0];
    for (int j = 1; j < xvv.cols; ++j) mx = std::max(mx, xvv.data[static_cast<size_t>(j)]);
    T sum = T(0);
    for (int j = 0; j < xvv.cols; ++j) sum += std::exp(xvv.data[static_cast<size_t>(j)] - mx);
    for (int j = 0; j < xvv.cols; ++j) {
      const T p = std::exp(xvv.data[static_cast<size_t>(j)] - mx) / sum;
      gx.data[static_cast<size_t>(j)] += g * (p - (j == target ? T(1) : T(0)));
    }
  });
}

// ---------------------------------------------------------------------------
// Attention and grouped max selection
// ---------------------------------------------------------------------------

// softmax_j(Q_i . K_j / sqrt(Q.cols) where permitted) * V. The generic
// single-head primitive; the encoder composes the same pieces per head.
template <class T>
Var masked_attention_forward(Tape<T>& tp, Var q, Var k, Var v, const BoolMatrix& mask) {
  const Tensor<T>& qv = tp.val(q);
  const Tensor<T>& kv = tp.val(k);
  const Tensor<T>& vv = tp.val(v);
  if (qv.cols != kv.cols) throw util::ConfigError("masked_attention: Q/K dimension mismatch");
  if (kv.rows != vv.rows) throw util::ConfigError("masked_attention: K/V row mismatch");
  if (mask.rows != qv.rows || mask.cols != kv.rows) {
    throw util::ConfigError("masked_attention: mask must be Q.rows x K.rows");
  }
  Var scores = matmul_nt(tp, q, k);
  Var scaled = scale(tp, scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(qv.cols))));
  Var weights = masked_softmax(tp, scaled, mask);
  return matmul(tp, weights, v);
}

// Per-group maximum over entries of a 1 x n score row. Groups list candidate
// column indices in priority order: strict > comparison means earlier entries
// win ties. An empty group scores kEmptyGroupScore and routes no gradient.
template <class T>
struct GroupMaxResult {
  Var scores;                // 1 x num_groups
  std::vector<int> winners;  // winning column per group, -1 for empty groups
};

inline constexpr double kEmptyGroupScore = -1e30;

template <class T>
GroupMaxResult<T> select_max_groups(Tape<T>& tp, Var row, const std::vector<std::vector<int>>& groups) {
  const Tensor<T>& xv = tp.val(row);
  if (xv.rows != 1) throw util::ConfigError("select_max_groups: expected a single row");
  Tensor<T> out(1, static_cast<int>(groups.size()));
  std::vector<int> winners(groups.size(), -1);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    T best = static_cast<T>(kEmptyGroupScore);
    int best_idx = -1;
    for (int col : groups[gi]) {
      if (col < 0 || col >= xv.cols) throw util::ConfigError("select_max_groups: index out of range");
      const T v = xv.data[static_cast<size_t>(col)];
      if (best_idx < 0 || v > best) {
        best = v;
        best_idx = col;
      }
    }
    out.data[gi] = best;
    winners[gi] = best_idx;
  }
  Var scores = tp.node(std::move(out), [row, winners](Tape<T>& t, Var self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(row);
    for (size_t gi = 0; gi < winners.size(); ++gi) {
      if (winners[gi] >= 0) gx.data[static_cast<size_t>(winners[gi])] += g.data[gi];
    }
  });
  return {scores, std::move(winners)};
}

}  // namespace soat::nn
