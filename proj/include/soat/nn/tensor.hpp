#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "soat/util/errors.hpp"
#include "soat/util/rng.hpp"

namespace soat::nn {

// Dense row-major matrix. Scalar type is double by default throughout the
// project; float instantiations exist for speed runs.
template <class T>
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}
  Tensor(int r, int c, std::vector<T> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != static_cast<size_t>(r) * c) {
      throw util::ConfigError("tensor data length does not match rows*cols");
    }
  }

  T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  T* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const T* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
  size_t size() const { return data.size(); }

  void fill(T v) {
    for (auto& x : data) x = v;
  }

  bool all_finite() const {
    for (const T& x : data) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, T v) {
    Tensor t(r, c);
    t.fill(v);
    return t;
  }

  static Tensor identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = T(1);
    return t;
  }

  static Tensor randn(int r, int c, util::Rng& rng, T scale) {
    Tensor t(r, c);
    for (auto& x : t.data) x = static_cast<T>(rng.normal()) * scale;
    return t;
  }

  static Tensor row_vector(std::vector<T> d) {
    const int n = static_cast<int>(d.size());
    return Tensor(1, n, std::move(d));
  }
};

// Plain boolean matrix used for attention permission patterns. Not a tape
// value; masks are data, not differentiable quantities.
struct BoolMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> allow;

  BoolMatrix() = default;
  BoolMatrix(int r, int c, bool value = false)
      : rows(r), cols(c), allow(static_cast<size_t>(r) * c, value ? 1 : 0) {}

  uint8_t& at(int r, int c) { return allow[static_cast<size_t>(r) * cols + c]; }
  uint8_t at(int r, int c) const { return allow[static_cast<size_t>(r) * cols + c]; }

  BoolMatrix select_rows(const std::vector<int>& rows_idx) const {
    BoolMatrix out(static_cast<int>(rows_idx.size()), cols);
    for (size_t i = 0; i < rows_idx.size(); ++i) {
      for (int j = 0; j < cols; ++j) out.at(static_cast<int>(i), j) = at(rows_idx[i], j);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Raw kernels. Row-major, i-k-j loop order so the inner loop runs over
// contiguous memory. Summation order is fixed per output element; cached and
// uncached execution paths rely on this for bit-identical results.
// ---------------------------------------------------------------------------

// C += A * B   (A: m*k, B: k*n, C: m*n)
template <class T>
void matmul_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  for (int i = 0; i < a.rows; ++i) {
    T* crow = c.row(i);
    const T* arow = a.row(i);
    for (int p = 0; p < a.cols; ++p) {
      const T av = arow[p];
      const T* brow = b.row(p);
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T   (A: m*k, B: n*k, C: m*n)
template <class T>
void matmul_nt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = a.row(i);
    T* crow = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const T* brow = b.row(j);
      T acc = T(0);
      for (int p = 0; p < a.cols; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C += A^T * B   (A: k*m, B: k*n, C: m*n)
template <class T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = a.row(i);
    const T* brow = b.row(i);
    for (int p = 0; p < a.cols; ++p) {
      const T av = arow[p];
      T* crow = c.row(p);
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
}

using Tensor64 = Tensor<double>;
using Tensor32 = Tensor<float>;

}  // namespace soat::nn
