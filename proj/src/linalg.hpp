// SPDX-License-Identifier: Apache-2.0
// Dense row-major helpers used by the model kernels.
#pragma once

#include <cmath>
#include <cstddef>

namespace attnrobust::detail {

// y += W x, W is rows x cols
inline void gemv_add(const double *w, std::size_t rows, std::size_t cols,
                     const double *x, double *y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double *wr = w + r * cols;
    // four independent partial sums; fixed order keeps results reproducible
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      a0 += wr[c] * x[c];
      a1 += wr[c + 1] * x[c + 1];
      a2 += wr[c + 2] * x[c + 2];
      a3 += wr[c + 3] * x[c + 3];
    }
    for (; c < cols; ++c)
      a0 += wr[c] * x[c];
    y[r] += (a0 + a1) + (a2 + a3);
  }
}

// y += W^T x, W is rows x cols, x has rows entries
inline void gemv_t_add(const double *w, std::size_t rows, std::size_t cols,
                       const double *x, double *y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double xr = x[r];
    const double *wr = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c)
      y[c] += wr[c] * xr;
  }
}

// G += a b^T
inline void outer_add(double *g, std::size_t rows, std::size_t cols,
                      const double *a, const double *b) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = a[r];
    double *gr = g + r * cols;
    for (std::size_t c = 0; c < cols; ++c)
      gr[c] += ar * b[c];
  }
}

inline double dot(const double *a, const double *b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += a[i] * b[i];
  return acc;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace attnrobust::detail
