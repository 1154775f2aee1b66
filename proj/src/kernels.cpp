// SPDX-License-Identifier: Apache-2.0
#include "cme/kernels.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "cme/errors.hpp"

#ifdef CME_HAVE_OPENMP
#include <omp.h>
#endif

namespace cme::kernels {
namespace {

std::atomic<Backend> g_backend{
#ifdef CME_HAVE_OPENMP
    Backend::OpenMP
#else
    Backend::Serial
#endif
};

struct GemmDims {
  std::size_t m, n, k;
};

GemmDims check_gemm(bool ta, bool tb, const Tensor2D& a, const Tensor2D& b, Tensor2D& c,
                    bool accumulate) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t ka = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ, lhs " + a.shape_str() + (ta ? "^T" : "") +
                     " vs rhs " + b.shape_str() + (tb ? "^T" : ""));
  }
  if (accumulate) {
    if (c.rows() != m || c.cols() != n) {
      throw ShapeError("matmul: accumulator " + c.shape_str() + " does not match result (" +
                       std::to_string(m) + "x" + std::to_string(n) + ")");
    }
  } else if (c.rows() != m || c.cols() != n) {
    c = Tensor2D(m, n);
  } else {
    c.fill(0.0);
  }
  return {m, n, ka};
}

// One output row. Shared by both backends so the summation order is fixed.
inline void gemm_row(std::size_t i, bool ta, bool tb, const Tensor2D& a, const Tensor2D& b,
                     Tensor2D& c, const GemmDims& d) {
  double* crow = c.row(i).data();
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();
  if (!tb) {
    for (std::size_t p = 0; p < d.k; ++p) {
      const double av = ta ? ad[p * lda + i] : ad[i * lda + p];
      const double* brow = bd + p * ldb;
      for (std::size_t j = 0; j < d.n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < d.n; ++j) {
      const double* brow = bd + j * ldb;
      double acc = 0.0;
      if (ta) {
        for (std::size_t p = 0; p < d.k; ++p) acc += ad[p * lda + i] * brow[p];
      } else {
        const double* arow = ad + i * lda;
        for (std::size_t p = 0; p < d.k; ++p) acc += arow[p] * brow[p];
      }
      crow[j] += acc;
    }
  }
}

inline void softmax_row(std::span<const double> x, std::span<const unsigned char> mask,
                        std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (mask.empty() || mask[j]) mx = std::max(mx, x[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (mask.empty() || mask[j]) {
      out[j] = std::exp(x[j] - mx);
      sum += out[j];
    } else {
      out[j] = 0.0;
    }
  }
  if (sum > 0.0) {
    const double inv = 1.0 / sum;
    for (double& v : out) v *= inv;
  }
}

void check_softmax(const Tensor2D& x, std::span<const unsigned char> mask, Tensor2D& out) {
  if (!mask.empty() && mask.size() != x.cols()) {
    throw ShapeError("softmax_rows: mask length " + std::to_string(mask.size()) +
                     " does not match input " + x.shape_str());
  }
  if (!out.same_shape(x)) out = Tensor2D(x.rows(), x.cols());
}

}  // namespace

void set_backend(Backend b) noexcept { g_backend.store(b); }
Backend backend() noexcept { return g_backend.load(); }

bool openmp_available() noexcept {
#ifdef CME_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() noexcept {
#ifdef CME_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_serial(bool ta, bool tb, const Tensor2D& a, const Tensor2D& b, Tensor2D& c,
                 bool accumulate) {
  const GemmDims d = check_gemm(ta, tb, a, b, c, accumulate);
  for (std::size_t i = 0; i < d.m; ++i) gemm_row(i, ta, tb, a, b, c, d);
}

void gemm_openmp(bool ta, bool tb, const Tensor2D& a, const Tensor2D& b, Tensor2D& c,
                 bool accumulate) {
  const GemmDims d = check_gemm(ta, tb, a, b, c, accumulate);
  const auto m = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row(static_cast<std::size_t>(i), ta, tb, a, b, c, d);
}

void gemm(bool ta, bool tb, const Tensor2D& a, const Tensor2D& b, Tensor2D& c, bool accumulate) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (backend() == Backend::OpenMP && m > 1 && m * n * k >= kParallelGemmThreshold) {
    gemm_openmp(ta, tb, a, b, c, accumulate);
  } else {
    gemm_serial(ta, tb, a, b, c, accumulate);
  }
}

void softmax_rows_serial(const Tensor2D& x, std::span<const unsigned char> mask, Tensor2D& out) {
  check_softmax(x, mask, out);
  for (std::size_t r = 0; r < x.rows(); ++r) softmax_row(x.row(r), mask, out.row(r));
}

void softmax_rows_openmp(const Tensor2D& x, std::span<const unsigned char> mask, Tensor2D& out) {
  check_softmax(x, mask, out);
  const auto rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    softmax_row(x.row(ur), mask, out.row(ur));
  }
}

}  // namespace cme::kernels
