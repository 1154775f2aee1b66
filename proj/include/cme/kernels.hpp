// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel kernels. Every kernel has a serial reference implementation
// and an OpenMP variant that parallelizes over independent output rows (or
// grid points); the per-element arithmetic order is identical, so the two
// variants agree bitwise.

#include <cstddef>
#include <span>

#include "cme/tensor.hpp"

namespace cme::kernels {

enum class Backend { Serial, OpenMP };

/// Backend used by the dispatching entry points. Defaults to OpenMP when compiled in.
void set_backend(Backend b) noexcept;
[[nodiscard]] Backend backend() noexcept;
[[nodiscard]] bool openmp_available() noexcept;
[[nodiscard]] int max_threads() noexcept;

/// Work (m*n*k) below which the dispatcher stays serial.
inline constexpr std::size_t kParallelGemmThreshold = std::size_t{1} << 16;

/// C (+)= op(A) * op(B), op = transpose when the flag is set.
/// Shapes are checked; a mismatch throws ShapeError naming both operands.
void gemm_serial(bool trans_a, bool trans_b, const Tensor2D& a, const Tensor2D& b, Tensor2D& c,
                 bool accumulate);
void gemm_openmp(bool trans_a, bool trans_b, const Tensor2D& a, const Tensor2D& b, Tensor2D& c,
                 bool accumulate);
void gemm(bool trans_a, bool trans_b, const Tensor2D& a, const Tensor2D& b, Tensor2D& c,
          bool accumulate);

/// Row-wise softmax with max subtraction. Columns whose mask entry is 0 get
/// probability exactly 0; an empty mask means every column is eligible.
void softmax_rows_serial(const Tensor2D& x, std::span<const unsigned char> col_mask, Tensor2D& out);
void softmax_rows_openmp(const Tensor2D& x, std::span<const unsigned char> col_mask, Tensor2D& out);

}  // namespace cme::kernels
