// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation over Tensor2D values.
//
// A GradTape records every primitive op in execution order. backward()
// walks the record once in reverse, visiting each reachable op exactly
// once. Leaves are either constants (no gradient), owned variables, or
// parameters that reference caller-owned storage; parameter gradients stay
// on the tape until the caller copies them out, so a seeded backward pass
// never touches the caller's gradient buffers.
//
// A tape is single-threaded. Distinct tapes share no state.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "cme/tensor.hpp"

namespace cme {

class GradTape;

/// Handle to a node on a tape.
class Var {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  Var() = default;
  Var(GradTape* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] GradTape* tape() const noexcept { return tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr && id_ != npos; }
  [[nodiscard]] const Tensor2D& value() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }

 private:
  GradTape* tape_ = nullptr;
  std::size_t id_ = npos;
};

class GradTape {
 public:
  /// Propagates the node's output gradient into its inputs' gradients.
  using BackwardFn = std::function<void(GradTape&, std::size_t self)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  Var constant(Tensor2D value);
  Var variable(Tensor2D value);
  /// Leaf referencing external storage. `value` must outlive the tape and stay unmodified.
  Var parameter(const Tensor2D& value);

  /// Reverse pass from a 1x1 root. With retain=false the tape is marked
  /// consumed and any further backward() throws ContractError.
  void backward(Var root, bool retain = false);

  /// Gradient of the last backward pass root w.r.t. `v`; zeros if `v` was not reached.
  [[nodiscard]] Tensor2D grad(Var v) const;
  [[nodiscard]] const Tensor2D& value(std::size_t id) const;
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  [[nodiscard]] bool consumed() const noexcept { return consumed_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  /// Node ids whose backward function ran during the last pass, in visit order.
  [[nodiscard]] const std::vector<std::size_t>& last_backward_order() const noexcept {
    return visit_order_;
  }

  // Used by op implementations.
  Var record(Tensor2D value, std::span<const Var> inputs, BackwardFn fn);
  [[nodiscard]] const Tensor2D& out_grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient slot of `id`, zero-initialized on first access within a pass.
  Tensor2D& grad_slot(std::size_t id);

 private:
  struct Node {
    Tensor2D value;
    const Tensor2D* external = nullptr;
    Tensor2D grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
  bool consumed_ = false;
};

// ---- primitive ops -------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equally shaped tensors.
Var mul(Var a, Var b);
/// Elementwise product with a constant tensor (no gradient flows into `c`).
Var mul_const(Var a, const Tensor2D& c);
/// x (r x c) + bias (1 x c) broadcast over rows.
Var add_row_bias(Var x, Var bias);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var relu(Var a);
Var square(Var a);
Var abs(Var a);
/// Row softmax; columns with mask 0 are excluded from the support (probability 0).
Var softmax_rows(Var x, std::vector<unsigned char> col_mask = {});
/// Rows of `table` selected by `indices` (embedding lookup).
Var gather_rows(Var table, std::vector<std::size_t> indices);
/// Columns of `x` selected by `indices`.
Var gather_cols(Var x, std::vector<std::size_t> indices);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
/// Per-row layer normalization with learned scale/offset (each 1 x cols).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Frobenius norm as a 1x1 tensor.
Var l2_norm(Var x);
Var sum(Var x);
Var element(Var x, std::size_t r, std::size_t c);
/// Cross-entropy of softmax(logits) against a target distribution, both 1 x C.
Var softmax_cross_entropy(Var logits, const Tensor2D& target);

}  // namespace cme
