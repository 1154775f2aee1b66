// SPDX-License-Identifier: Apache-2.0
#pragma once

// Token attributions from scaled attention: the CLS-row attention weight of
// each real token times the gradient of the predicted output w.r.t. that
// weight, made absolute and softmax-normalized over the real tokens.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cme/data.hpp"
#include "cme/model.hpp"
#include "cme/tape.hpp"

namespace cme {

struct AttributionVector {
  std::string id;
  std::vector<std::size_t> positions;  ///< sequence positions of the real tokens
  std::vector<double> scores;          ///< one per real token; sums to 1

  [[nodiscard]] std::size_t length() const noexcept { return scores.size(); }
};

struct AttributionOptions {
  /// Plain attention instead of scaled attention (ablation).
  bool unscaled_attention = false;
  /// Differentiate the predicted-class logit instead of its probability.
  bool use_logit = false;
  /// Attention layer override; default is the penultimate layer.
  std::optional<std::size_t> layer;
};

/// d yhat_i / d alpha_ij for the CLS row of `layer`, averaged over heads
/// (batch x seq_len), where yhat_i is the probability (or logit) of
/// `predicted[i]`. Runs a retained backward pass on the forward tape; the
/// caller's parameter gradient buffers are untouched. Throws ContractError
/// if the tape was already consumed.
[[nodiscard]] Tensor2D attention_gradients(const ForwardOutput& out,
                                           std::span<const std::size_t> predicted,
                                           std::size_t layer, bool use_logit = false);
/// Same, seeded at each example's argmax class.
[[nodiscard]] Tensor2D attention_gradients(const ForwardOutput& out, std::size_t layer,
                                           bool use_logit = false);

/// abs(alpha * grad) then softmax over positions whose special mask is 0.
/// Throws DegenerateInputError when every position is special.
[[nodiscard]] AttributionVector scaled_attention(std::span<const double> raw_scores,
                                                 std::span<const double> grads,
                                                 std::span<const unsigned char> special_mask,
                                                 std::string id = {});

/// softmax of the raw attention over real tokens (ablation variant).
[[nodiscard]] AttributionVector unscaled_attention(std::span<const double> raw_scores,
                                                   std::span<const unsigned char> special_mask,
                                                   std::string id = {});

/// ||a||_2, divided by sqrt(l) when requested.
[[nodiscard]] double attribution_magnitude(const AttributionVector& a, bool scale_by_sqrt_len = false);
[[nodiscard]] double l2_norm(std::span<const double> v);

/// Attributions of every example in a batch (values only).
[[nodiscard]] std::vector<AttributionVector> batch_attributions(const ForwardOutput& out,
                                                                const Batch& batch,
                                                                const AttributionOptions& opts,
                                                                std::span<const std::string> ids = {});

/// Differentiable attribution of example `i` on the forward tape, with the
/// gradient factor `grads` (from attention_gradients) held constant.
/// Returns a 1 x l node.
[[nodiscard]] Var attribution_on_tape(const ForwardOutput& out, const Batch& batch, std::size_t i,
                                      std::size_t layer, const Tensor2D& grads,
                                      bool unscaled = false);

}  // namespace cme
