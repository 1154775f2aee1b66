// SPDX-License-Identifier: Apache-2.0
#pragma once

// L = L_classify + lambda * L_calib, where L_calib sums the squared hinge
// max(0, t_i - t_j)^2 over every (wrong i, correct j) pair of a mini-batch
// and t = ||a||_2 * confidence.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cme/attribution.hpp"
#include "cme/data.hpp"
#include "cme/model.hpp"
#include "cme/tape.hpp"
#include "cme/tensor.hpp"

namespace cme {

struct ExampleScore {
  std::size_t index = 0;
  double t = 0.0;
  int error = 0;  ///< zero-one error of the prediction
  double confidence = 0.0;
};

using Pair = std::pair<std::size_t, std::size_t>;

/// (1 - sigma) * one_hot(label) + sigma / C, as a 1 x C row.
[[nodiscard]] Tensor2D smoothed_target(int label, std::size_t num_classes, double sigma);

/// Mean cross-entropy of probability rows against (smoothed) targets.
/// sigma outside [0, 1) throws ConfigError.
[[nodiscard]] double classify_loss(const Tensor2D& probabilities, std::span<const int> labels,
                                   double sigma = 0.0);

/// Every (i, j) with error_i = 1 and error_j = 0, i-major.
[[nodiscard]] std::vector<Pair> pair_set(std::span<const ExampleScore> scores);

/// Sum (or mean, when normalize) of max(0, t_i - t_j)^2 over the pairs.
[[nodiscard]] double calib_loss(std::span<const ExampleScore> scores, std::span<const Pair> pairs,
                                bool normalize = false);

/// classify + lambda * calib; lambda < 0 throws ConfigError.
[[nodiscard]] double total_loss(double classify, double calib, double lambda);

enum class ScoreMode {
  AttributionTimesConfidence,
  ConfidenceOnly,  ///< ablation: t = c
};

struct ObjectiveOptions {
  double lambda = 0.05;
  double sigma = 0.0;
  ScoreMode score = ScoreMode::AttributionTimesConfidence;
  bool unscaled_attention = false;
  bool scale_by_sqrt_len = false;
  bool normalize_pairs = false;
  bool use_logit_gradient = false;
  std::optional<std::size_t> attr_layer;
};


/// Mean (smoothed) cross-entropy over the batch as a tape node.
[[nodiscard]] Var classify_loss_on_tape(const ForwardOutput& out, std::span<const int> labels,
                                        double sigma);

/// Builds t_i and L_calib on the tape. Needs the attention gradients for the
/// scaled variant (ignored for ConfidenceOnly/unscaled).
[[nodiscard]] Var calib_loss_on_tape(const ForwardOutput& out, const Batch& batch,
                                     const Tensor2D& attention_grads, std::size_t layer,
                                     const ObjectiveOptions& opts, std::vector<ExampleScore>& scores,
                                     std::vector<Pair>& pairs);

}  // namespace cme
