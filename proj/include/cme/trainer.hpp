// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cme/data.hpp"
#include "cme/model.hpp"
#include "cme/objective.hpp"

namespace cme {

enum class LossMode { MLE, LS, CME, CME_LS };

[[nodiscard]] const char* to_string(LossMode m);
/// Accepts mle, ls, cme, cme-ls (case-insensitive). Unknown names throw ConfigError.
[[nodiscard]] LossMode parse_loss_mode(std::string_view s);
[[nodiscard]] bool uses_calibration_term(LossMode m);
[[nodiscard]] bool uses_label_smoothing(LossMode m);

struct TrainingConfig {
  std::size_t epochs = 3;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  double lambda = 0.05;
  double sigma = 0.1;  ///< only applied in LS modes
  LossMode mode = LossMode::CME;
  double clip = 1.0;
  std::uint64_t seed = 1;
  std::size_t bins = 10;

  bool confidence_only = false;
  bool unscaled_attention = false;
  bool sqrt_len_scale = false;
  bool use_logit_gradient = false;
  bool normalize_pairs = false;
  /// Reserved: differentiating through the attention-gradient factor is not implemented.
  bool second_order = false;
  bool sort_by_length = false;
  std::optional<std::size_t> attr_layer;
  /// One backward over L_classify + lambda * L_calib instead of two passes.
  bool fused_backward = true;

  void validate() const;
  [[nodiscard]] ObjectiveOptions objective() const;
};

struct EpochReport {
  std::size_t epoch = 0;  ///< 1-based
  double classify_loss = 0.0;  ///< mean over batches
  double calib_loss = 0.0;     ///< mean over batches (0 when not used)
  double total_loss = 0.0;
  std::size_t pairs = 0;       ///< wrong/correct pairs seen this epoch
  double dev_accuracy = 0.0;
  double dev_ece = 0.0;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  std::string checkpoint_path;
};

struct StepStats {
  double classify = 0.0;
  double calib = 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  double grad_norm = 0.0;  ///< before clipping
};

/// Accumulates d(L_CME)/d(theta) for one batch into params' gradient buffers
/// without updating the weights.
StepStats compute_gradients(ModelParams& params, const Batch& batch, const TrainingConfig& cfg);

/// Global-norm clip to `clip`, then theta -= lr * g; gradients are zeroed.
/// Returns the pre-clip norm. Non-finite gradients throw NumericalError.
double optimizer_step(ModelParams& params, double learning_rate, double clip);

/// One full step: gradients, clip, update.
StepStats train_step(ModelParams& params, const Batch& batch, const TrainingConfig& cfg);

struct TrainData {
  std::span<const EncodedExample> train;
  std::span<const EncodedExample> dev;
};

/// Called after each epoch with the epoch's report.
using EpochCallback = std::function<void(const EpochReport&, const ModelParams&)>;

[[nodiscard]] TrainReport train(ModelParams& params, const TrainData& data, const TrainingConfig& cfg,
                                const EpochCallback& on_epoch = {});

}  // namespace cme
