// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small pre-norm transformer encoder with a softmax classification head
// read from the CLS position. Attention probabilities of every layer stay
// on the tape so attribution can differentiate through them.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cme/data.hpp"
#include "cme/tape.hpp"
#include "cme/tensor.hpp"

namespace cme {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t d_ff = 64;
  std::size_t layers = 2;
  std::size_t num_classes = 2;
  double init_range = 0.05;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Parameter {
  std::string name;
  Tensor2D value;
  Tensor2D grad;
};

/// All trainable tensors in a fixed order, each with its gradient buffer.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg);

  [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
  [[nodiscard]] std::vector<Parameter>& all() noexcept { return params_; }
  [[nodiscard]] const std::vector<Parameter>& all() const noexcept { return params_; }
  [[nodiscard]] std::size_t num_scalars() const;

  [[nodiscard]] Parameter& at(std::size_t i) { return params_.at(i); }
  [[nodiscard]] const Parameter& at(std::size_t i) const { return params_.at(i); }
  [[nodiscard]] const Parameter& find(const std::string& name) const;
  [[nodiscard]] Parameter& find(const std::string& name);

  // Fixed layout indices.
  static constexpr std::size_t kTokenEmbedding = 0;
  static constexpr std::size_t kPositionEmbedding = 1;
  static constexpr std::size_t kPerLayer = 12;
  enum LayerSlot : std::size_t {
    kLn1Scale = 0, kLn1Offset, kQuery, kKey, kValue, kOutput,
    kLn2Scale, kLn2Offset, kFf1, kFf1Bias, kFf2, kFf2Bias
  };
  [[nodiscard]] std::size_t layer_index(std::size_t layer, LayerSlot slot) const {
    return 2 + layer * kPerLayer + slot;
  }
  [[nodiscard]] std::size_t final_ln_scale() const { return 2 + config_.layers * kPerLayer; }
  [[nodiscard]] std::size_t final_ln_offset() const { return final_ln_scale() + 1; }
  [[nodiscard]] std::size_t head_weight() const { return final_ln_scale() + 2; }
  [[nodiscard]] std::size_t head_bias() const { return final_ln_scale() + 3; }

  void zero_grad();
  [[nodiscard]] bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  ModelConfig config_;
  std::vector<Parameter> params_;
};

/// Weights ~ U(-init_range, init_range) from the "init" sub-stream of `seed`;
/// biases and layer-norm offsets zero, layer-norm scales one.
[[nodiscard]] ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Adds `delta` to one post-softmax attention probability. Test hook for
/// finite-difference checks on attention weights.
struct AttentionPerturbation {
  std::size_t layer = 0;
  std::size_t example = 0;
  std::size_t head = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  double delta = 0.0;
};

struct ForwardOptions {
  std::optional<AttentionPerturbation> perturb;
};

struct ForwardOutput {
  std::unique_ptr<GradTape> tape;
  Tensor2D logits;         ///< batch x C
  Tensor2D probabilities;  ///< batch x C
  std::vector<Var> logit_vars;  ///< per example, 1 x C
  std::vector<Var> prob_vars;   ///< per example, 1 x C
  std::vector<Var> param_vars;  ///< aligned with ModelParams::all()
  /// attention[layer][example][head], each seq_len x seq_len.
  std::vector<std::vector<std::vector<Var>>> attention;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t heads = 0;
  /// batch x seq_len, 1 where a key position can be attended to.
  std::vector<unsigned char> key_mask;

  [[nodiscard]] const Tensor2D& attention_weights(std::size_t layer, std::size_t example,
                                                  std::size_t head) const {
    return attention.at(layer).at(example).at(head).value();
  }
  [[nodiscard]] std::size_t predicted(std::size_t example) const;
};

[[nodiscard]] ForwardOutput forward(const ModelParams& params, const Batch& batch,
                                    const ForwardOptions& opts = {});

/// Adds the gradients held on the forward tape (from its last backward
/// pass) into the parameters' gradient buffers.
void accumulate_param_grads(const ForwardOutput& out, ModelParams& params);

/// Layer whose CLS attention row is used for attribution: explicit override
/// or the penultimate layer. Throws ConfigError when the model has < 2 layers
/// and no override is given.
[[nodiscard]] std::size_t attribution_layer(const ModelConfig& cfg, std::optional<std::size_t> override_layer);

/// CLS-row attention of `layer`, averaged over heads, with special/pad
/// positions set to 0. batch x seq_len.
[[nodiscard]] Tensor2D penultimate_start_attention(const ForwardOutput& out, const Batch& batch,
                                                   std::optional<std::size_t> layer = std::nullopt);

/// Logits for every example, evaluated in order. n x C.
[[nodiscard]] Tensor2D predict_logits(const ModelParams& params,
                                      std::span<const EncodedExample> examples,
                                      std::size_t batch_size = 64);

// ---- checkpoints -------------------------------------------------------------

/// Everything needed to reproduce predictions: architecture, vocabulary,
/// weights, and the max sequence length used for tokenization.
struct Checkpoint {
  ModelParams params;
  Vocab vocab;
};

/// Layout: one JSON header line (format/version, config, vocab, tensor
/// table with name/shape/offset in fixed order), a newline, then the
/// weights as a flat little-endian float64 blob in table order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cme
