// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cme {

/// One labeled text (or text pair).
struct Example {
  std::string id;
  std::string text;
  std::optional<std::string> text2;
  int label = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

/// Token <-> index map with reserved specials.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kSep = 3;
  static constexpr std::size_t kNumReserved = 4;

  Vocab();
  /// Rebuilds from a full token list (reserved entries first), e.g. from a checkpoint.
  static Vocab from_tokens(std::vector<std::string> tokens);

  [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
  [[nodiscard]] std::size_t index_of(std::string_view token) const;
  [[nodiscard]] bool contains(std::string_view token) const;
  [[nodiscard]] const std::string& token_at(std::size_t index) const { return tokens_.at(index); }
  [[nodiscard]] const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Appends `token` if absent; returns its index.
  std::size_t add(const std::string& token);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Lowercased whitespace tokens.
[[nodiscard]] std::vector<std::string> split_tokens(std::string_view text);

/// Tokens are added in order of first appearance; those seen fewer than
/// `min_freq` times are left out (they will map to UNK).
[[nodiscard]] Vocab build_vocab(std::span<const Example> corpus, std::size_t min_freq = 1);

struct TokenizedText {
  std::vector<std::size_t> ids;
  /// 1 at CLS/SEP positions (padding is added later by batching).
  std::vector<unsigned char> special;
};

/// [CLS] a... ([SEP] b...) truncated to max_len (max_len >= 3).
[[nodiscard]] TokenizedText tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len,
                                     std::optional<std::string_view> text2 = std::nullopt);
[[nodiscard]] TokenizedText tokenize(const Example& ex, const Vocab& vocab, std::size_t max_len);

/// Lowercased tokens of the non-special positions.
[[nodiscard]] std::vector<std::string> detokenize(const TokenizedText& t, const Vocab& vocab);

struct EncodedExample {
  std::size_t source = 0;  ///< index into the dataset it was encoded from
  TokenizedText tokens;
  int label = 0;
};

[[nodiscard]] std::vector<EncodedExample> encode(std::span<const Example> examples,
                                                 const Vocab& vocab, std::size_t max_len);

/// Padded mini-batch. Per-row spans index into flat row-major storage.
struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> token_ids;
  std::vector<unsigned char> attention_mask;  ///< 1 = real token (incl. CLS/SEP), 0 = pad
  std::vector<unsigned char> special_mask;    ///< 1 = CLS/SEP/PAD
  std::vector<int> labels;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> sources;

  [[nodiscard]] std::span<const std::size_t> tokens(std::size_t i) const {
    return std::span<const std::size_t>(token_ids).subspan(i * seq_len, seq_len);
  }
  [[nodiscard]] std::span<const unsigned char> mask(std::size_t i) const {
    return std::span<const unsigned char>(attention_mask).subspan(i * seq_len, seq_len);
  }
  [[nodiscard]] std::span<const unsigned char> specials(std::size_t i) const {
    return std::span<const unsigned char>(special_mask).subspan(i * seq_len, seq_len);
  }
};

/// Pads the given examples (in order) into one batch.
[[nodiscard]] Batch collate(std::span<const EncodedExample> examples);

/// Shuffled mini-batches; the permutation depends only on (seed, epoch).
/// The last partial batch is kept. batch_size < 2 throws ConfigError.
[[nodiscard]] std::vector<Batch> make_batches(std::span<const EncodedExample> examples,
                                              std::size_t batch_size, std::uint64_t seed,
                                              std::size_t epoch = 0, bool sort_by_length = false);

/// In-order batches for evaluation.
[[nodiscard]] std::vector<Batch> sequential_batches(std::span<const EncodedExample> examples,
                                                    std::size_t batch_size);

// ---- synthetic workload --------------------------------------------------

struct SynthOptions {
  std::size_t triggers_per_class = 4;
  std::size_t distractor_vocab = 400;
  std::size_t min_distractors = 4;
  std::size_t max_distractors = 14;
  /// Probability that the minority class also gets planted triggers (one
  /// fewer than the majority), which makes the example harder.
  double contested_rate = 0.25;
  /// Distractor tokens use this prefix; the out-of-domain split swaps it.
  std::string distractor_prefix = "w";
  std::string od_distractor_prefix = "v";
  /// Fraction of distractors drawn from the shifted vocabulary in the OD split.
  double od_shift_rate = 0.5;
};

struct SynthSplits {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
  std::size_t flipped = 0;
};

/// Two-class task: the label is the class with more planted trigger tokens.
/// `noise_rate` of the training labels (exactly floor(rate * |train|)) are
/// flipped; dev/test stay clean. 80/10/10 split.
[[nodiscard]] SynthSplits synth_task(std::size_t n, double noise_rate, std::uint64_t seed,
                                     const SynthOptions& opts = {});

/// Clean examples from the same labeling rule with distractors partly drawn
/// from a disjoint vocabulary.
[[nodiscard]] std::vector<Example> synth_ood(std::size_t n, std::uint64_t seed,
                                             const SynthOptions& opts = {});

// ---- corpus files ----------------------------------------------------------

/// JSONL: {"id": str, "text": str, "text2": optional str, "label": int} per line.
[[nodiscard]] std::vector<Example> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples);

[[nodiscard]] std::size_t num_classes(std::span<const Example> examples);

}  // namespace cme
