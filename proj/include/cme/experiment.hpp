// SPDX-License-Identifier: Apache-2.0
#pragma once
// Evaluation, run manifests, and multi-seed sweeps.
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>
#include "json.hpp"
#include "cme/data.hpp"
#include "cme/metrics.hpp"
#include "cme/model.hpp"
#include "cme/posthoc.hpp"
#include "cme/trainer.hpp"

namespace cme {

using Json = nlohmann::ordered_json;

/// git-describe-style id baked in at configure time ("unknown" outside a checkout).
[[nodiscard]] std::string build_id();

// ---- config <-> JSON ---------------------------------------------------------

[[nodiscard]] Json to_json(const TrainingConfig& cfg);
/// Keys missing from `j` keep the value from `base`; unknown keys throw ConfigError.
[[nodiscard]] TrainingConfig training_config_from_json(const Json& j, TrainingConfig base = {});
[[nodiscard]] Json to_json(const ModelConfig& cfg);
[[nodiscard]] Json to_json(const SynthOptions& opts);
[[nodiscard]] SynthOptions synth_options_from_json(const Json& j, SynthOptions base = {});

// ---- evaluation ------------------------------------------------------------------

struct Evaluation {
  std::vector<PredictionRecord> records;
  double ece = 0.0;
  double accuracy = 0.0;
};

[[nodiscard]] Evaluation evaluate_records(std::vector<PredictionRecord> records, std::size_t K = 10,
                                          Binning binning = Binning::EqualWidth);
[[nodiscard]] Evaluation evaluate(const ModelParams& params, const Vocab& vocab,
                                  std::span<const Example> examples, std::size_t K = 10,
                                  Binning binning = Binning::EqualWidth, double temperature = 1.0);

/// {"n", "ece", "accuracy", "bins": [...]}.
[[nodiscard]] Json metrics_json(const Evaluation& e, std::size_t K = 10,
                                Binning binning = Binning::EqualWidth);

struct OodEvaluation {
  Evaluation ootb;
  std::optional<Temperature> temperature;  ///< fitted on dev, never on OD
  std::optional<Evaluation> scaled;
};

/// OOTB metrics on the OD set plus, when a dev set is given, metrics after
/// dev-fitted temperature scaling. OD labels outside the model's label space
/// throw DataError.
[[nodiscard]] OodEvaluation evaluate_ood(const ModelParams& params, const Vocab& vocab,
                                         std::span<const Example> od,
                                         std::span<const Example> dev = {}, std::size_t K = 10);
[[nodiscard]] Json metrics_json(const OodEvaluation& e, std::size_t K = 10);

/// Label range check shared by eval commands.
void check_label_space(std::span<const Example> examples, std::size_t num_classes,
                       const std::string& what);

// ---- data sources ------------------------------------------------------------------

/// Either a directory with train/dev/test(/od).jsonl or the synthetic workload.
struct DataSpec {
  std::optional<std::filesystem::path> dir;
  std::size_t synth_n = 2000;
  double noise_rate = 0.2;
  std::uint64_t data_seed = 7;
  std::size_t od_n = 200;
  SynthOptions synth;
};

struct DataSplits {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
  std::vector<Example> od;  ///< may be empty
};

[[nodiscard]] DataSplits load_splits(const DataSpec& spec);
[[nodiscard]] Json to_json(const DataSpec& spec);
[[nodiscard]] DataSpec data_spec_from_json(const Json& j);

// ---- sweep ---------------------------------------------------------------------------

enum class Variant { Default, ConfidenceOnly, UnscaledAttention };
[[nodiscard]] const char* to_string(Variant v);
[[nodiscard]] Variant parse_variant(std::string_view s);

struct ArchSpec {
  std::size_t max_len = 64;
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t d_ff = 64;
  std::size_t layers = 2;
};

struct SweepSpec {
  DataSpec data;
  ArchSpec arch;
  TrainingConfig training;  ///< seed, lambda and mode are overridden per run
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<double> lambdas = {0.05, 0.1, 0.5, 1.0};
  std::vector<LossMode> modes = {LossMode::MLE, LossMode::CME};
  /// Ablation variants; only applied to modes with a calibration term.
  std::vector<Variant> variants = {Variant::Default};
  std::size_t bins = 10;
};

[[nodiscard]] Json to_json(const SweepSpec& spec);
[[nodiscard]] SweepSpec sweep_spec_from_json(const Json& j);

struct RunResult {
  LossMode mode = LossMode::MLE;
  Variant variant = Variant::Default;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double dev_ece = 0.0;
  double dev_accuracy = 0.0;
  double test_ece = 0.0;
  double test_accuracy = 0.0;
  double od_ece = 0.0;
  double od_ts_ece = 0.0;
  double od_accuracy = 0.0;
  double temperature = 1.0;
  double dev_ts_ece = 0.0;
  double dev_ece_at_one = 0.0;
  std::string dir;  ///< relative to the sweep output directory
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};
/// Population mean/std. Empty input throws MetricError.
[[nodiscard]] Stat mean_std(std::span<const double> values);

struct CellSummary {
  LossMode mode = LossMode::MLE;
  Variant variant = Variant::Default;
  double lambda = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
  Stat dev_ece, dev_accuracy, test_ece, test_accuracy, od_ece, od_ts_ece, od_accuracy;
};

struct Selection {
  LossMode mode = LossMode::MLE;
  Variant variant = Variant::Default;
  double lambda = 0.0;
  std::size_t cell = 0;  ///< index into SweepResult::cells
};

struct SweepResult {
  std::vector<RunResult> runs;
  std::vector<CellSummary> cells;
  /// One per (mode, variant): the lambda with minimal mean dev ECE.
  std::vector<Selection> selected;
  bool partial = false;
  [[nodiscard]] const CellSummary* selected_cell(LossMode mode, Variant variant = Variant::Default) const;
};

/// Runs are keyed by (mode, variant, lambda, seed) in a fixed order. When
/// `out_dir` is given, per-run metrics/reliability/logits files plus
/// summary.json are written there.
[[nodiscard]] SweepResult run_sweep(const SweepSpec& spec,
                                    const std::optional<std::filesystem::path>& out_dir = std::nullopt);
[[nodiscard]] Json summary_json(const SweepResult& r);

// ---- manifests ---------------------------------------------------------------------------

struct RunManifest {
  std::string command;
  Json config;
  std::vector<std::uint64_t> seeds;
  std::string build;
  std::vector<std::string> outputs;  ///< relative to the manifest's directory
};

[[nodiscard]] Json to_json(const RunManifest& m);
[[nodiscard]] RunManifest manifest_from_json(const Json& j);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);
[[nodiscard]] RunManifest read_manifest(const std::filesystem::path& path);

/// Sweep plus manifest.json in `out_dir`.
SweepResult run_sweep_with_manifest(const SweepSpec& spec, const std::filesystem::path& out_dir);
/// Re-runs the sweep recorded in a manifest into `out_dir`.
SweepResult replay_sweep(const RunManifest& m, const std::filesystem::path& out_dir);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cme
