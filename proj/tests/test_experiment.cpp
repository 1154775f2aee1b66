// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cme/errors.hpp"
#include "cme/experiment.hpp"

using namespace cme;
namespace fs = std::filesystem;

namespace {

SweepSpec tiny_spec() {
  SweepSpec s;
  s.data.synth_n = 200;
  s.data.od_n = 40;
  s.arch.d_model = 8;
  s.arch.d_ff = 16;
  s.arch.max_len = 32;
  s.training.epochs = 1;
  s.seeds = {1, 2};
  s.lambdas = {0.1, 1.0};
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cme_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("mean and population std") {
  const std::vector<double> two = {0.02, 0.04};
  const Stat s = mean_std(two);
  CHECK(s.mean == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(s.std == doctest::Approx(0.01).epsilon(1e-12));
  const std::vector<double> one = {0.5};
  CHECK(mean_std(one).std == 0.0);
  const std::vector<double> none;
  CHECK_THROWS_AS((void)mean_std(none), MetricError);
}

TEST_CASE("training config JSON round trip and unknown keys") {
  TrainingConfig c;
  c.mode = LossMode::CME_LS;
  c.lambda = 0.5;
  c.sigma = 0.2;
  c.epochs = 4;
  c.sqrt_len_scale = true;
  c.attr_layer = 0;
  const TrainingConfig back = training_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS((void)training_config_from_json(Json{{"learning_rat", 0.1}}), ConfigError);
  const SweepSpec s = tiny_spec();
  CHECK(to_json(sweep_spec_from_json(to_json(s))) == to_json(s));
}

TEST_CASE("variants parse") {
  CHECK(parse_variant("confidence-only") == Variant::ConfidenceOnly);
  CHECK(std::string(to_string(Variant::UnscaledAttention)) == "unscaled-attention");
  CHECK_THROWS_AS((void)parse_variant("nope"), ConfigError);
}

TEST_CASE("OD evaluation on the test split matches plain evaluation") {
  DataSpec d;
  d.synth_n = 200;
  const DataSplits s = load_splits(d);
  const Vocab v = build_vocab(s.train);
  ModelConfig mc;
  mc.vocab_size = v.size();
  mc.d_model = 8;
  mc.d_ff = 16;
  const ModelParams p = init_params(mc, 1);
  const Evaluation e = evaluate(p, v, s.test);
  const OodEvaluation o = evaluate_ood(p, v, s.test, s.dev);
  CHECK(o.ootb.ece == e.ece);
  CHECK(o.ootb.accuracy == e.accuracy);
  REQUIRE(o.temperature.has_value());
  REQUIRE(o.scaled.has_value());
  CHECK(o.scaled->accuracy == e.accuracy);
  std::vector<Example> bad = s.test;
  bad[0].label = 2;
  CHECK_THROWS_AS((void)evaluate_ood(p, v, bad), DataError);
}

TEST_CASE("sweep selects the lambda with the lowest mean dev ECE") {
  const SweepResult r = run_sweep(tiny_spec());
  CHECK_FALSE(r.partial);
  CHECK(r.runs.size() == 2 + 2 * 2);
  const CellSummary* cme_cell = r.selected_cell(LossMode::CME);
  REQUIRE(cme_cell != nullptr);
  for (const auto& c : r.cells) {
    if (c.mode == LossMode::CME) CHECK(cme_cell->dev_ece.mean <= c.dev_ece.mean);
  }
  const CellSummary* mle = r.selected_cell(LossMode::MLE);
  REQUIRE(mle != nullptr);
  CHECK(mle->lambda == 0.0);
  CHECK(mle->runs == 2);
}

TEST_CASE("replaying a manifest reproduces every output byte for byte") {
  SweepSpec s = tiny_spec();
  s.seeds = {3};
  s.lambdas = {0.5};
  const fs::path a = scratch("replay_a"), b = scratch("replay_b");
  (void)run_sweep_with_manifest(s, a);
  const RunManifest m = read_manifest(a / "manifest.json");
  CHECK(m.seeds == s.seeds);
  REQUIRE_FALSE(m.outputs.empty());
  (void)replay_sweep(m, b);
  for (const auto& rel : m.outputs) {
    REQUIRE(fs::exists(b / rel));
    CHECK_MESSAGE(slurp(a / rel) == slurp(b / rel), rel);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("failed runs mark the sweep partial") {
  SweepSpec s = tiny_spec();
  s.seeds = {1};
  s.lambdas = {0.1};
  s.training.attr_layer = 7;  // only consulted by the calibration term
  const SweepResult r = run_sweep(s);
  CHECK(r.partial);
  for (const auto& run : r.runs) {
    CHECK(run.ok == (run.mode == LossMode::MLE));
    if (!run.ok) CHECK_FALSE(run.error.empty());
  }
}

}  // TEST_SUITE
