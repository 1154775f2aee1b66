// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <limits>

#include "cme/errors.hpp"
#include "cme/trainer.hpp"
#include "toy_model.hpp"

using namespace cme;

namespace {

ModelParams scalar_model() {
  // a ModelParams with the layout of a tiny model; tests poke a single entry
  ModelConfig c = toy::config(1, 1);
  c.vocab_size = 5;
  return init_params(c, 1);
}

struct SynthData {
  std::vector<EncodedExample> train, dev;
  ModelConfig model;
};

SynthData synth_data(std::size_t n, double noise) {
  const auto s = synth_task(n, noise, 7);
  const Vocab v = build_vocab(s.train);
  SynthData d{encode(s.train, v, 64), encode(s.dev, v, 64), {}};
  d.model.vocab_size = v.size();
  return d;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("optimizer step arithmetic") {
  ModelParams p = scalar_model();
  for (auto& q : p.all()) q.value.fill(0.0);
  p.at(0).value(0, 0) = 1.0;
  p.at(0).grad(0, 0) = 0.5;
  optimizer_step(p, 0.1, 10.0);
  CHECK(p.at(0).value(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
  for (const auto& q : p.all()) {
    for (double g : q.grad.data()) CHECK(g == 0.0);
  }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  ModelParams p = scalar_model();
  const ModelParams before = p;
  optimizer_step(p, 0.1, 1.0);
  CHECK(p == before);
}

TEST_CASE("global-norm clipping halves a gradient of norm two") {
  ModelParams p = scalar_model();
  for (auto& q : p.all()) q.value.fill(0.0);
  p.at(0).grad(0, 0) = 1.2;
  p.at(1).grad(0, 1) = -1.6;
  const double norm = optimizer_step(p, 1.0, 1.0);
  CHECK(norm == doctest::Approx(2.0));
  CHECK(p.at(0).value(0, 0) == doctest::Approx(-0.6));
  CHECK(p.at(1).value(0, 1) == doctest::Approx(0.8));
}

TEST_CASE("non-finite gradients abort the step") {
  ModelParams p = scalar_model();
  p.at(0).grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(optimizer_step(p, 0.1, 1.0), NumericalError);
}

TEST_CASE("config validation") {
  TrainingConfig c;
  c.second_order = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_loss_mode("CME-LS") == LossMode::CME_LS);
  CHECK_THROWS_AS((void)parse_loss_mode("focal"), ConfigError);
}

TEST_CASE("CME with lambda zero reproduces MLE bitwise") {
  const auto d = synth_data(200, 0.2);
  ModelParams a = init_params(d.model, 3);
  ModelParams b = a;
  TrainingConfig mle;
  mle.mode = LossMode::MLE;
  mle.epochs = 2;
  TrainingConfig cme = mle;
  cme.mode = LossMode::CME;
  cme.lambda = 0.0;
  (void)train(a, {d.train, d.dev}, mle);
  (void)train(b, {d.train, d.dev}, cme);
  CHECK(a == b);
}

TEST_CASE("batches with no mixed pairs update exactly like MLE") {
  const ModelParams p = init_params(toy::config(), 51);
  Batch b = toy::batch(6, 52);
  const auto out = forward(p, b);
  for (int all_wrong = 0; all_wrong < 2; ++all_wrong) {
    for (std::size_t i = 0; i < b.size; ++i) {
      const int pred = static_cast<int>(out.predicted(i));
      b.labels[i] = all_wrong ? 1 - pred : pred;
    }
    ModelParams x = p, y = p;
    TrainingConfig mle;
    mle.mode = LossMode::MLE;
    TrainingConfig cme = mle;
    cme.mode = LossMode::CME;
    cme.lambda = 1.0;
    (void)train_step(x, b, mle);
    const StepStats st = train_step(y, b, cme);
    CHECK(st.pairs == 0);
    CHECK(x == y);
  }
}

TEST_CASE("fused and two-pass backward agree") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ModelParams a = init_params(toy::config(), seed);
    ModelParams b = a;
    const Batch batch = toy::batch(8, 60 + seed);
    TrainingConfig cfg;
    cfg.mode = LossMode::CME_LS;
    cfg.lambda = 0.7;
    cfg.fused_backward = true;
    a.zero_grad();
    const StepStats sa = compute_gradients(a, batch, cfg);
    cfg.fused_backward = false;
    b.zero_grad();
    const StepStats sb = compute_gradients(b, batch, cfg);
    CHECK(sa.pairs == sb.pairs);
    CHECK(sa.total == doctest::Approx(sb.total).epsilon(1e-14));
    for (std::size_t k = 0; k < a.all().size(); ++k) {
      for (std::size_t i = 0; i < a.at(k).grad.size(); ++i) {
        CHECK(std::fabs(a.at(k).grad.data()[i] - b.at(k).grad.data()[i]) <= 1e-10);
      }
    }
  }
}

TEST_CASE("training is deterministic and matches the stored fixture") {
  const auto d = synth_data(200, 0.2);
  TrainingConfig cfg;
  cfg.epochs = 1;
  ModelParams a = init_params(d.model, 1);
  ModelParams b = init_params(d.model, 1);
  const TrainReport ra = train(a, {d.train, d.dev}, cfg);
  const TrainReport rb = train(b, {d.train, d.dev}, cfg);
  CHECK(a == b);
  REQUIRE(ra.epochs.size() == 1);
  CHECK(ra.epochs[0].dev_accuracy == rb.epochs[0].dev_accuracy);
  CHECK(ra.epochs[0].classify_loss == rb.epochs[0].classify_loss);
  CHECK(ra.epochs[0].dev_accuracy == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(ra.epochs[0].classify_loss == doctest::Approx(0.69762617476980604).epsilon(1e-9));
}

TEST_CASE("noiseless task: training loss falls below 0.1 within three epochs") {
  const auto d = synth_data(2000, 0.0);
  ModelParams p = init_params(d.model, 1);
  TrainingConfig cfg;
  cfg.mode = LossMode::MLE;
  const TrainReport r = train(p, {d.train, d.dev}, cfg);
  CHECK(r.epochs.back().classify_loss < 0.1);
}

TEST_CASE("a non-finite loss aborts with diagnostics") {
  const auto d = synth_data(200, 0.0);
  ModelParams p = init_params(d.model, 1);
  p.at(p.head_bias()).value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainingConfig cfg;
  try {
    (void)train(p, {d.train, d.dev}, cfg);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

}  // TEST_SUITE
