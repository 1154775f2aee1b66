// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>

#include "cme/errors.hpp"
#include "cme/kernels.hpp"
#include "cme/metrics.hpp"
#include "cme/posthoc.hpp"
#include "cme/rng.hpp"
#include "oracles.hpp"

using namespace cme;

namespace {

struct LabeledLogits {
  Tensor2D logits;
  std::vector<int> labels;
};

/// Binary logits whose softmax is calibrated: label ~ Bernoulli(p1).
LabeledLogits calibrated(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  LabeledLogits d{Tensor2D(n, 2), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double m = rng.uniform(-4.0, 4.0);
    const double p1 = 1.0 / (1.0 + std::exp(-m));
    d.labels.push_back(rng.uniform() < p1 ? 1 : 0);
    d.logits(i, 0) = 0.0;
    d.logits(i, 1) = m * scale;
  }
  return d;
}

double oracle_ece_at(const LabeledLogits& d, double T, std::size_t K) {
  std::vector<oracle::Rec> rs;
  for (std::size_t i = 0; i < d.logits.rows(); ++i) {
    std::vector<double> z;
    for (std::size_t c = 0; c < d.logits.cols(); ++c) z.push_back(d.logits(i, c) / T);
    const auto p = oracle::softmax(z);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < p.size(); ++c) {
      if (p[c] > p[arg]) arg = c;
    }
    rs.push_back({p[arg], static_cast<int>(arg) == d.labels[i]});
  }
  return oracle::ece(rs, K);
}

}  // namespace

TEST_SUITE("posthoc") {

TEST_CASE("apply_temperature") {
  const std::vector<double> z = {2.0, 0.0};
  const auto p1 = apply_temperature(z, 1.0);
  const auto ref = oracle::softmax(z);
  CHECK(std::fabs(p1[0] - ref[0]) < 1e-15);
  const auto p2 = apply_temperature(z, 2.0);
  CHECK(std::fabs(p2[0] - 0.7311) < 1e-4);
  CHECK(std::fabs(p2[1] - 0.2689) < 1e-4);
  const auto p10 = apply_temperature(z, 10.0);
  CHECK(std::fabs(p10[0] - 0.5) < std::fabs(p1[0] - 0.5));
  CHECK_THROWS_AS((void)apply_temperature(z, 0.0), ConfigError);
  CHECK_THROWS_AS((void)apply_temperature(z, -1.0), ConfigError);
}

TEST_CASE("temperature grid") {
  const auto g = temperature_grid();
  REQUIRE(g.size() == kTemperatureGridSize);
  CHECK(g.front() == 0.01);
  CHECK(g[kUnitTemperatureIndex] == 1.0);
  CHECK(g.back() == 10.0);
}

TEST_CASE("temperature scaling never changes accuracy") {
  Rng rng(12);
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t n = 1 + rng.below(50), C = 2 + rng.below(4);
    Tensor2D z(n, C);
    for (double& v : z.data()) v = rng.normal() * 4.0;
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(C));
    double T = 10.0 * rng.uniform();
    if (T == 0.0) T = 1e-3;
    CHECK(accuracy(records_from_logits({}, y, z, 1.0)) == accuracy(records_from_logits({}, y, z, T)));
  }
}

TEST_CASE("already-calibrated confident dev set keeps T = 1") {
  Tensor2D z(20, 2);
  std::vector<int> y(20);
  for (std::size_t i = 0; i < 20; ++i) {
    y[i] = static_cast<int>(i % 2);
    z(i, static_cast<std::size_t>(y[i])) = 60.0;
  }
  const Temperature t = fit_temperature(z, y);
  CHECK(t.dev_ece == t.dev_ece_at_one);
  CHECK(t.value == 1.0);
  CHECK(t.grid_index == kUnitTemperatureIndex);
}

TEST_CASE("tie rule prefers T nearest one, then the smaller T") {
  std::vector<double> flat(kTemperatureGridSize, 0.5);
  CHECK(select_temperature(flat) == kUnitTemperatureIndex);
  std::vector<double> two(kTemperatureGridSize, 0.5);
  two[89] = 0.1;   // T = 0.90
  two[109] = 0.1;  // T = 1.10
  CHECK(select_temperature(two) == 89);
  two[101] = 0.1;  // T = 1.02
  CHECK(select_temperature(two) == 101);
}

TEST_CASE("doubling calibrated logits is undone by T near 2") {
  const auto d = calibrated(20000, 3, 2.0);
  const Temperature t = fit_temperature(d.logits, d.labels);
  CHECK(t.value >= 1.8);
  CHECK(t.value <= 2.2);
}

TEST_CASE("fitted dev ECE is the grid minimum and never above T = 1") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto d = calibrated(300, seed, 0.5 + static_cast<double>(seed));
    const Temperature t = fit_temperature(d.logits, d.labels);
    CHECK(t.dev_ece <= t.dev_ece_at_one);
    double best = 1e9;
    for (double T : temperature_grid()) best = std::min(best, oracle_ece_at(d, T, 10));
    CHECK(std::fabs(t.dev_ece - best) < 1e-12);
    CHECK(std::fabs(t.dev_ece_at_one - oracle_ece_at(d, 1.0, 10)) < 1e-12);
  }
}

TEST_CASE("serial and OpenMP grid evaluation agree bitwise") {
  const auto d = calibrated(2000, 17, 3.0);
  CHECK(grid_ece_serial(d.logits, d.labels) == grid_ece_openmp(d.logits, d.labels));
  const Temperature a = fit_temperature(d.logits, d.labels, 10, kernels::Backend::Serial);
  const Temperature b = fit_temperature(d.logits, d.labels, 10, kernels::Backend::OpenMP);
  CHECK(a.value == b.value);
  CHECK(a.dev_ece == b.dev_ece);
}

TEST_CASE("empty dev set is a metric error") {
  const std::vector<int> none;
  CHECK_THROWS_AS((void)fit_temperature(Tensor2D(0, 2), none), MetricError);
}

}  // TEST_SUITE
