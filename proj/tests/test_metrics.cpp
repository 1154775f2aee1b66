// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "cme/errors.hpp"
#include "cme/metrics.hpp"
#include "cme/rng.hpp"
#include "oracles.hpp"

using namespace cme;

namespace {

PredictionRecord rec(double confidence, bool correct) {
  PredictionRecord r;
  r.confidence = confidence;
  r.label = 0;
  r.predicted = correct ? 0 : 1;
  return r;
}

std::vector<oracle::Rec> as_oracle(const std::vector<PredictionRecord>& rs) {
  std::vector<oracle::Rec> out;
  for (const auto& r : rs) out.push_back({r.confidence, r.correct()});
  return out;
}

std::vector<PredictionRecord> hand_example() {
  return {rec(0.9, true), rec(0.8, false), rec(0.3, false), rec(0.4, false)};
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("hand ECE example") {
  const double e = ece(hand_example(), 2);
  // 0.9 and 0.8 are stored above their decimal values, so the exact ECE of
  // the stored inputs is one ulp above the double nearest 0.35.
  CHECK(std::fabs(e - 0.35) <= std::nextafter(0.35, 1.0) - 0.35);
  CHECK(e == oracle::ece(as_oracle(hand_example()), 2));
}

TEST_CASE("bin indices") {
  CHECK(bin_index(0.85, 10) == 8);
  CHECK(bin_index(1.0, 10) == 9);
  CHECK(bin_index(0.0, 10) == 0);
  CHECK(bin_index(0.1, 10) == 1);
  CHECK(bin_index(0.3, 10) == 3);
  CHECK(bin_index(0.7, 10) == 7);
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double c = rng.uniform();
    const std::size_t K = 1 + rng.below(20);
    const std::size_t k = bin_index(c, K);
    CHECK(static_cast<double>(k) / static_cast<double>(K) <= c);
    CHECK(c < static_cast<double>(k + 1) / static_cast<double>(K));
  }
}

TEST_CASE("single bin ECE is the overall gap") {
  const auto rs = hand_example();
  CHECK(ece(rs, 1) == doctest::Approx(std::fabs(0.25 - (0.9 + 0.8 + 0.3 + 0.4) / 4)));
}

TEST_CASE("edge cases") {
  std::vector<PredictionRecord> perfect(5, rec(1.0, true));
  CHECK(ece(perfect) == 0.0);
  CHECK(accuracy(perfect) == 1.0);
  std::vector<PredictionRecord> wrong(3, rec(0.7, false));
  CHECK(accuracy(wrong) == 0.0);
  std::vector<PredictionRecord> mixed = {rec(0.6, true), rec(0.6, true), rec(0.6, false), rec(0.6, true)};
  CHECK(accuracy(mixed) == 0.75);
  std::vector<PredictionRecord> none;
  CHECK_THROWS_AS((void)ece(none), MetricError);
  CHECK_THROWS_AS((void)accuracy(none), MetricError);
}

TEST_CASE("records from logits break ties to the lowest class") {
  const Tensor2D z = Tensor2D::from_rows({{1.0, 1.0}, {0.0, 2.0}});
  const std::vector<int> labels = {0, 0};
  const auto rs = records_from_logits({}, labels, z);
  CHECK(rs[0].predicted == 0);
  CHECK(rs[0].confidence == 0.5);
  CHECK(rs[1].predicted == 1);
  CHECK_FALSE(rs[1].correct());
}

TEST_CASE("ECE matches the brute-force oracle on random record sets") {
  Rng rng(2718);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(500);
    const std::size_t C = 2 + rng.below(4);
    std::vector<PredictionRecord> rs;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(C);
      for (double& v : z) v = rng.normal() * 3.0;
      if (rng.below(20) == 0) z.assign(C, 0.0);
      const auto p = oracle::softmax(z);
      rs.push_back(make_record("", static_cast<int>(rng.below(C)), p));
    }
    const double lib = ece(rs, 10);
    const double ref = oracle::ece(as_oracle(rs), 10);
    CHECK(std::fabs(lib - ref) < 1e-12);
  }
}

TEST_CASE("bin counts sum to n and ECE ignores record order") {
  Rng rng(7);
  std::vector<PredictionRecord> rs;
  for (int i = 0; i < 300; ++i) rs.push_back(rec(0.5 + 0.5 * rng.uniform(), rng.uniform() < 0.7));
  std::size_t total = 0;
  for (const auto& b : bin_predictions(rs, 10)) total += b.count;
  CHECK(total == rs.size());
  const double e = ece(rs, 10);
  for (int k = 0; k < 5; ++k) {
    rng.shuffle(rs);
    CHECK(std::fabs(ece(rs, 10) - e) < 1e-15);
  }
}

TEST_CASE("replacing confidences by bin accuracy leaves only within-bin error") {
  Rng rng(8);
  std::vector<PredictionRecord> rs;
  for (int i = 0; i < 500; ++i) rs.push_back(rec(rng.uniform(), rng.uniform() < 0.6));
  const auto bins = bin_predictions(rs, 10);
  for (auto& r : rs) r.confidence = bins[bin_index(r.confidence, 10)].accuracy;
  CHECK(ece(rs, 10) <= 0.1 + 1e-12);
}

TEST_CASE("equal-mass bins hold nearly equal counts") {
  Rng rng(9);
  std::vector<PredictionRecord> rs;
  for (int i = 0; i < 103; ++i) rs.push_back(rec(rng.uniform(), rng.uniform() < 0.5));
  const auto bins = bin_predictions(rs, 10, Binning::EqualMass);
  std::size_t lo = 1000, hi = 0, total = 0;
  for (const auto& b : bins) {
    lo = std::min(lo, b.count);
    hi = std::max(hi, b.count);
    total += b.count;
  }
  CHECK(total == 103);
  CHECK(hi - lo <= 1);
}

TEST_CASE("reliability data") {
  const auto pts = reliability_data(hand_example(), 2);
  REQUIRE(pts.size() == 2);
  CHECK(pts[1].mean_confidence == doctest::Approx(0.85));
  CHECK(pts[1].accuracy == 0.5);
  CHECK(pts[1].count == 2);

  const auto sparse = reliability_data(std::vector<PredictionRecord>{rec(0.95, true)}, 10);
  CHECK(sparse[2].count == 0);
  CHECK(sparse[2].mean_confidence == doctest::Approx(0.25));
  CHECK(sparse[2].accuracy == 0.0);

  const std::string csv = reliability_csv(pts);
  CHECK(csv.rfind("bin,lower,upper,mean_confidence,accuracy,count\n", 0) == 0);
  const std::string svg = reliability_svg(pts, "t");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("perfectly calibrated records lie on the diagonal") {
  Rng rng(10);
  std::vector<PredictionRecord> rs;
  for (int i = 0; i < 100000; ++i) {
    const double c = 0.5 + 0.5 * rng.uniform();
    rs.push_back(rec(c, rng.uniform() < c));
  }
  for (const auto& p : reliability_data(rs, 10)) {
    if (p.count > 0) CHECK(std::fabs(p.accuracy - p.mean_confidence) < 0.02);
  }
}

}  // TEST_SUITE
