// SPDX-License-Identifier: Apache-2.0
#include "cme/posthoc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cme/errors.hpp"
#include "cme/metrics.hpp"

namespace cme {

std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
  if (logits.empty()) return {};
  std::vector<double> p(logits.size());
  double mx = logits[0] / temperature;
  for (double z : logits) mx = std::max(mx, z / temperature);
  double s = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) s += (p[c] = std::exp(logits[c] / temperature - mx));
  for (double& v : p) v /= s;
  return p;
}

std::vector<double> temperature_grid() {
  std::vector<double> g(kTemperatureGridSize);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i + 1) / 100.0;
  return g;
}

double ece_at_temperature(const Tensor2D& logits, std::span<const int> labels, double temperature,
                          std::size_t K) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  return ece(records_from_logits({}, labels, logits, temperature), K);
}

namespace {

void check_dev(const Tensor2D& logits, std::span<const int> labels) {
  if (logits.rows() == 0 || labels.empty()) throw MetricError("temperature fit on an empty dev set");
  if (logits.rows() != labels.size()) throw ShapeError("temperature fit: one label per logit row required");
}

}  // namespace

std::vector<double> grid_ece_serial(const Tensor2D& logits, std::span<const int> labels, std::size_t K) {
  check_dev(logits, labels);
  const auto grid = temperature_grid();
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = ece_at_temperature(logits, labels, grid[i], K);
  return out;
}

std::vector<double> grid_ece_openmp(const Tensor2D& logits, std::span<const int> labels, std::size_t K) {
  check_dev(logits, labels);
  const auto grid = temperature_grid();
  std::vector<double> out(grid.size());
  const auto n = static_cast<std::ptrdiff_t>(grid.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    out[ui] = ece_at_temperature(logits, labels, grid[ui], K);
  }
  return out;
}

std::size_t select_temperature(std::span<const double> grid_ece) {
  if (grid_ece.empty()) throw MetricError("empty temperature grid");
  auto dist = [](std::size_t i) {
    return i > kUnitTemperatureIndex ? i - kUnitTemperatureIndex : kUnitTemperatureIndex - i;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid_ece.size(); ++i) {
    if (grid_ece[i] < grid_ece[best] ||
        (grid_ece[i] == grid_ece[best] && (dist(i) < dist(best) || (dist(i) == dist(best) && i < best)))) {
      best = i;
    }
  }
  return best;
}

Temperature fit_temperature(const Tensor2D& dev_logits, std::span<const int> dev_labels, std::size_t K,
                            kernels::Backend backend) {
  const auto grid_ece = backend == kernels::Backend::OpenMP ? grid_ece_openmp(dev_logits, dev_labels, K)
                                                            : grid_ece_serial(dev_logits, dev_labels, K);
  Temperature t;
  t.grid_index = select_temperature(grid_ece);
  t.value = temperature_grid()[t.grid_index];
  t.dev_ece = grid_ece[t.grid_index];
  t.dev_ece_at_one = grid_ece[kUnitTemperatureIndex];
  t.grid_points = grid_ece.size();
  return t;
}

Temperature fit_temperature(const Tensor2D& dev_logits, std::span<const int> dev_labels, std::size_t K) {
  return fit_temperature(dev_logits, dev_labels, K, kernels::backend());
}

}  // namespace cme
