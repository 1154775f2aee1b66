// SPDX-License-Identifier: Apache-2.0
#pragma once

// Temperature scaling fitted by exhaustive grid search on dev-set ECE.

#include <cstddef>
#include <span>
#include <vector>

#include "cme/kernels.hpp"
#include "cme/tensor.hpp"

namespace cme {

/// softmax(logits / T). T <= 0 throws ConfigError.
[[nodiscard]] std::vector<double> apply_temperature(std::span<const double> logits, double temperature);

/// {0.01, 0.02, ..., 10.00}; entry i is (i + 1) / 100.
[[nodiscard]] std::vector<double> temperature_grid();
inline constexpr std::size_t kTemperatureGridSize = 1000;
inline constexpr std::size_t kUnitTemperatureIndex = 99;

struct Temperature {
  double value = 1.0;
  std::size_t grid_index = kUnitTemperatureIndex;
  double dev_ece = 0.0;          ///< at the fitted temperature
  double dev_ece_at_one = 0.0;   ///< at T = 1
  std::size_t grid_points = kTemperatureGridSize;
};

/// ECE of softmax(logits / T) against labels.
[[nodiscard]] double ece_at_temperature(const Tensor2D& logits, std::span<const int> labels,
                                        double temperature, std::size_t K = 10);

/// ECE for every grid temperature, in grid order.
[[nodiscard]] std::vector<double> grid_ece_serial(const Tensor2D& logits, std::span<const int> labels,
                                                  std::size_t K = 10);
[[nodiscard]] std::vector<double> grid_ece_openmp(const Tensor2D& logits, std::span<const int> labels,
                                                  std::size_t K = 10);

/// Grid temperature minimizing dev ECE; ties go to the temperature nearest
/// 1.0, then to the smaller one. Empty dev set throws MetricError.
[[nodiscard]] Temperature fit_temperature(const Tensor2D& dev_logits, std::span<const int> dev_labels,
                                          std::size_t K = 10);
/// Same, with an explicit kernel backend.
[[nodiscard]] Temperature fit_temperature(const Tensor2D& dev_logits, std::span<const int> dev_labels,
                                          std::size_t K, kernels::Backend backend);

/// Selection rule applied to precomputed grid ECEs.
[[nodiscard]] std::size_t select_temperature(std::span<const double> grid_ece);

}  // namespace cme
