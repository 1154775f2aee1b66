// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cme/tensor.hpp"

namespace cme {

struct PredictionRecord {
  std::string id;
  int label = 0;
  int predicted = 0;        ///< argmax, ties to the lowest class index
  double confidence = 0.0;  ///< max probability
  std::vector<double> probabilities;

  [[nodiscard]] bool correct() const noexcept { return predicted == label; }
};

[[nodiscard]] PredictionRecord make_record(std::string id, int label, std::span<const double> probabilities);

/// Softmax(logits / temperature) per row into records.
[[nodiscard]] std::vector<PredictionRecord> records_from_logits(std::span<const std::string> ids,
                                                                std::span<const int> labels,
                                                                const Tensor2D& logits,
                                                                double temperature = 1.0);

struct CalibrationBin {
  std::size_t index = 0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
  double error = 0.0;  ///< |sum(correct - confidence)| / count; 0 for empty bins
};

enum class Binning {
  EqualWidth,  ///< [k/K, (k+1)/K), last bin closed at 1
  EqualMass,   ///< K groups of (nearly) equal size by sorted confidence
};

/// Equal-width bin of a confidence: the k with k/K <= c < (k+1)/K, or K-1 for c = 1.
[[nodiscard]] std::size_t bin_index(double confidence, std::size_t K);

[[nodiscard]] std::vector<CalibrationBin> bin_predictions(std::span<const PredictionRecord> records,
                                                          std::size_t K = 10,
                                                          Binning binning = Binning::EqualWidth);
[[nodiscard]] double ece(std::span<const PredictionRecord> records, std::size_t K = 10,
                         Binning binning = Binning::EqualWidth);
[[nodiscard]] double ece(std::span<const CalibrationBin> bins);
[[nodiscard]] double accuracy(std::span<const PredictionRecord> records);

struct ReliabilityPoint {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;  ///< bin midpoint for empty bins
  double accuracy = 0.0;
  std::size_t count = 0;
};

[[nodiscard]] std::vector<ReliabilityPoint> reliability_data(std::span<const PredictionRecord> records,
                                                             std::size_t K = 10,
                                                             Binning binning = Binning::EqualWidth);

/// CSV with header bin,lower,upper,mean_confidence,accuracy,count.
[[nodiscard]] std::string reliability_csv(std::span<const ReliabilityPoint> points);
/// Standalone SVG bar chart: accuracy bars per bin against the diagonal.
[[nodiscard]] std::string reliability_svg(std::span<const ReliabilityPoint> points, const std::string& title);

}  // namespace cme
