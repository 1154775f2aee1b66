// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cme/tensor.hpp"

namespace cme {

/// Cached predictions: one row of logits per example.
struct LogitTable {
  std::vector<std::string> ids;
  std::vector<int> labels;
  Tensor2D logits;  ///< n x C
};

/// CSV with header `id,label,logit_0,...,logit_{C-1}`. Values are written
/// with 17 significant digits so a reload reproduces them exactly.
void write_logits_csv(const std::filesystem::path& path, const LogitTable& table);
[[nodiscard]] std::string logits_csv_string(const LogitTable& table);
[[nodiscard]] LogitTable read_logits_csv(const std::filesystem::path& path);

}  // namespace cme
