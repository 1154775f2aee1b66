// SPDX-License-Identifier: Apache-2.0
#include "cme/objective.hpp"

#include <cmath>
#include <string>

#include "cme/errors.hpp"

namespace cme {
namespace {

void check_sigma(double sigma) {
  if (!(sigma >= 0.0 && sigma < 1.0)) {
    throw ConfigError("label smoothing sigma must lie in [0, 1), got " + std::to_string(sigma));
  }
}

}  // namespace

Tensor2D smoothed_target(int label, std::size_t num_classes, double sigma) {
  check_sigma(sigma);
  if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
    throw DataError("label " + std::to_string(label) + " outside " + std::to_string(num_classes) + " classes");
  }
  Tensor2D t(1, num_classes, sigma / static_cast<double>(num_classes));
  t(0, static_cast<std::size_t>(label)) += 1.0 - sigma;
  return t;
}

double classify_loss(const Tensor2D& probabilities, std::span<const int> labels, double sigma) {
  check_sigma(sigma);
  if (probabilities.rows() != labels.size()) throw ShapeError("classify_loss: one label per row required");
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Tensor2D target = smoothed_target(labels[i], probabilities.cols(), sigma);
    for (std::size_t c = 0; c < probabilities.cols(); ++c) {
      if (target(0, c) > 0.0) total -= target(0, c) * std::log(probabilities(i, c));
    }
  }
  return total / static_cast<double>(labels.size());
}

std::vector<Pair> pair_set(std::span<const ExampleScore> scores) {
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].error != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (scores[j].error == 0) pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

double calib_loss(std::span<const ExampleScore> scores, std::span<const Pair> pairs, bool normalize) {
  double total = 0.0;
  for (const auto& [i, j] : pairs) {
    const double d = scores[i].t - scores[j].t;
    if (d > 0.0) total += d * d;
  }
  if (normalize && !pairs.empty()) total /= static_cast<double>(pairs.size());
  return total;
}

double total_loss(double classify, double calib, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative, got " + std::to_string(lambda));
  return classify + lambda * calib;
}

Var classify_loss_on_tape(const ForwardOutput& out, std::span<const int> labels, double sigma) {
  if (labels.size() != out.batch || out.batch == 0) throw ShapeError("classify_loss: one label per example required");
  const std::size_t C = out.logits.cols();
  Var total = softmax_cross_entropy(out.logit_vars[0], smoothed_target(labels[0], C, sigma));
  for (std::size_t i = 1; i < out.batch; ++i) {
    total = add(total, softmax_cross_entropy(out.logit_vars[i], smoothed_target(labels[i], C, sigma)));
  }
  return scale(total, 1.0 / static_cast<double>(out.batch));
}

Var calib_loss_on_tape(const ForwardOutput& out, const Batch& batch, const Tensor2D& attention_grads,
                       std::size_t layer, const ObjectiveOptions& opts, std::vector<ExampleScore>& scores,
                       std::vector<Pair>& pairs) {
  GradTape& tape = *out.tape;
  std::vector<Var> t_vars;
  scores.clear();
  for (std::size_t i = 0; i < out.batch; ++i) {
    const std::size_t pred = out.predicted(i);
    Var conf = element(out.prob_vars[i], 0, pred);
    Var t = conf;
    if (opts.score == ScoreMode::AttributionTimesConfidence) {
      Var a = attribution_on_tape(out, batch, i, layer, attention_grads, opts.unscaled_attention);
      Var mag = l2_norm(a);
      if (opts.scale_by_sqrt_len) mag = scale(mag, 1.0 / std::sqrt(static_cast<double>(a.cols())));
      t = mul(mag, conf);
    }
    t_vars.push_back(t);
    ExampleScore s;
    s.index = i;
    s.t = t.value().item();
    s.error = static_cast<int>(pred) != batch.labels[i] ? 1 : 0;
    s.confidence = conf.value().item();
    scores.push_back(s);
  }
  pairs = pair_set(scores);
  Var total = tape.constant(Tensor2D::scalar(0.0));
  for (const auto& [i, j] : pairs) {
    // Inactive hinges contribute exactly zero value and gradient.
    if (!(scores[i].t > scores[j].t)) continue;
    total = add(total, square(relu(sub(t_vars[i], t_vars[j]))));
  }
  if (opts.normalize_pairs && !pairs.empty()) total = scale(total, 1.0 / static_cast<double>(pairs.size()));
  return total;
}

}  // namespace cme
