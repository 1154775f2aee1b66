// SPDX-License-Identifier: Apache-2.0
#include "cme/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <tuple>

#include "cme/attribution.hpp"
#include "cme/errors.hpp"
#include "cme/metrics.hpp"

namespace cme {

const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::MLE: return "mle";
    case LossMode::LS: return "ls";
    case LossMode::CME: return "cme";
    case LossMode::CME_LS: return "cme-ls";
  }
  return "?";
}

LossMode parse_loss_mode(std::string_view s) {
  std::string l;
  for (char c : s) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (l == "mle") return LossMode::MLE;
  if (l == "ls") return LossMode::LS;
  if (l == "cme") return LossMode::CME;
  if (l == "cme-ls" || l == "cme+ls" || l == "cme_ls") return LossMode::CME_LS;
  throw ConfigError("unknown loss mode '" + std::string(s) + "' (expected mle, ls, cme, cme-ls)");
}

bool uses_calibration_term(LossMode m) { return m == LossMode::CME || m == LossMode::CME_LS; }
bool uses_label_smoothing(LossMode m) { return m == LossMode::LS || m == LossMode::CME_LS; }

void TrainingConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(clip > 0.0)) throw ConfigError("gradient clip must be positive");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(sigma >= 0.0 && sigma < 1.0)) throw ConfigError("sigma must lie in [0, 1)");
  if (bins == 0) throw ConfigError("bins must be positive");
  if (second_order) throw ConfigError("--second-order is reserved and not implemented");
}

ObjectiveOptions TrainingConfig::objective() const {
  ObjectiveOptions o;
  o.lambda = uses_calibration_term(mode) ? lambda : 0.0;
  o.sigma = uses_label_smoothing(mode) ? sigma : 0.0;
  o.score = confidence_only ? ScoreMode::ConfidenceOnly : ScoreMode::AttributionTimesConfidence;
  o.unscaled_attention = unscaled_attention;
  o.scale_by_sqrt_len = sqrt_len_scale;
  o.normalize_pairs = normalize_pairs;
  o.use_logit_gradient = use_logit_gradient;
  o.attr_layer = attr_layer;
  return o;
}

StepStats compute_gradients(ModelParams& params, const Batch& batch, const TrainingConfig& cfg) {
  const ObjectiveOptions obj = cfg.objective();
  ForwardOutput out = forward(params, batch);
  GradTape& tape = *out.tape;
  Var classify = classify_loss_on_tape(out, batch.labels, obj.sigma);

  StepStats st;
  st.classify = classify.value().item();
  if (!uses_calibration_term(cfg.mode)) {
    tape.backward(classify);
    accumulate_param_grads(out, params);
    st.total = st.classify;
    return st;
  }

  const std::size_t layer = attribution_layer(params.config(), obj.attr_layer);
  if (!cfg.fused_backward) {
    // Classification gradients first; the tape is retained for the
    // attribution pass and the calibration backward.
    tape.backward(classify, /*retain=*/true);
    accumulate_param_grads(out, params);
  }
  Tensor2D grads;
  if (obj.score == ScoreMode::AttributionTimesConfidence && !obj.unscaled_attention) {
    grads = attention_gradients(out, layer, obj.use_logit_gradient);
  }
  std::vector<ExampleScore> scores;
  std::vector<Pair> pairs;
  Var calib = calib_loss_on_tape(out, batch, grads, layer, obj, scores, pairs);
  st.calib = calib.value().item();
  st.pairs = pairs.size();
  st.total = total_loss(st.classify, st.calib, obj.lambda);

  if (cfg.fused_backward) {
    Var total = add(classify, scale(calib, obj.lambda));
    tape.backward(total);
    accumulate_param_grads(out, params);
  } else if (tape.requires_grad(calib.id())) {
    tape.backward(scale(calib, obj.lambda));
    accumulate_param_grads(out, params);
  }
  return st;
}

double optimizer_step(ModelParams& params, double learning_rate, double clip) {
  double ss = 0.0;
  for (const auto& p : params.all()) {
    for (double g : p.grad.data()) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (!std::isfinite(norm)) throw NumericalError("optimizer_step: non-finite gradient norm");
  const double factor = norm > clip ? clip / norm : 1.0;
  for (auto& p : params.all()) {
    auto v = p.value.data();
    auto g = p.grad.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * (g[i] * factor);
  }
  params.zero_grad();
  return norm;
}

StepStats train_step(ModelParams& params, const Batch& batch, const TrainingConfig& cfg) {
  StepStats st = compute_gradients(params, batch, cfg);
  st.grad_norm = optimizer_step(params, cfg.learning_rate, cfg.clip);
  return st;
}

namespace {

std::pair<double, double> dev_metrics(const ModelParams& params, std::span<const EncodedExample> dev,
                                      std::size_t K) {
  if (dev.empty()) return {0.0, 0.0};
  const Tensor2D logits = predict_logits(params, dev);
  std::vector<int> labels;
  for (const auto& e : dev) labels.push_back(e.label);
  const auto recs = records_from_logits({}, labels, logits);
  return {accuracy(recs), ece(recs, K)};
}

}  // namespace

TrainReport train(ModelParams& params, const TrainData& data, const TrainingConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw DataError("train: empty training split");
  TrainReport report;
  params.zero_grad();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(data.train, cfg.batch_size, cfg.seed, epoch, cfg.sort_by_length);
    EpochReport er;
    er.epoch = epoch + 1;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      StepStats st = compute_gradients(params, batches[b], cfg);
      if (!std::isfinite(st.classify) || !std::isfinite(st.calib) || !std::isfinite(st.total)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch + 1 << ", batch " << b << " (classify=" << st.classify
           << ", calib=" << st.calib << ", total=" << st.total << ")";
        throw NumericalError(os.str());
      }
      try {
        optimizer_step(params, cfg.learning_rate, cfg.clip);
      } catch (const NumericalError& e) {
        std::ostringstream os;
        os << e.what() << " at epoch " << epoch + 1 << ", batch " << b << " (classify=" << st.classify
           << ", calib=" << st.calib << ")";
        throw NumericalError(os.str());
      }
      er.classify_loss += st.classify;
      er.calib_loss += st.calib;
      er.total_loss += st.total;
      er.pairs += st.pairs;
    }
    const double nb = static_cast<double>(batches.size());
    er.classify_loss /= nb;
    er.calib_loss /= nb;
    er.total_loss /= nb;
    std::tie(er.dev_accuracy, er.dev_ece) = dev_metrics(params, data.dev, cfg.bins);
    report.epochs.push_back(er);
    if (on_epoch) on_epoch(er, params);
  }
  return report;
}

}  // namespace cme
