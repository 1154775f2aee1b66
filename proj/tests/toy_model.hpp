// SPDX-License-Identifier: Apache-2.0
#pragma once
// Small models and batches shared by the model, attribution and objective tests.
#include <functional>
#include <string>
#include <vector>

#include "cme/data.hpp"
#include "cme/attribution.hpp"
#include "cme/model.hpp"
#include "cme/objective.hpp"
#include "cme/trainer.hpp"
#include "cme/rng.hpp"
#include "oracles.hpp"

namespace toy {

inline cme::ModelConfig config(std::size_t heads = 2, std::size_t layers = 2) {
  cme::ModelConfig c;
  c.vocab_size = 50;
  c.max_len = 16;
  c.d_model = 8;
  c.heads = heads;
  c.d_ff = 16;
  c.layers = layers;
  c.num_classes = 2;
  c.init_range = 0.5;
  return c;
}

/// Random token sequences of varied length over ids [4, vocab).
inline cme::Batch batch(std::size_t n, std::uint64_t seed, std::size_t vocab = 50, std::size_t max_tokens = 9) {
  cme::Rng rng(seed);
  std::vector<cme::EncodedExample> ex;
  for (std::size_t i = 0; i < n; ++i) {
    cme::EncodedExample e;
    e.source = i;
    e.label = static_cast<int>(rng.below(2));
    e.tokens.ids.push_back(cme::Vocab::kCls);
    e.tokens.special.push_back(1);
    const std::size_t len = 2 + rng.below(max_tokens - 1);
    for (std::size_t j = 0; j < len; ++j) {
      e.tokens.ids.push_back(cme::Vocab::kNumReserved + rng.below(vocab - cme::Vocab::kNumReserved));
      e.tokens.special.push_back(0);
    }
    ex.push_back(std::move(e));
  }
  return cme::collate(ex);
}

struct FdFailure {
  std::string param;
  std::size_t index;
  double analytic;
  double numeric;
};

/// Compares `analytic` (aligned with params.all()) against central
/// differences of `loss` over every scalar parameter.
inline std::vector<FdFailure> check_gradients(cme::ModelParams& params,
                                              const std::vector<cme::Tensor2D>& analytic,
                                              const std::function<double(const cme::ModelParams&)>& loss,
                                              double h = 1e-5, std::size_t* checked = nullptr) {
  std::vector<FdFailure> failures;
  std::size_t count = 0;
  for (std::size_t k = 0; k < params.all().size(); ++k) {
    auto& p = params.at(k);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double x0 = p.value.data()[i];
      p.value.data()[i] = x0 + h;
      const double fp = loss(params);
      p.value.data()[i] = x0 - h;
      const double fm = loss(params);
      p.value.data()[i] = x0;
      const double fd = (fp - fm) / (2 * h);
      const double a = analytic[k].data()[i];
      ++count;
      if (!oracle::grad_close(a, fd)) failures.push_back({p.name, i, a, fd});
    }
  }
  if (checked) *checked = count;
  return failures;
}

inline std::vector<cme::Tensor2D> grads_of(const cme::ModelParams& params) {
  std::vector<cme::Tensor2D> g;
  for (const auto& p : params.all()) g.push_back(p.grad);
  return g;
}

/// L_classify + lambda * L_calib at `p`, with the attention-gradient factor
/// held at `grads` (computed once at the unperturbed parameters).
inline double cme_loss_fixed_grads(const cme::ModelParams& p, const cme::Batch& b,
                                   const cme::TrainingConfig& cfg, const cme::Tensor2D& grads) {
  const auto out = cme::forward(p, b);
  const auto o = cfg.objective();
  const std::size_t layer = cme::attribution_layer(p.config(), o.attr_layer);
  const double cls = cme::classify_loss_on_tape(out, b.labels, o.sigma).value().item();
  std::vector<cme::ExampleScore> scores;
  std::vector<cme::Pair> pairs;
  const double cal = cme::calib_loss_on_tape(out, b, grads, layer, o, scores, pairs).value().item();
  return cls + o.lambda * cal;
}

/// Attention-gradient factor at the current parameters.
inline cme::Tensor2D frozen_grads(const cme::ModelParams& p, const cme::Batch& b, const cme::TrainingConfig& cfg) {
  const auto out = cme::forward(p, b);
  const auto o = cfg.objective();
  return cme::attention_gradients(out, cme::attribution_layer(p.config(), o.attr_layer), o.use_logit_gradient);
}

}  // namespace toy
