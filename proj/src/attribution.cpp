// SPDX-License-Identifier: Apache-2.0
#include "cme/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "cme/errors.hpp"

namespace cme {
namespace {

std::vector<std::size_t> real_positions(std::span<const unsigned char> special) {
  std::vector<std::size_t> pos;
  for (std::size_t j = 0; j < special.size(); ++j) {
    if (!special[j]) pos.push_back(j);
  }
  return pos;
}

std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> y(x.size());
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += (y[k] = std::exp(x[k] - mx));
  for (double& v : y) v /= s;
  return y;
}

}  // namespace

Tensor2D attention_gradients(const ForwardOutput& out, std::span<const std::size_t> predicted,
                             std::size_t layer, bool use_logit) {
  if (predicted.size() != out.batch) throw ShapeError("attention_gradients: one class per example required");
  if (layer >= out.attention.size()) throw ConfigError("attention_gradients: layer out of range");
  GradTape& tape = *out.tape;
  // Examples share no activations, so one pass seeded at sum_i yhat_i
  // yields each d yhat_i / d alpha_i.
  std::vector<Var> picks;
  for (std::size_t i = 0; i < out.batch; ++i) {
    const Var src = use_logit ? out.logit_vars[i] : out.prob_vars[i];
    picks.push_back(element(src, 0, predicted[i]));
  }
  Var seed = picks.front();
  for (std::size_t i = 1; i < picks.size(); ++i) seed = add(seed, picks[i]);
  tape.backward(seed, /*retain=*/true);

  Tensor2D g(out.batch, out.seq_len);
  const double inv_heads = 1.0 / static_cast<double>(out.heads);
  for (std::size_t i = 0; i < out.batch; ++i) {
    for (std::size_t h = 0; h < out.heads; ++h) {
      const Tensor2D gh = tape.grad(out.attention[layer][i][h]);
      for (std::size_t j = 0; j < out.seq_len; ++j) g(i, j) += gh(0, j);
    }
    for (std::size_t j = 0; j < out.seq_len; ++j) {
      // masked weights are constant zeros with no path to the output
      g(i, j) = out.key_mask[i * out.seq_len + j] ? g(i, j) * inv_heads : 0.0;
    }
  }
  return g;
}

Tensor2D attention_gradients(const ForwardOutput& out, std::size_t layer, bool use_logit) {
  std::vector<std::size_t> pred(out.batch);
  for (std::size_t i = 0; i < out.batch; ++i) pred[i] = out.predicted(i);
  return attention_gradients(out, pred, layer, use_logit);
}

AttributionVector scaled_attention(std::span<const double> raw, std::span<const double> grads,
                                   std::span<const unsigned char> special, std::string id) {
  if (raw.size() != grads.size() || raw.size() != special.size()) {
    throw ShapeError("scaled_attention: scores, gradients and mask must have equal length");
  }
  AttributionVector a;
  a.id = std::move(id);
  a.positions = real_positions(special);
  if (a.positions.empty()) throw DegenerateInputError("scaled_attention: every position is a special token");
  std::vector<double> s;
  s.reserve(a.positions.size());
  for (std::size_t j : a.positions) s.push_back(std::fabs(raw[j] * grads[j]));
  a.scores = softmax(s);
  return a;
}

AttributionVector unscaled_attention(std::span<const double> raw, std::span<const unsigned char> special,
                                     std::string id) {
  if (raw.size() != special.size()) throw ShapeError("unscaled_attention: scores and mask differ in length");
  AttributionVector a;
  a.id = std::move(id);
  a.positions = real_positions(special);
  if (a.positions.empty()) throw DegenerateInputError("unscaled_attention: every position is a special token");
  std::vector<double> s;
  for (std::size_t j : a.positions) s.push_back(raw[j]);
  a.scores = softmax(s);
  return a;
}

double l2_norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

double attribution_magnitude(const AttributionVector& a, bool scale_by_sqrt_len) {
  const double n = l2_norm(a.scores);
  return scale_by_sqrt_len ? n / std::sqrt(static_cast<double>(a.length())) : n;
}

std::vector<AttributionVector> batch_attributions(const ForwardOutput& out, const Batch& batch,
                                                  const AttributionOptions& opts,
                                                  std::span<const std::string> ids) {
  const std::size_t layer = opts.layer ? *opts.layer : out.attention.size() - 2;
  const Tensor2D raw = penultimate_start_attention(out, batch, layer);
  Tensor2D grads;
  if (!opts.unscaled_attention) grads = attention_gradients(out, layer, opts.use_logit);
  std::vector<AttributionVector> res;
  for (std::size_t i = 0; i < batch.size; ++i) {
    std::string id = i < ids.size() ? ids[i] : std::to_string(batch.sources[i]);
    res.push_back(opts.unscaled_attention
                      ? unscaled_attention(raw.row(i), batch.specials(i), std::move(id))
                      : scaled_attention(raw.row(i), grads.row(i), batch.specials(i), std::move(id)));
  }
  return res;
}

Var attribution_on_tape(const ForwardOutput& out, const Batch& batch, std::size_t i, std::size_t layer,
                        const Tensor2D& grads, bool unscaled) {
  const auto positions = real_positions(batch.specials(i));
  if (positions.empty()) throw DegenerateInputError("attribution: example has no real tokens");
  const auto& heads = out.attention.at(layer).at(i);
  Var alpha = slice_rows(heads.front(), 0, 1);
  for (std::size_t h = 1; h < heads.size(); ++h) alpha = add(alpha, slice_rows(heads[h], 0, 1));
  if (heads.size() > 1) alpha = scale(alpha, 1.0 / static_cast<double>(heads.size()));
  alpha = gather_cols(alpha, positions);
  if (unscaled) return softmax_rows(alpha);
  Tensor2D g(1, positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) g(0, k) = grads(i, positions[k]);
  return softmax_rows(abs(mul_const(alpha, g)));
}

}  // namespace cme
