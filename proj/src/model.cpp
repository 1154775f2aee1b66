// SPDX-License-Identifier: Apache-2.0
#include "cme/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cme/errors.hpp"
#include "cme/rng.hpp"

namespace cme {

void ModelConfig::validate() const {
  if (vocab_size <= Vocab::kNumReserved) throw ConfigError("model: vocab_size must exceed the reserved tokens");
  if (d_model == 0 || heads == 0 || d_ff == 0 || layers == 0) throw ConfigError("model: zero-sized dimension");
  if (d_model % heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (max_len < 3) throw ConfigError("model: max_len must be >= 3");
  if (!(init_range > 0.0)) throw ConfigError("model: init_range must be positive");
}

ModelParams::ModelParams(const ModelConfig& cfg) : config_(cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  auto add = [&](std::string name, std::size_t r, std::size_t c) {
    params_.push_back({std::move(name), Tensor2D(r, c), Tensor2D(r, c)});
  };
  add("embed.token", cfg.vocab_size, d);
  add("embed.position", cfg.max_len, d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.scale", 1, d);
    add(p + "ln1.offset", 1, d);
    add(p + "attn.query", d, d);
    add(p + "attn.key", d, d);
    add(p + "attn.value", d, d);
    add(p + "attn.output", d, d);
    add(p + "ln2.scale", 1, d);
    add(p + "ln2.offset", 1, d);
    add(p + "ff.in", d, cfg.d_ff);
    add(p + "ff.in_bias", 1, cfg.d_ff);
    add(p + "ff.out", cfg.d_ff, d);
    add(p + "ff.out_bias", 1, d);
  }
  add("final_ln.scale", 1, d);
  add("final_ln.offset", 1, d);
  add("head.weight", d, cfg.num_classes);
  add("head.bias", 1, cfg.num_classes);
}

std::size_t ModelParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

const Parameter& ModelParams::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named '" + name + "'");
}

Parameter& ModelParams::find(const std::string& name) {
  return const_cast<Parameter&>(std::as_const(*this).find(name));
}

void ModelParams::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

bool ModelParams::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const Parameter& p) { return p.value.all_finite(); });
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.config_ == b.config_) || a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) return false;
  }
  return true;
}

namespace {

bool is_scale(const std::string& name) { return name.ends_with(".scale"); }
bool is_zero_init(const std::string& name) {
  return name.ends_with("bias") || name.ends_with(".offset");
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams params(cfg);
  Rng rng(derive_seed(seed, "init"));
  for (auto& p : params.all()) {
    if (is_scale(p.name)) {
      p.value.fill(1.0);
    } else if (is_zero_init(p.name)) {
      p.value.fill(0.0);
    } else {
      for (double& v : p.value.data()) v = rng.uniform(-cfg.init_range, cfg.init_range);
    }
  }
  return params;
}

std::size_t ForwardOutput::predicted(std::size_t example) const {
  const auto row = probabilities.row(example);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

ForwardOutput forward(const ModelParams& params, const Batch& batch, const ForwardOptions& opts) {
  const ModelConfig& cfg = params.config();
  if (batch.seq_len > cfg.max_len) {
    throw DataError("forward: sequence length " + std::to_string(batch.seq_len) +
                    " exceeds model max_len " + std::to_string(cfg.max_len));
  }
  for (std::size_t id : batch.token_ids) {
    if (id >= cfg.vocab_size) {
      throw DataError("forward: token index " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(cfg.vocab_size));
    }
  }

  ForwardOutput out;
  out.tape = std::make_unique<GradTape>();
  GradTape& tape = *out.tape;
  out.batch = batch.size;
  out.seq_len = batch.seq_len;
  out.heads = cfg.heads;
  for (const auto& p : params.all()) out.param_vars.push_back(tape.parameter(p.value));
  auto P = [&](std::size_t i) { return out.param_vars[i]; };

  const std::size_t L = batch.seq_len;
  const std::size_t dh = cfg.d_model / cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<std::size_t> positions(L);
  std::iota(positions.begin(), positions.end(), std::size_t{0});

  out.attention.assign(cfg.layers, std::vector<std::vector<Var>>(batch.size));
  out.logits = Tensor2D(batch.size, cfg.num_classes);
  out.probabilities = Tensor2D(batch.size, cfg.num_classes);
  out.key_mask = batch.attention_mask;

  for (std::size_t i = 0; i < batch.size; ++i) {
    const auto tok = batch.tokens(i);
    const auto msk = batch.mask(i);
    const std::vector<unsigned char> key_mask(msk.begin(), msk.end());

    Var x = add(gather_rows(P(ModelParams::kTokenEmbedding), {tok.begin(), tok.end()}),
                gather_rows(P(ModelParams::kPositionEmbedding), positions));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      auto W = [&](ModelParams::LayerSlot s) { return P(params.layer_index(l, s)); };
      Var h = layer_norm(x, W(ModelParams::kLn1Scale), W(ModelParams::kLn1Offset));
      Var q = matmul(h, W(ModelParams::kQuery));
      Var k = matmul(h, W(ModelParams::kKey));
      Var v = matmul(h, W(ModelParams::kValue));
      std::vector<Var> head_out;
      for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
        Var qh = slice_cols(q, hd * dh, dh);
        Var kh = slice_cols(k, hd * dh, dh);
        Var vh = slice_cols(v, hd * dh, dh);
        Var a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), key_mask);
        if (opts.perturb && opts.perturb->layer == l && opts.perturb->example == i &&
            opts.perturb->head == hd) {
          Tensor2D bump(L, L);
          bump(opts.perturb->row, opts.perturb->col) = opts.perturb->delta;
          a = add(a, tape.constant(std::move(bump)));
        }
        out.attention[l][i].push_back(a);
        head_out.push_back(matmul(a, vh));
      }
      x = add(x, matmul(concat_cols(head_out), W(ModelParams::kOutput)));
      Var h2 = layer_norm(x, W(ModelParams::kLn2Scale), W(ModelParams::kLn2Offset));
      Var f = tanh(add_row_bias(matmul(h2, W(ModelParams::kFf1)), W(ModelParams::kFf1Bias)));
      f = add_row_bias(matmul(f, W(ModelParams::kFf2)), W(ModelParams::kFf2Bias));
      x = add(x, f);
    }
    Var hf = layer_norm(x, P(params.final_ln_scale()), P(params.final_ln_offset()));
    Var cls = slice_rows(hf, 0, 1);
    Var logits = add_row_bias(matmul(cls, P(params.head_weight())), P(params.head_bias()));
    Var probs = softmax_rows(logits);
    std::copy_n(logits.value().data().begin(), cfg.num_classes, out.logits.row(i).begin());
    std::copy_n(probs.value().data().begin(), cfg.num_classes, out.probabilities.row(i).begin());
    out.logit_vars.push_back(logits);
    out.prob_vars.push_back(probs);
  }
  return out;
}

void accumulate_param_grads(const ForwardOutput& out, ModelParams& params) {
  for (std::size_t k = 0; k < out.param_vars.size(); ++k) {
    const Tensor2D g = out.tape->grad(out.param_vars[k]);
    auto dst = params.at(k).grad.data();
    const auto src = g.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

std::size_t attribution_layer(const ModelConfig& cfg, std::optional<std::size_t> override_layer) {
  if (override_layer) {
    if (*override_layer >= cfg.layers) {
      throw ConfigError("attribution layer " + std::to_string(*override_layer) + " outside model with " +
                        std::to_string(cfg.layers) + " layers");
    }
    return *override_layer;
  }
  if (cfg.layers < 2) throw ConfigError("penultimate-layer attention needs a model with at least 2 layers");
  return cfg.layers - 2;
}

Tensor2D penultimate_start_attention(const ForwardOutput& out, const Batch& batch,
                                     std::optional<std::size_t> layer) {
  const std::size_t layers = out.attention.size();
  std::size_t l = 0;
  if (layer) {
    if (*layer >= layers) throw ConfigError("attention layer out of range");
    l = *layer;
  } else {
    if (layers < 2) throw ConfigError("penultimate-layer attention needs a model with at least 2 layers");
    l = layers - 2;
  }
  Tensor2D raw(out.batch, out.seq_len);
  const double inv_heads = 1.0 / static_cast<double>(out.heads);
  for (std::size_t i = 0; i < out.batch; ++i) {
    const auto spec = batch.specials(i);
    for (std::size_t h = 0; h < out.heads; ++h) {
      const Tensor2D& a = out.attention_weights(l, i, h);
      for (std::size_t j = 0; j < out.seq_len; ++j) raw(i, j) += a(0, j);
    }
    for (std::size_t j = 0; j < out.seq_len; ++j) raw(i, j) = spec[j] ? 0.0 : raw(i, j) * inv_heads;
  }
  return raw;
}

Tensor2D predict_logits(const ModelParams& params, std::span<const EncodedExample> examples,
                        std::size_t batch_size) {
  Tensor2D logits(examples.size(), params.config().num_classes);
  std::size_t row = 0;
  for (const Batch& b : sequential_batches(examples, batch_size)) {
    const ForwardOutput out = forward(params, b);
    for (std::size_t i = 0; i < b.size; ++i, ++row) {
      std::copy_n(out.logits.row(i).begin(), logits.cols(), logits.row(row).begin());
    }
  }
  return logits;
}

}  // namespace cme
