// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>

#include "cme/errors.hpp"
#include "cme/model.hpp"
#include "cme/objective.hpp"
#include "toy_model.hpp"

using namespace cme;

TEST_SUITE("model") {

TEST_CASE("init is deterministic with zero biases and unit layer-norm scales") {
  ModelConfig c;
  c.vocab_size = 20;
  const ModelParams a = init_params(c, 1);
  const ModelParams b = init_params(c, 1);
  CHECK(a == b);
  CHECK_FALSE(a == init_params(c, 2));
  for (const auto& p : a.all()) {
    const bool bias = p.name.find("bias") != std::string::npos || p.name.find("offset") != std::string::npos;
    const bool ln_scale = p.name.find("scale") != std::string::npos;
    for (double v : p.value.data()) {
      if (bias) CHECK(v == 0.0);
      if (ln_scale) CHECK(v == 1.0);
      if (!bias && !ln_scale) CHECK(std::fabs(v) <= c.init_range);
    }
  }
  const Tensor2D& emb = a.at(ModelParams::kTokenEmbedding).value;
  CHECK(emb(0, 0) == 0.014576650267692212);
  CHECK(emb(0, 1) == -0.045165884829225393);
  CHECK(emb(0, 2) == 0.0082452719903198107);
  CHECK(emb(0, 3) == 0.030401612340132764);
}

TEST_CASE("invalid configs") {
  ModelConfig c = toy::config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS((void)attribution_layer(toy::config(2, 1), std::nullopt), ConfigError);
  CHECK(attribution_layer(toy::config(2, 2), std::nullopt) == 0);
  CHECK(attribution_layer(toy::config(2, 3), std::nullopt) == 1);
}

TEST_CASE("out-of-vocabulary index is a data error") {
  const ModelParams p = init_params(toy::config(), 1);
  Batch b = toy::batch(2, 1);
  b.token_ids[1] = 50;
  CHECK_THROWS_AS((void)forward(p, b), DataError);
}

TEST_CASE("CLS attends only to CLS when every other position is padding") {
  const ModelParams p = init_params(toy::config(), 3);
  std::vector<EncodedExample> ex(2);
  ex[0].tokens.ids = {Vocab::kCls};
  ex[0].tokens.special = {1};
  ex[1].tokens.ids = {Vocab::kCls, 7, 9, 11};
  ex[1].tokens.special = {1, 0, 0, 0};
  const Batch b = collate(ex);
  const auto out = forward(p, b);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      const Tensor2D& a = out.attention_weights(l, 0, h);
      CHECK(a(0, 0) == 1.0);
      for (std::size_t j = 1; j < b.seq_len; ++j) CHECK(a(0, j) == 0.0);
    }
  }
}

TEST_CASE("probability and attention rows sum to one") {
  const ModelParams p = init_params(toy::config(), 4);
  const Batch b = toy::batch(6, 8);
  const auto out = forward(p, b);
  for (std::size_t i = 0; i < b.size; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 2; ++c) s += out.probabilities(i, c);
    CHECK(std::fabs(s - 1.0) < 1e-9);
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t h = 0; h < 2; ++h) {
        const Tensor2D& a = out.attention_weights(l, i, h);
        for (std::size_t r = 0; r < b.lengths[i]; ++r) {
          double rs = 0;
          for (std::size_t j = 0; j < b.seq_len; ++j) {
            rs += a(r, j);
            if (j >= b.lengths[i]) CHECK(a(r, j) == 0.0);
          }
          CHECK(std::fabs(rs - 1.0) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("forward is deterministic") {
  const ModelParams p = init_params(toy::config(), 5);
  const Batch b = toy::batch(5, 9);
  CHECK(forward(p, b).logits == forward(p, b).logits);
}

TEST_CASE("swapping two tokens without position embeddings leaves logits unchanged") {
  ModelParams p = init_params(toy::config(), 6);
  p.at(ModelParams::kPositionEmbedding).value.fill(0.0);
  std::vector<EncodedExample> ex(1);
  ex[0].tokens.ids = {Vocab::kCls, 12, 31, 7, 44};
  ex[0].tokens.special = {1, 0, 0, 0, 0};
  const auto base = forward(p, collate(ex)).logits;
  std::swap(ex[0].tokens.ids[1], ex[0].tokens.ids[3]);
  const auto swapped = forward(p, collate(ex)).logits;
  for (std::size_t c = 0; c < 2; ++c) CHECK(std::fabs(base(0, c) - swapped(0, c)) < 1e-9);
}

TEST_CASE("start-token attention: single head and two-head mean") {
  const Batch b = toy::batch(4, 10);
  {
    const ModelParams p = init_params(toy::config(1, 2), 7);
    const auto out = forward(p, b);
    const Tensor2D a = penultimate_start_attention(out, b);
    for (std::size_t i = 0; i < b.size; ++i) {
      const Tensor2D& raw = out.attention_weights(0, i, 0);
      for (std::size_t j = 0; j < b.seq_len; ++j) {
        CHECK(a(i, j) == (b.specials(i)[j] ? 0.0 : raw(0, j)));
      }
    }
  }
  {
    const ModelParams p = init_params(toy::config(2, 2), 7);
    const auto out = forward(p, b);
    const Tensor2D a = penultimate_start_attention(out, b);
    for (std::size_t i = 0; i < b.size; ++i) {
      const Tensor2D& h0 = out.attention_weights(0, i, 0);
      const Tensor2D& h1 = out.attention_weights(0, i, 1);
      for (std::size_t j = 0; j < b.seq_len; ++j) {
        const double expect = b.specials(i)[j] ? 0.0 : (h0(0, j) + h1(0, j)) / 2.0;
        CHECK(std::fabs(a(i, j) - expect) < 1e-15);
      }
    }
  }
}

TEST_CASE("full-model classification gradient matches finite differences") {
  ModelParams params = init_params(toy::config(), 11);
  const Batch b = toy::batch(4, 12);
  auto loss = [&](const ModelParams& p) {
    const auto out = forward(p, b);
    return classify_loss_on_tape(out, b.labels, 0.0).value().item();
  };
  {
    const auto out = forward(params, b);
    Var l = classify_loss_on_tape(out, b.labels, 0.0);
    out.tape->backward(l);
    params.zero_grad();
    accumulate_param_grads(out, params);
  }
  std::size_t checked = 0;
  const auto failures = toy::check_gradients(params, toy::grads_of(params), loss, 1e-5, &checked);
  CHECK(checked > 1000);
  for (const auto& f : failures) {
    FAIL_CHECK(f.param << "[" << f.index << "] analytic " << f.analytic << " fd " << f.numeric);
  }
}

}  // TEST_SUITE
