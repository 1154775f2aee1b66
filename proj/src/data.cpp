// SPDX-License-Identifier: Apache-2.0
#include "cme/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "cme/errors.hpp"
#include "cme/rng.hpp"

namespace cme {

// ---- vocab -------------------------------------------------------------------

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(t);
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  if (tokens.size() < kNumReserved) throw DataError("vocab: fewer entries than reserved tokens");
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    if (tokens[i] != v.tokens_[i]) throw DataError("vocab: reserved entry " + std::to_string(i) + " is '" + tokens[i] + "'");
  }
  for (std::size_t i = kNumReserved; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw DataError("vocab: duplicate token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

std::size_t Vocab::index_of(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.contains(std::string(token)); }

std::size_t Vocab::add(const std::string& token) {
  const auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab build_vocab(std::span<const Example> corpus, std::size_t min_freq) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  auto count = [&](std::string_view text) {
    for (auto& tok : split_tokens(text)) {
      auto [it, inserted] = counts.emplace(tok, 0);
      if (inserted) order.push_back(tok);
      ++it->second;
    }
  };
  for (const Example& ex : corpus) {
    count(ex.text);
    if (ex.text2) count(*ex.text2);
  }
  Vocab v;
  for (const auto& tok : order) {
    if (counts[tok] >= min_freq) v.add(tok);
  }
  return v;
}

// ---- tokenization ------------------------------------------------------------

TokenizedText tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len,
                       std::optional<std::string_view> text2) {
  if (max_len < 3) throw ConfigError("tokenize: max_len must be >= 3");
  TokenizedText out;
  auto push = [&](std::size_t id, bool special) {
    if (out.ids.size() < max_len) {
      out.ids.push_back(id);
      out.special.push_back(special ? 1 : 0);
    }
  };
  push(Vocab::kCls, true);
  for (const auto& tok : split_tokens(text)) push(vocab.index_of(tok), false);
  if (text2) {
    push(Vocab::kSep, true);
    for (const auto& tok : split_tokens(*text2)) push(vocab.index_of(tok), false);
  }
  return out;
}

TokenizedText tokenize(const Example& ex, const Vocab& vocab, std::size_t max_len) {
  return tokenize(ex.text, vocab, max_len,
                  ex.text2 ? std::optional<std::string_view>(*ex.text2) : std::nullopt);
}

std::vector<std::string> detokenize(const TokenizedText& t, const Vocab& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    if (!t.special[i]) out.push_back(vocab.token_at(t.ids[i]));
  }
  return out;
}

std::vector<EncodedExample> encode(std::span<const Example> examples, const Vocab& vocab,
                                   std::size_t max_len) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out.push_back({i, tokenize(examples[i], vocab, max_len), examples[i].label});
  }
  return out;
}

// ---- batching ----------------------------------------------------------------

Batch collate(std::span<const EncodedExample> examples) {
  Batch b;
  b.size = examples.size();
  for (const auto& ex : examples) b.seq_len = std::max(b.seq_len, ex.tokens.ids.size());
  b.token_ids.assign(b.size * b.seq_len, Vocab::kPad);
  b.attention_mask.assign(b.size * b.seq_len, 0);
  b.special_mask.assign(b.size * b.seq_len, 1);
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& t = examples[i].tokens;
    for (std::size_t j = 0; j < t.ids.size(); ++j) {
      b.token_ids[i * b.seq_len + j] = t.ids[j];
      b.attention_mask[i * b.seq_len + j] = 1;
      b.special_mask[i * b.seq_len + j] = t.special[j];
    }
    b.labels.push_back(examples[i].label);
    b.lengths.push_back(t.ids.size());
    b.sources.push_back(examples[i].source);
  }
  return b;
}

std::vector<Batch> make_batches(std::span<const EncodedExample> examples, std::size_t batch_size,
                                std::uint64_t seed, std::size_t epoch, bool sort_by_length) {
  if (batch_size < 2) throw ConfigError("make_batches: batch_size must be >= 2 (pairs need two examples)");
  Rng rng(derive_seed(seed, "shuffle", epoch));
  std::vector<std::size_t> order = rng.permutation(examples.size());
  if (sort_by_length) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return examples[a].tokens.ids.size() < examples[b].tokens.ids.size();
    });
  }
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (sort_by_length) rng.shuffle(groups);
  std::vector<Batch> out;
  out.reserve(groups.size());
  std::vector<EncodedExample> members;
  for (const auto& g : groups) {
    members.clear();
    for (std::size_t idx : g) members.push_back(examples[idx]);
    out.push_back(collate(members));
  }
  return out;
}

std::vector<Batch> sequential_batches(std::span<const EncodedExample> examples,
                                      std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("sequential_batches: batch_size must be positive");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, examples.size() - start);
    out.push_back(collate(examples.subspan(start, n)));
  }
  return out;
}

// ---- synthetic task --------------------------------------------------------------

namespace {

std::string trigger_token(int cls, std::size_t j) {
  return "t" + std::to_string(cls) + "_" + std::to_string(j);
}

Example synth_example(Rng& rng, const SynthOptions& o, std::string id, double shift_rate) {
  const int label = static_cast<int>(rng.below(2));
  std::size_t minority = 0;
  std::size_t majority = 0;
  if (rng.uniform() < o.contested_rate) {
    minority = 1 + rng.below(2);
    majority = minority + 1;
  } else {
    majority = 1 + rng.below(2);
  }
  const std::size_t n_distract =
      o.min_distractors + rng.below(o.max_distractors - o.min_distractors + 1);
  std::vector<std::string> toks;
  for (std::size_t k = 0; k < majority; ++k) toks.push_back(trigger_token(label, rng.below(o.triggers_per_class)));
  for (std::size_t k = 0; k < minority; ++k) toks.push_back(trigger_token(1 - label, rng.below(o.triggers_per_class)));
  for (std::size_t k = 0; k < n_distract; ++k) {
    const bool shifted = shift_rate > 0.0 && rng.uniform() < shift_rate;
    const std::string& prefix = shifted ? o.od_distractor_prefix : o.distractor_prefix;
    toks.push_back(prefix + std::to_string(rng.below(o.distractor_vocab)));
  }
  rng.shuffle(toks);
  std::string text;
  for (const auto& t : toks) {
    if (!text.empty()) text.push_back(' ');
    text += t;
  }
  return Example{std::move(id), std::move(text), std::nullopt, label};
}

void check_synth(const SynthOptions& o) {
  if (o.triggers_per_class == 0 || o.distractor_vocab == 0) throw ConfigError("synth: empty token pools");
  if (o.max_distractors < o.min_distractors) throw ConfigError("synth: max_distractors < min_distractors");
  if (o.distractor_prefix == o.od_distractor_prefix) throw ConfigError("synth: OD prefix must differ");
}

}  // namespace

SynthSplits synth_task(std::size_t n, double noise_rate, std::uint64_t seed, const SynthOptions& opts) {
  if (!(noise_rate >= 0.0 && noise_rate < 0.5)) {
    throw ConfigError("synth_task: noise_rate must lie in [0, 0.5), got " + std::to_string(noise_rate));
  }
  if (n < 10) throw ConfigError("synth_task: need at least 10 examples");
  check_synth(opts);
  Rng rng(derive_seed(seed, "synth"));
  std::vector<Example> all;
  all.reserve(n);
  for (std::size_t i = 0; i < n; ++i) all.push_back(synth_example(rng, opts, "synth-" + std::to_string(i), 0.0));

  SynthSplits s;
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_dev = n / 10;
  s.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.dev.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
               all.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  s.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), all.end());

  s.flipped = static_cast<std::size_t>(std::floor(noise_rate * static_cast<double>(n_train)));
  Rng noise(derive_seed(seed, "synth-noise"));
  const auto perm = noise.permutation(n_train);
  for (std::size_t k = 0; k < s.flipped; ++k) s.train[perm[k]].label = 1 - s.train[perm[k]].label;
  return s;
}

std::vector<Example> synth_ood(std::size_t n, std::uint64_t seed, const SynthOptions& opts) {
  check_synth(opts);
  Rng rng(derive_seed(seed, "synth-ood"));
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(synth_example(rng, opts, "ood-" + std::to_string(i), opts.od_shift_rate));
  }
  return out;
}

// ---- JSONL -----------------------------------------------------------------------

std::vector<Example> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    Example ex;
    if (!j.contains("label") || !j["label"].is_number_integer()) {
      throw DataError(where + ": missing or non-integer 'label'");
    }
    if (!j.contains("text") || !j["text"].is_string()) throw DataError(where + ": missing 'text'");
    ex.label = j["label"].get<int>();
    if (ex.label < 0) throw DataError(where + ": negative label");
    ex.text = j["text"].get<std::string>();
    if (split_tokens(ex.text).empty()) throw DataError(where + ": empty 'text'");
    ex.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                    : "line-" + std::to_string(lineno);
    if (j.contains("text2") && !j["text2"].is_null()) {
      if (!j["text2"].is_string()) throw DataError(where + ": 'text2' must be a string");
      ex.text2 = j["text2"].get<std::string>();
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file " + path.string());
  for (const Example& ex : examples) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["text"] = ex.text;
    if (ex.text2) j["text2"] = *ex.text2;
    j["label"] = ex.label;
    out << j.dump() << '\n';
  }
}

std::size_t num_classes(std::span<const Example> examples) {
  int mx = -1;
  for (const auto& ex : examples) mx = std::max(mx, ex.label);
  return static_cast<std::size_t>(mx + 1);
}

}  // namespace cme
