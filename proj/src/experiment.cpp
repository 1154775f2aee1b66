// SPDX-License-Identifier: Apache-2.0
#include "cme/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "cme/errors.hpp"
#include "cme/logits_csv.hpp"

#ifndef CME_BUILD_ID
#define CME_BUILD_ID "unknown"
#endif

namespace cme {

namespace fs = std::filesystem;

std::string build_id() { return CME_BUILD_ID; }

namespace {

template <class T>
void take(const Json& j, const char* key, T& dst) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      dst = it->get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(std::string("unknown ") + what + " config key '" + it.key() + "'");
  }
}

std::string format_lambda(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

Json to_json(const TrainingConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["lambda"] = c.lambda;
  j["sigma"] = c.sigma;
  j["mode"] = to_string(c.mode);
  j["clip"] = c.clip;
  j["seed"] = c.seed;
  j["bins"] = c.bins;
  j["confidence_only"] = c.confidence_only;
  j["unscaled_attention"] = c.unscaled_attention;
  j["sqrt_len_scale"] = c.sqrt_len_scale;
  j["use_logit_gradient"] = c.use_logit_gradient;
  j["normalize_pairs"] = c.normalize_pairs;
  j["second_order"] = c.second_order;
  j["sort_by_length"] = c.sort_by_length;
  j["attr_layer"] = c.attr_layer ? Json(*c.attr_layer) : Json(nullptr);
  j["fused_backward"] = c.fused_backward;
  return j;
}

TrainingConfig training_config_from_json(const Json& j, TrainingConfig c) {
  reject_unknown(j,
                 {"epochs", "learning_rate", "batch_size", "lambda", "sigma", "mode", "clip", "seed",
                  "bins", "confidence_only", "unscaled_attention", "sqrt_len_scale",
                  "use_logit_gradient", "normalize_pairs", "second_order", "sort_by_length",
                  "attr_layer", "fused_backward"},
                 "training");
  take(j, "epochs", c.epochs);
  take(j, "learning_rate", c.learning_rate);
  take(j, "batch_size", c.batch_size);
  take(j, "lambda", c.lambda);
  take(j, "sigma", c.sigma);
  if (j.contains("mode")) c.mode = parse_loss_mode(j["mode"].get<std::string>());
  take(j, "clip", c.clip);
  take(j, "seed", c.seed);
  take(j, "bins", c.bins);
  take(j, "confidence_only", c.confidence_only);
  take(j, "unscaled_attention", c.unscaled_attention);
  take(j, "sqrt_len_scale", c.sqrt_len_scale);
  take(j, "use_logit_gradient", c.use_logit_gradient);
  take(j, "normalize_pairs", c.normalize_pairs);
  take(j, "second_order", c.second_order);
  take(j, "sort_by_length", c.sort_by_length);
  take(j, "fused_backward", c.fused_backward);
  if (auto it = j.find("attr_layer"); it != j.end()) {
    if (it->is_null()) c.attr_layer.reset();
    else c.attr_layer = it->get<std::size_t>();
  }
  return c;
}

Json to_json(const ModelConfig& c) {
  return Json{{"vocab_size", c.vocab_size}, {"max_len", c.max_len}, {"d_model", c.d_model},
              {"heads", c.heads},           {"d_ff", c.d_ff},       {"layers", c.layers},
              {"num_classes", c.num_classes}, {"init_range", c.init_range}};
}

Json to_json(const SynthOptions& o) {
  return Json{{"triggers_per_class", o.triggers_per_class},
              {"distractor_vocab", o.distractor_vocab},
              {"min_distractors", o.min_distractors},
              {"max_distractors", o.max_distractors},
              {"contested_rate", o.contested_rate},
              {"distractor_prefix", o.distractor_prefix},
              {"od_distractor_prefix", o.od_distractor_prefix},
              {"od_shift_rate", o.od_shift_rate}};
}

SynthOptions synth_options_from_json(const Json& j, SynthOptions o) {
  reject_unknown(j,
                 {"triggers_per_class", "distractor_vocab", "min_distractors", "max_distractors",
                  "contested_rate", "distractor_prefix", "od_distractor_prefix", "od_shift_rate"},
                 "synth");
  take(j, "triggers_per_class", o.triggers_per_class);
  take(j, "distractor_vocab", o.distractor_vocab);
  take(j, "min_distractors", o.min_distractors);
  take(j, "max_distractors", o.max_distractors);
  take(j, "contested_rate", o.contested_rate);
  take(j, "distractor_prefix", o.distractor_prefix);
  take(j, "od_distractor_prefix", o.od_distractor_prefix);
  take(j, "od_shift_rate", o.od_shift_rate);
  return o;
}

// ---- evaluation ------------------------------------------------------------------

Evaluation evaluate_records(std::vector<PredictionRecord> records, std::size_t K, Binning binning) {
  Evaluation e;
  e.ece = ece(records, K, binning);
  e.accuracy = accuracy(records);
  e.records = std::move(records);
  return e;
}

void check_label_space(std::span<const Example> examples, std::size_t num_classes,
                       const std::string& what) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const int y = examples[i].label;
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError(what + ": example '" + examples[i].id + "' has label " + std::to_string(y) +
                      " outside the model's " + std::to_string(num_classes) + " classes");
    }
  }
}

namespace {

Tensor2D logits_for(const ModelParams& params, const Vocab& vocab, std::span<const Example> examples) {
  const auto enc = encode(examples, vocab, params.config().max_len);
  return predict_logits(params, enc);
}

std::vector<std::string> ids_of(std::span<const Example> ex) {
  std::vector<std::string> ids;
  ids.reserve(ex.size());
  for (const auto& e : ex) ids.push_back(e.id);
  return ids;
}

std::vector<int> labels_of(std::span<const Example> ex) {
  std::vector<int> y;
  y.reserve(ex.size());
  for (const auto& e : ex) y.push_back(e.label);
  return y;
}

}  // namespace

Evaluation evaluate(const ModelParams& params, const Vocab& vocab, std::span<const Example> examples,
                    std::size_t K, Binning binning, double temperature) {
  if (examples.empty()) throw MetricError("evaluate: empty dataset");
  check_label_space(examples, params.config().num_classes, "evaluate");
  const Tensor2D logits = logits_for(params, vocab, examples);
  const auto ids = ids_of(examples);
  const auto labels = labels_of(examples);
  return evaluate_records(records_from_logits(ids, labels, logits, temperature), K, binning);
}

Json metrics_json(const Evaluation& e, std::size_t K, Binning binning) {
  Json j;
  j["n"] = e.records.size();
  j["ece"] = e.ece;
  j["accuracy"] = e.accuracy;
  Json bins = Json::array();
  for (const auto& b : bin_predictions(e.records, K, binning)) {
    bins.push_back(Json{{"index", b.index},
                        {"lower", b.lower},
                        {"upper", b.upper},
                        {"count", b.count},
                        {"accuracy", b.accuracy},
                        {"mean_confidence", b.mean_confidence},
                        {"error", b.error}});
  }
  j["bins"] = std::move(bins);
  return j;
}

OodEvaluation evaluate_ood(const ModelParams& params, const Vocab& vocab, std::span<const Example> od,
                           std::span<const Example> dev, std::size_t K) {
  if (od.empty()) throw MetricError("evaluate_ood: empty OD dataset");
  check_label_space(od, params.config().num_classes, "OD dataset");
  OodEvaluation r;
  const Tensor2D od_logits = logits_for(params, vocab, od);
  const auto ids = ids_of(od);
  const auto labels = labels_of(od);
  r.ootb = evaluate_records(records_from_logits(ids, labels, od_logits), K);
  if (!dev.empty()) {
    check_label_space(dev, params.config().num_classes, "dev dataset");
    const Tensor2D dev_logits = logits_for(params, vocab, dev);
    const auto dev_labels = labels_of(dev);
    r.temperature = fit_temperature(dev_logits, dev_labels, K);
    r.scaled = evaluate_records(records_from_logits(ids, labels, od_logits, r.temperature->value), K);
  }
  return r;
}

Json metrics_json(const OodEvaluation& e, std::size_t K) {
  Json j;
  j["ootb"] = metrics_json(e.ootb, K);
  if (e.temperature) {
    j["temperature"] = Json{{"value", e.temperature->value},
                            {"dev_ece", e.temperature->dev_ece},
                            {"dev_ece_at_one", e.temperature->dev_ece_at_one}};
    j["scaled"] = metrics_json(*e.scaled, K);
  }
  return j;
}

// ---- data ------------------------------------------------------------------------------

DataSplits load_splits(const DataSpec& spec) {
  DataSplits s;
  if (spec.dir) {
    s.train = read_jsonl(*spec.dir / "train.jsonl");
    s.dev = read_jsonl(*spec.dir / "dev.jsonl");
    if (fs::exists(*spec.dir / "test.jsonl")) s.test = read_jsonl(*spec.dir / "test.jsonl");
    if (fs::exists(*spec.dir / "od.jsonl")) s.od = read_jsonl(*spec.dir / "od.jsonl");
    return s;
  }
  auto t = synth_task(spec.synth_n, spec.noise_rate, spec.data_seed, spec.synth);
  s.train = std::move(t.train);
  s.dev = std::move(t.dev);
  s.test = std::move(t.test);
  if (spec.od_n > 0) s.od = synth_ood(spec.od_n, spec.data_seed, spec.synth);
  return s;
}

Json to_json(const DataSpec& d) {
  Json j;
  j["dir"] = d.dir ? Json(d.dir->generic_string()) : Json(nullptr);
  j["synth_n"] = d.synth_n;
  j["noise_rate"] = d.noise_rate;
  j["data_seed"] = d.data_seed;
  j["od_n"] = d.od_n;
  j["synth"] = to_json(d.synth);
  return j;
}

DataSpec data_spec_from_json(const Json& j) {
  reject_unknown(j, {"dir", "synth_n", "noise_rate", "data_seed", "od_n", "synth"}, "data");
  DataSpec d;
  if (auto it = j.find("dir"); it != j.end() && !it->is_null()) d.dir = it->get<std::string>();
  take(j, "synth_n", d.synth_n);
  take(j, "noise_rate", d.noise_rate);
  take(j, "data_seed", d.data_seed);
  take(j, "od_n", d.od_n);
  if (j.contains("synth")) d.synth = synth_options_from_json(j["synth"]);
  return d;
}

// ---- sweep -------------------------------------------------------------------------------

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Default: return "default";
    case Variant::ConfidenceOnly: return "confidence-only";
    case Variant::UnscaledAttention: return "unscaled-attention";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  if (s == "default") return Variant::Default;
  if (s == "confidence-only") return Variant::ConfidenceOnly;
  if (s == "unscaled-attention") return Variant::UnscaledAttention;
  throw ConfigError("unknown variant '" + std::string(s) +
                    "' (expected default, confidence-only, unscaled-attention)");
}

Stat mean_std(std::span<const double> v) {
  if (v.empty()) throw MetricError("mean_std: no values");
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

Json to_json(const SweepSpec& s) {
  Json j;
  j["data"] = to_json(s.data);
  j["arch"] = Json{{"max_len", s.arch.max_len}, {"d_model", s.arch.d_model}, {"heads", s.arch.heads},
                   {"d_ff", s.arch.d_ff},       {"layers", s.arch.layers}};
  j["training"] = to_json(s.training);
  j["seeds"] = s.seeds;
  j["lambdas"] = s.lambdas;
  Json modes = Json::array();
  for (auto m : s.modes) modes.push_back(to_string(m));
  j["modes"] = modes;
  Json variants = Json::array();
  for (auto v : s.variants) variants.push_back(to_string(v));
  j["variants"] = variants;
  j["bins"] = s.bins;
  return j;
}

SweepSpec sweep_spec_from_json(const Json& j) {
  reject_unknown(j, {"data", "arch", "training", "seeds", "lambdas", "modes", "variants", "bins"}, "sweep");
  SweepSpec s;
  if (j.contains("data")) s.data = data_spec_from_json(j["data"]);
  if (j.contains("arch")) {
    const Json& a = j["arch"];
    reject_unknown(a, {"max_len", "d_model", "heads", "d_ff", "layers"}, "arch");
    take(a, "max_len", s.arch.max_len);
    take(a, "d_model", s.arch.d_model);
    take(a, "heads", s.arch.heads);
    take(a, "d_ff", s.arch.d_ff);
    take(a, "layers", s.arch.layers);
  }
  if (j.contains("training")) s.training = training_config_from_json(j["training"]);
  take(j, "seeds", s.seeds);
  take(j, "lambdas", s.lambdas);
  if (j.contains("modes")) {
    s.modes.clear();
    for (const auto& m : j["modes"]) s.modes.push_back(parse_loss_mode(m.get<std::string>()));
  }
  if (j.contains("variants")) {
    s.variants.clear();
    for (const auto& v : j["variants"]) s.variants.push_back(parse_variant(v.get<std::string>()));
  }
  take(j, "bins", s.bins);
  return s;
}

const CellSummary* SweepResult::selected_cell(LossMode mode, Variant variant) const {
  for (const auto& s : selected) {
    if (s.mode == mode && s.variant == variant) return &cells.at(s.cell);
  }
  return nullptr;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write on " + path.string());
}

namespace {

struct CellKey {
  LossMode mode;
  Variant variant;
  double lambda;
};

std::vector<CellKey> cell_keys(const SweepSpec& spec) {
  std::vector<CellKey> keys;
  for (LossMode m : spec.modes) {
    if (!uses_calibration_term(m)) {
      keys.push_back({m, Variant::Default, 0.0});
      continue;
    }
    for (Variant v : spec.variants) {
      for (double lam : spec.lambdas) keys.push_back({m, v, lam});
    }
  }
  return keys;
}

std::string cell_dir(const CellKey& k) {
  std::string d = std::string(to_string(k.mode)) + "-" + to_string(k.variant);
  if (uses_calibration_term(k.mode)) d += "-lambda" + format_lambda(k.lambda);
  return d;
}

Json run_json(const RunResult& r) {
  Json j;
  j["mode"] = to_string(r.mode);
  j["variant"] = to_string(r.variant);
  j["lambda"] = r.lambda;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  j["dev_ece"] = r.dev_ece;
  j["dev_accuracy"] = r.dev_accuracy;
  j["test_ece"] = r.test_ece;
  j["test_accuracy"] = r.test_accuracy;
  j["od_ece"] = r.od_ece;
  j["od_ts_ece"] = r.od_ts_ece;
  j["od_accuracy"] = r.od_accuracy;
  j["temperature"] = r.temperature;
  j["dev_ts_ece"] = r.dev_ts_ece;
  j["dev_ece_at_one"] = r.dev_ece_at_one;
  j["dir"] = r.dir;
  return j;
}

Json stat_json(const Stat& s) { return Json{{"mean", s.mean}, {"std", s.std}}; }

struct Prepared {
  DataSplits splits;
  Vocab vocab;
  std::vector<EncodedExample> train, dev, test, od;
  ModelConfig model;
};

Prepared prepare(const SweepSpec& spec) {
  Prepared p;
  p.splits = load_splits(spec.data);
  if (p.splits.train.empty() || p.splits.dev.empty()) throw DataError("sweep: train and dev splits must be non-empty");
  p.vocab = build_vocab(p.splits.train);
  p.model.vocab_size = p.vocab.size();
  p.model.max_len = spec.arch.max_len;
  p.model.d_model = spec.arch.d_model;
  p.model.heads = spec.arch.heads;
  p.model.d_ff = spec.arch.d_ff;
  p.model.layers = spec.arch.layers;
  p.model.num_classes = std::max<std::size_t>(2, num_classes(p.splits.train));
  p.model.validate();
  check_label_space(p.splits.dev, p.model.num_classes, "dev split");
  check_label_space(p.splits.test, p.model.num_classes, "test split");
  check_label_space(p.splits.od, p.model.num_classes, "OD split");
  p.train = encode(p.splits.train, p.vocab, p.model.max_len);
  p.dev = encode(p.splits.dev, p.vocab, p.model.max_len);
  p.test = encode(p.splits.test, p.vocab, p.model.max_len);
  p.od = encode(p.splits.od, p.vocab, p.model.max_len);
  return p;
}

LogitTable table_for(std::span<const Example> ex, Tensor2D logits) {
  return LogitTable{ids_of(ex), labels_of(ex), std::move(logits)};
}

RunResult execute(const Prepared& p, const SweepSpec& spec, const CellKey& key, std::uint64_t seed,
                  const std::optional<fs::path>& out_dir, const std::string& rel_dir) {
  RunResult r;
  r.mode = key.mode;
  r.variant = key.variant;
  r.lambda = key.lambda;
  r.seed = seed;
  r.dir = rel_dir;
  try {
    TrainingConfig cfg = spec.training;
    cfg.mode = key.mode;
    cfg.lambda = key.lambda;
    cfg.seed = seed;
    cfg.bins = spec.bins;
    cfg.confidence_only = cfg.confidence_only || key.variant == Variant::ConfidenceOnly;
    cfg.unscaled_attention = cfg.unscaled_attention || key.variant == Variant::UnscaledAttention;
    ModelParams params = init_params(p.model, seed);
    const TrainReport report = train(params, {p.train, p.dev}, cfg);

    const std::size_t K = spec.bins;
    const Tensor2D dev_logits = predict_logits(params, p.dev);
    const auto dev_labels = labels_of(p.splits.dev);
    const auto dev = evaluate_records(records_from_logits(ids_of(p.splits.dev), dev_labels, dev_logits), K);
    const Temperature T = fit_temperature(dev_logits, dev_labels, K);
    r.dev_ece = dev.ece;
    r.dev_accuracy = dev.accuracy;
    r.temperature = T.value;
    r.dev_ts_ece = T.dev_ece;
    r.dev_ece_at_one = T.dev_ece_at_one;

    Json metrics;
    metrics["mode"] = to_string(key.mode);
    metrics["variant"] = to_string(key.variant);
    metrics["lambda"] = key.lambda;
    metrics["seed"] = seed;
    Json epochs = Json::array();
    for (const auto& e : report.epochs) {
      epochs.push_back(Json{{"epoch", e.epoch},
                            {"classify_loss", e.classify_loss},
                            {"calib_loss", e.calib_loss},
                            {"total_loss", e.total_loss},
                            {"pairs", e.pairs},
                            {"dev_accuracy", e.dev_accuracy},
                            {"dev_ece", e.dev_ece}});
    }
    metrics["epochs"] = epochs;
    metrics["dev"] = metrics_json(dev, K);
    metrics["temperature"] = Json{{"value", T.value}, {"dev_ece", T.dev_ece}, {"dev_ece_at_one", T.dev_ece_at_one}};

    Tensor2D test_logits;
    std::optional<Evaluation> test;
    if (!p.test.empty()) {
      test_logits = predict_logits(params, p.test);
      test = evaluate_records(records_from_logits(ids_of(p.splits.test), labels_of(p.splits.test), test_logits), K);
      r.test_ece = test->ece;
      r.test_accuracy = test->accuracy;
      metrics["test"] = metrics_json(*test, K);
      metrics["test_ts"] = metrics_json(
          evaluate_records(records_from_logits(ids_of(p.splits.test), labels_of(p.splits.test), test_logits, T.value), K), K);
    }
    std::optional<Evaluation> od;
    if (!p.od.empty()) {
      const Tensor2D od_logits = predict_logits(params, p.od);
      const auto ids = ids_of(p.splits.od);
      const auto labels = labels_of(p.splits.od);
      od = evaluate_records(records_from_logits(ids, labels, od_logits), K);
      const auto od_ts = evaluate_records(records_from_logits(ids, labels, od_logits, T.value), K);
      r.od_ece = od->ece;
      r.od_accuracy = od->accuracy;
      r.od_ts_ece = od_ts.ece;
      metrics["od"] = metrics_json(*od, K);
      metrics["od_ts"] = metrics_json(od_ts, K);
    }

    if (out_dir) {
      const fs::path dir = *out_dir / rel_dir;
      write_text(dir / "metrics.json", metrics.dump(2) + "\n");
      write_logits_csv(dir / "dev_logits.csv", table_for(p.splits.dev, dev_logits));
      if (test) {
        write_logits_csv(dir / "test_logits.csv", table_for(p.splits.test, test_logits));
        const auto pts = reliability_data(test->records, K);
        write_text(dir / "reliability_test.csv", reliability_csv(pts));
        write_text(dir / "reliability_test.svg", reliability_svg(pts, rel_dir + " test"));
      }
      if (od) write_text(dir / "reliability_od.csv", reliability_csv(reliability_data(od->records, K)));
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

}  // namespace

SweepResult run_sweep(const SweepSpec& spec, const std::optional<fs::path>& out_dir) {
  if (spec.seeds.empty()) throw ConfigError("sweep: at least one seed is required");
  if (spec.modes.empty()) throw ConfigError("sweep: at least one mode is required");
  for (LossMode m : spec.modes) {
    if (uses_calibration_term(m) && (spec.lambdas.empty() || spec.variants.empty())) {
      throw ConfigError("sweep: calibration modes need a lambda grid and at least one variant");
    }
  }
  for (double lam : spec.lambdas) {
    if (!(lam >= 0.0)) throw ConfigError("sweep: lambda values must be >= 0");
  }
  spec.training.validate();

  const Prepared prepared = prepare(spec);
  SweepResult result;
  for (const CellKey& key : cell_keys(spec)) {
    CellSummary cell;
    cell.mode = key.mode;
    cell.variant = key.variant;
    cell.lambda = key.lambda;
    std::vector<double> de, da, te, ta, oe, ots, oa;
    for (std::uint64_t seed : spec.seeds) {
      const std::string rel = "runs/" + cell_dir(key) + "/seed-" + std::to_string(seed);
      RunResult r = execute(prepared, spec, key, seed, out_dir, rel);
      ++cell.runs;
      if (!r.ok) {
        ++cell.failures;
        result.partial = true;
      } else {
        de.push_back(r.dev_ece);
        da.push_back(r.dev_accuracy);
        te.push_back(r.test_ece);
        ta.push_back(r.test_accuracy);
        oe.push_back(r.od_ece);
        ots.push_back(r.od_ts_ece);
        oa.push_back(r.od_accuracy);
      }
      result.runs.push_back(std::move(r));
    }
    if (!de.empty()) {
      cell.dev_ece = mean_std(de);
      cell.dev_accuracy = mean_std(da);
      cell.test_ece = mean_std(te);
      cell.test_accuracy = mean_std(ta);
      cell.od_ece = mean_std(oe);
      cell.od_ts_ece = mean_std(ots);
      cell.od_accuracy = mean_std(oa);
    }
    result.cells.push_back(cell);
  }

  // lambda selection per (mode, variant) by mean dev ECE; ties keep grid order
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const CellSummary& c = result.cells[i];
    if (c.failures == c.runs) continue;
    Selection* sel = nullptr;
    for (auto& s : result.selected) {
      if (s.mode == c.mode && s.variant == c.variant) sel = &s;
    }
    if (sel == nullptr) {
      result.selected.push_back({c.mode, c.variant, c.lambda, i});
    } else if (c.dev_ece.mean < result.cells[sel->cell].dev_ece.mean) {
      sel->lambda = c.lambda;
      sel->cell = i;
    }
  }

  if (out_dir) write_text(*out_dir / "summary.json", summary_json(result).dump(2) + "\n");
  return result;
}

Json summary_json(const SweepResult& r) {
  Json j;
  j["partial"] = r.partial;
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    cells.push_back(Json{{"mode", to_string(c.mode)},
                         {"variant", to_string(c.variant)},
                         {"lambda", c.lambda},
                         {"runs", c.runs},
                         {"failures", c.failures},
                         {"dev_ece", stat_json(c.dev_ece)},
                         {"dev_accuracy", stat_json(c.dev_accuracy)},
                         {"test_ece", stat_json(c.test_ece)},
                         {"test_accuracy", stat_json(c.test_accuracy)},
                         {"od_ece", stat_json(c.od_ece)},
                         {"od_ts_ece", stat_json(c.od_ts_ece)},
                         {"od_accuracy", stat_json(c.od_accuracy)}});
  }
  j["cells"] = cells;
  Json sel = Json::array();
  for (const auto& s : r.selected) {
    sel.push_back(Json{{"mode", to_string(s.mode)}, {"variant", to_string(s.variant)}, {"lambda", s.lambda}});
  }
  j["selected"] = sel;
  Json runs = Json::array();
  for (const auto& run : r.runs) runs.push_back(run_json(run));
  j["runs"] = runs;
  return j;
}

// ---- manifests ------------------------------------------------------------------------------

Json to_json(const RunManifest& m) {
  return Json{{"command", m.command}, {"config", m.config}, {"seeds", m.seeds},
              {"build", m.build},     {"outputs", m.outputs}};
}

RunManifest manifest_from_json(const Json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.build = j.value("build", std::string("unknown"));
    if (j.contains("outputs")) m.outputs = j["outputs"].get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const fs::path& path, const RunManifest& m) {
  write_text(path, to_json(m).dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

SweepResult run_sweep_with_manifest(const SweepSpec& spec, const fs::path& out_dir) {
  SweepResult r = run_sweep(spec, out_dir);
  RunManifest m;
  m.command = "sweep";
  m.config = to_json(spec);
  m.seeds = spec.seeds;
  m.build = build_id();
  m.outputs.push_back("summary.json");
  for (const auto& run : r.runs) {
    if (!run.ok) continue;
    for (const char* f : {"/metrics.json", "/reliability_test.csv", "/reliability_od.csv"}) {
      if (fs::exists(out_dir / (run.dir + f))) m.outputs.push_back(run.dir + f);
    }
  }
  write_manifest(out_dir / "manifest.json", m);
  return r;
}

SweepResult replay_sweep(const RunManifest& m, const fs::path& out_dir) {
  if (m.command != "sweep") throw ConfigError("manifest records '" + m.command + "', not a sweep");
  SweepSpec spec = sweep_spec_from_json(m.config);
  spec.seeds = m.seeds;
  return run_sweep_with_manifest(spec, out_dir);
}

}  // namespace cme
