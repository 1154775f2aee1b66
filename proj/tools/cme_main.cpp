// SPDX-License-Identifier: Apache-2.0
// cme: train / eval / calibrate / attribute / diagram / sweep / synth.
#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "cme/attribution.hpp"
#include "cme/data.hpp"
#include "cme/errors.hpp"
#include "cme/experiment.hpp"
#include "cme/logits_csv.hpp"
#include "cme/metrics.hpp"
#include "cme/model.hpp"
#include "cme/posthoc.hpp"
#include "cme/trainer.hpp"

namespace fs = std::filesystem;
using cme::Json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

// ---- config file -------------------------------------------------------------

/// Turns {"lr": 0.1, "normalize-pairs": true, "seeds": [1, 2]} into argv
/// tokens. They are placed before the real arguments so explicit flags win.
std::vector<std::string> config_tokens(const fs::path& path, const std::set<std::string>& given) {
  std::ifstream in(path);
  if (!in) throw cme::ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw cme::ConfigError("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw cme::ConfigError("config file must hold a JSON object");
  auto scalar = [](const Json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    return v.dump();
  };
  std::vector<std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string name = it.key();
    for (char& c : name) c = c == '_' ? '-' : c;
    if (given.count("--" + name)) continue;
    const Json& v = it.value();
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back("--" + name);
    } else if (v.is_array()) {
      out.push_back("--" + name);
      for (const auto& x : v) out.push_back(scalar(x));
    } else if (!v.is_null()) {
      out.push_back("--" + name);
      out.push_back(scalar(v));
    }
  }
  return out;
}

/// argv with the subcommand's --config expanded in place.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::optional<std::string> file;
    std::size_t span = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
      span = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
      span = 1;
    }
    if (!file) continue;
    std::set<std::string> given;
    for (const auto& a : args) {
      if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));
    }
    auto tokens = config_tokens(*file, given);
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + span));
    // just after the subcommand name so everything typed later overrides
    std::size_t at = 0;
    while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
    at = std::min(at + 1, args.size());
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), tokens.begin(), tokens.end());
    break;
  }
  return args;
}

void emit(const Json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    cme::write_text(out, j.dump(2) + "\n");
  }
}

void write_side_manifest(const fs::path& artifact, const std::string& command, Json config,
                         std::vector<std::uint64_t> seeds, std::vector<std::string> outputs) {
  cme::RunManifest m;
  m.command = command;
  m.config = std::move(config);
  m.seeds = std::move(seeds);
  m.build = cme::build_id();
  m.outputs = std::move(outputs);
  cme::write_manifest(fs::path(artifact.string() + ".manifest.json"), m);
}

std::string file_name(const fs::path& p) { return p.filename().string(); }

// ---- shared option groups ----------------------------------------------------------

struct TrainFlags {
  cme::TrainingConfig cfg;
  std::string mode = "cme";
  std::optional<std::size_t> attr_layer;
  bool two_pass = false;
  cme::ArchSpec arch;

  void add(CLI::App& app) {
    app.add_option("--mode", mode, "Loss: mle, ls, cme, cme-ls")->capture_default_str();
    app.add_option("--lambda", cfg.lambda, "Calibration term weight")->capture_default_str();
    app.add_option("--sigma", cfg.sigma, "Label smoothing (ls modes)")->capture_default_str();
    app.add_option("--lr", cfg.learning_rate, "SGD learning rate")->capture_default_str();
    app.add_option("--epochs", cfg.epochs)->capture_default_str();
    app.add_option("--batch-size", cfg.batch_size)->capture_default_str();
    app.add_option("--seed", cfg.seed)->capture_default_str();
    app.add_option("--clip", cfg.clip, "Global gradient-norm clip")->capture_default_str();
    app.add_option("--bins", cfg.bins, "ECE bins for dev reports")->capture_default_str();
    app.add_option("--attr-layer", attr_layer, "Attention layer for attributions (default: penultimate)");
    app.add_flag("--sort-by-length", cfg.sort_by_length, "Group similar lengths before batching");
    app.add_flag("--normalize-pairs", cfg.normalize_pairs, "Divide the hinge sum by the pair count");
    app.add_flag("--second-order", cfg.second_order, "Reserved; rejected");
    app.add_flag("--confidence-only", cfg.confidence_only, "Ablation: score = confidence");
    app.add_flag("--unscaled-attention", cfg.unscaled_attention, "Ablation: plain attention");
    app.add_flag("--sqrt-len-scale", cfg.sqrt_len_scale, "Divide the attribution norm by sqrt(length)");
    app.add_flag("--logit-gradient", cfg.use_logit_gradient, "Attention gradient of the logit, not the probability");
    app.add_flag("--two-pass", two_pass, "Separate backward passes for the two loss terms");
    app.add_option("--max-len", arch.max_len)->capture_default_str();
    app.add_option("--d-model", arch.d_model)->capture_default_str();
    app.add_option("--heads", arch.heads)->capture_default_str();
    app.add_option("--d-ff", arch.d_ff)->capture_default_str();
    app.add_option("--layers", arch.layers)->capture_default_str();
  }

  cme::TrainingConfig resolve() const {
    cme::TrainingConfig c = cfg;
    c.mode = cme::parse_loss_mode(mode);
    c.attr_layer = attr_layer;
    c.fused_backward = !two_pass;
    c.validate();
    return c;
  }
};

cme::Binning binning_of(bool adaptive) { return adaptive ? cme::Binning::EqualMass : cme::Binning::EqualWidth; }

// ---- subcommands ------------------------------------------------------------------------

int cmd_synth(const fs::path& out, std::size_t n, double noise, std::uint64_t seed, std::size_t od_n) {
  const auto splits = cme::synth_task(n, noise, seed);
  cme::write_jsonl(out / "train.jsonl", splits.train);
  cme::write_jsonl(out / "dev.jsonl", splits.dev);
  cme::write_jsonl(out / "test.jsonl", splits.test);
  std::vector<std::string> files = {"train.jsonl", "dev.jsonl", "test.jsonl"};
  if (od_n > 0) {
    cme::write_jsonl(out / "od.jsonl", cme::synth_ood(od_n, seed));
    files.push_back("od.jsonl");
  }
  cme::RunManifest m;
  m.command = "synth";
  m.config = Json{{"n", n}, {"noise_rate", noise}, {"seed", seed}, {"od_n", od_n}, {"synth", cme::to_json(cme::SynthOptions{})}};
  m.seeds = {seed};
  m.build = cme::build_id();
  m.outputs = files;
  cme::write_manifest(out / "manifest.json", m);
  std::cout << Json{{"train", splits.train.size()}, {"dev", splits.dev.size()}, {"test", splits.test.size()},
                    {"od", od_n}, {"flipped", splits.flipped}}.dump(2)
            << "\n";
  return 0;
}

int cmd_train(const TrainFlags& flags, const fs::path& data, const fs::path& out) {
  const cme::TrainingConfig cfg = flags.resolve();
  const auto train_set = cme::read_jsonl(data / "train.jsonl");
  const auto dev_set = cme::read_jsonl(data / "dev.jsonl");
  cme::Vocab vocab = cme::build_vocab(train_set);
  cme::ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.max_len = flags.arch.max_len;
  mc.d_model = flags.arch.d_model;
  mc.heads = flags.arch.heads;
  mc.d_ff = flags.arch.d_ff;
  mc.layers = flags.arch.layers;
  mc.num_classes = std::max<std::size_t>(2, cme::num_classes(train_set));
  mc.validate();
  if (cme::uses_calibration_term(cfg.mode)) (void)cme::attribution_layer(mc, cfg.attr_layer);
  cme::check_label_space(dev_set, mc.num_classes, "dev.jsonl");
  const auto tr = cme::encode(train_set, vocab, mc.max_len);
  const auto dv = cme::encode(dev_set, vocab, mc.max_len);

  cme::ModelParams params = cme::init_params(mc, cfg.seed);
  cme::TrainReport report = cme::train(params, {tr, dv}, cfg, [](const cme::EpochReport& e, const cme::ModelParams&) {
    std::fprintf(stderr, "epoch %zu  loss %.4f (classify %.4f, calib %.4f, pairs %zu)  dev acc %.4f ece %.4f\n",
                 e.epoch, e.total_loss, e.classify_loss, e.calib_loss, e.pairs, e.dev_accuracy, e.dev_ece);
  });
  cme::save_checkpoint(out, cme::Checkpoint{params, vocab});
  report.checkpoint_path = out.string();

  Json j;
  j["checkpoint"] = report.checkpoint_path;
  j["config"] = cme::to_json(cfg);
  j["model"] = cme::to_json(mc);
  Json epochs = Json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back(Json{{"epoch", e.epoch}, {"classify_loss", e.classify_loss}, {"calib_loss", e.calib_loss},
                          {"total_loss", e.total_loss}, {"pairs", e.pairs}, {"dev_accuracy", e.dev_accuracy},
                          {"dev_ece", e.dev_ece}});
  }
  j["epochs"] = epochs;
  std::cout << j.dump(2) << "\n";
  write_side_manifest(out, "train", Json{{"data", data.string()}, {"training", cme::to_json(cfg)}, {"model", cme::to_json(mc)}},
                      {cfg.seed}, {file_name(out)});
  return 0;
}

struct EvalFlags {
  std::string checkpoint, data, logits, dev, out, logits_out;
  std::size_t bins = 10;
  bool adaptive = false;
  double temperature = 1.0;
};

int cmd_eval(const EvalFlags& f) {
  Json result;
  if (!f.logits.empty()) {
    const auto table = cme::read_logits_csv(f.logits);
    auto ev = cme::evaluate_records(cme::records_from_logits(table.ids, table.labels, table.logits, f.temperature),
                                    f.bins, binning_of(f.adaptive));
    result = cme::metrics_json(ev, f.bins, binning_of(f.adaptive));
  } else {
    if (f.checkpoint.empty() || f.data.empty()) throw cme::ConfigError("eval needs --logits or --checkpoint with --data");
    const auto ck = cme::load_checkpoint(f.checkpoint);
    const auto examples = cme::read_jsonl(f.data);
    if (!f.dev.empty()) {
      const auto dev = cme::read_jsonl(f.dev);
      result = cme::metrics_json(cme::evaluate_ood(ck.params, ck.vocab, examples, dev, f.bins), f.bins);
    } else {
      auto ev = cme::evaluate(ck.params, ck.vocab, examples, f.bins, binning_of(f.adaptive), f.temperature);
      result = cme::metrics_json(ev, f.bins, binning_of(f.adaptive));
    }
    if (!f.logits_out.empty()) {
      cme::check_label_space(examples, ck.params.config().num_classes, f.data);
      cme::LogitTable t;
      for (const auto& e : examples) {
        t.ids.push_back(e.id);
        t.labels.push_back(e.label);
      }
      t.logits = cme::predict_logits(ck.params, cme::encode(examples, ck.vocab, ck.params.config().max_len));
      cme::write_logits_csv(f.logits_out, t);
    }
  }
  emit(result, f.out);
  Json cfg{{"checkpoint", f.checkpoint}, {"data", f.data}, {"logits", f.logits}, {"dev", f.dev},
           {"bins", f.bins}, {"adaptive_bins", f.adaptive}, {"temperature", f.temperature}};
  if (!f.out.empty() && f.out != "-") write_side_manifest(f.out, "eval", cfg, {}, {file_name(f.out)});
  if (!f.logits_out.empty()) write_side_manifest(f.logits_out, "eval", cfg, {}, {file_name(f.logits_out)});
  return 0;
}

int cmd_calibrate(const std::string& dev_path, const std::string& test_path, std::size_t bins, const std::string& out) {
  const auto dev = cme::read_logits_csv(dev_path);
  const auto test = cme::read_logits_csv(test_path);
  const auto T = cme::fit_temperature(dev.logits, dev.labels, bins);
  Json j;
  j["T"] = T.value;
  j["dev_ece_before"] = T.dev_ece_at_one;
  j["dev_ece_after"] = T.dev_ece;
  j["test_ece_before"] = cme::ece_at_temperature(test.logits, test.labels, 1.0, bins);
  j["test_ece_after"] = cme::ece_at_temperature(test.logits, test.labels, T.value, bins);
  emit(j, out);
  if (!out.empty() && out != "-") {
    write_side_manifest(out, "calibrate", Json{{"dev_logits", dev_path}, {"test_logits", test_path}, {"bins", bins}}, {},
                        {file_name(out)});
  }
  return 0;
}

int cmd_attribute(const std::string& checkpoint, const std::string& data, const std::string& out,
                  const cme::AttributionOptions& opts, std::size_t batch_size) {
  const auto ck = cme::load_checkpoint(checkpoint);
  const auto examples = cme::read_jsonl(data);
  const std::size_t layer = cme::attribution_layer(ck.params.config(), opts.layer);
  cme::AttributionOptions o = opts;
  o.layer = layer;
  const auto enc = cme::encode(examples, ck.vocab, ck.params.config().max_len);
  std::ostringstream lines;
  for (const auto& batch : cme::sequential_batches(enc, batch_size)) {
    const auto fwd = cme::forward(ck.params, batch);
    std::vector<std::string> ids;
    for (std::size_t s : batch.sources) ids.push_back(examples[s].id);
    const auto attrs = cme::batch_attributions(fwd, batch, o, ids);
    for (std::size_t i = 0; i < batch.size; ++i) {
      Json tokens = Json::array();
      for (std::size_t p : attrs[i].positions) tokens.push_back(ck.vocab.token_at(batch.tokens(i)[p]));
      lines << Json{{"id", attrs[i].id}, {"tokens", tokens}, {"scores", attrs[i].scores}}.dump() << "\n";
    }
  }
  if (out.empty() || out == "-") {
    std::cout << lines.str();
  } else {
    cme::write_text(out, lines.str());
    write_side_manifest(out, "attribute",
                        Json{{"checkpoint", checkpoint}, {"data", data}, {"unscaled_attention", o.unscaled_attention},
                             {"use_logit", o.use_logit}, {"layer", layer}},
                        {}, {file_name(out)});
  }
  return 0;
}

int cmd_diagram(const EvalFlags& f, const std::string& prefix, const std::string& title) {
  std::vector<cme::PredictionRecord> records;
  if (!f.logits.empty()) {
    const auto t = cme::read_logits_csv(f.logits);
    records = cme::records_from_logits(t.ids, t.labels, t.logits, f.temperature);
  } else {
    if (f.checkpoint.empty() || f.data.empty()) throw cme::ConfigError("diagram needs --logits or --checkpoint with --data");
    const auto ck = cme::load_checkpoint(f.checkpoint);
    const auto examples = cme::read_jsonl(f.data);
    records = cme::evaluate(ck.params, ck.vocab, examples, f.bins, cme::Binning::EqualWidth, f.temperature).records;
  }
  const auto pts = cme::reliability_data(records, f.bins, binning_of(f.adaptive));
  const fs::path csv = prefix + ".csv", svg = prefix + ".svg";
  cme::write_text(csv, cme::reliability_csv(pts));
  cme::write_text(svg, cme::reliability_svg(pts, title.empty() ? "reliability" : title));
  write_side_manifest(prefix, "diagram",
                      Json{{"checkpoint", f.checkpoint}, {"data", f.data}, {"logits", f.logits}, {"bins", f.bins},
                           {"adaptive_bins", f.adaptive}, {"temperature", f.temperature}},
                      {}, {file_name(csv), file_name(svg)});
  std::cout << Json{{"ece", cme::ece(records, f.bins, binning_of(f.adaptive))}, {"csv", csv.string()}, {"svg", svg.string()}}.dump(2)
            << "\n";
  return 0;
}

void print_sweep(const cme::SweepResult& r) {
  for (const auto& c : r.cells) {
    std::fprintf(stderr, "%-7s %-18s lambda %-5g  dev ece %.4f  test ece %.4f±%.4f  acc %.4f±%.4f  od ece %.4f -> ts %.4f%s\n",
                 cme::to_string(c.mode), cme::to_string(c.variant), c.lambda, c.dev_ece.mean, c.test_ece.mean,
                 c.test_ece.std, c.test_accuracy.mean, c.test_accuracy.std, c.od_ece.mean, c.od_ts_ece.mean,
                 c.failures ? "  (failures)" : "");
  }
  for (const auto& s : r.selected) {
    std::fprintf(stderr, "selected %s/%s lambda %g\n", cme::to_string(s.mode), cme::to_string(s.variant), s.lambda);
  }
  for (const auto& run : r.runs) {
    if (!run.ok) std::fprintf(stderr, "run %s failed: %s\n", run.dir.c_str(), run.error.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explanation-regularized calibration: train, evaluate, and calibrate a small attention classifier"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", cme::build_id());

  // synth
  auto* synth = app.add_subcommand("synth", "Write the synthetic label-noise corpus as JSONL");
  std::string synth_out;
  std::size_t synth_n = 2000, synth_od = 200;
  double synth_noise = 0.2;
  std::uint64_t synth_seed = 7;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n", synth_n)->capture_default_str();
  synth->add_option("--noise", synth_noise, "Fraction of training labels flipped")->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--od-n", synth_od, "Size of the vocabulary-shifted split (0 = none)")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a model; prints the report as JSON");
  TrainFlags train_flags;
  std::string train_data, train_out;
  train->add_option("--data", train_data, "Directory with train.jsonl and dev.jsonl")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train_flags.add(*train);

  // eval
  auto* eval = app.add_subcommand("eval", "ECE/accuracy of a checkpoint on data, or of cached logits");
  EvalFlags eval_flags;
  eval->add_option("--checkpoint", eval_flags.checkpoint);
  eval->add_option("--data", eval_flags.data, "JSONL file");
  eval->add_option("--logits", eval_flags.logits, "Logits CSV instead of checkpoint + data");
  eval->add_option("--dev", eval_flags.dev, "Dev JSONL: evaluate --data as OD with a dev-fitted temperature");
  eval->add_option("--out", eval_flags.out, "Metrics JSON path (default stdout)");
  eval->add_option("--logits-out", eval_flags.logits_out, "Also write the logits CSV");
  eval->add_option("--bins", eval_flags.bins)->capture_default_str();
  eval->add_flag("--adaptive-bins", eval_flags.adaptive, "Equal-mass bins");
  eval->add_option("--temperature", eval_flags.temperature)->capture_default_str();

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "Fit a temperature on dev logits and apply it to test logits");
  std::string cal_dev, cal_test, cal_out;
  std::size_t cal_bins = 10;
  calibrate->add_option("--dev-logits", cal_dev)->required();
  calibrate->add_option("--test-logits", cal_test)->required();
  calibrate->add_option("--bins", cal_bins)->capture_default_str();
  calibrate->add_option("--out", cal_out, "JSON path (default stdout)");

  // attribute
  auto* attribute = app.add_subcommand("attribute", "Per-token attributions as JSONL {id, tokens, scores}");
  std::string attr_ckpt, attr_data, attr_out;
  cme::AttributionOptions attr_opts;
  std::optional<std::size_t> attr_layer;
  std::size_t attr_batch = 32;
  attribute->add_option("--checkpoint", attr_ckpt)->required();
  attribute->add_option("--data", attr_data, "JSONL file")->required();
  attribute->add_option("--out", attr_out, "JSONL path (default stdout)");
  attribute->add_option("--attr-layer", attr_layer);
  attribute->add_option("--batch-size", attr_batch)->capture_default_str();
  attribute->add_flag("--unscaled-attention", attr_opts.unscaled_attention);
  attribute->add_flag("--logit-gradient", attr_opts.use_logit);

  // diagram
  auto* diagram = app.add_subcommand("diagram", "Reliability diagram as CSV and SVG");
  EvalFlags diag_flags;
  std::string diag_prefix, diag_title;
  diagram->add_option("--checkpoint", diag_flags.checkpoint);
  diagram->add_option("--data", diag_flags.data);
  diagram->add_option("--logits", diag_flags.logits);
  diagram->add_option("--out", diag_prefix, "Output prefix; writes PREFIX.csv and PREFIX.svg")->required();
  diagram->add_option("--title", diag_title);
  diagram->add_option("--bins", diag_flags.bins)->capture_default_str();
  diagram->add_flag("--adaptive-bins", diag_flags.adaptive);
  diagram->add_option("--temperature", diag_flags.temperature)->capture_default_str();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Train/evaluate over seeds, modes and the lambda grid");
  TrainFlags sweep_flags;
  cme::SweepSpec spec;
  std::string sweep_out, sweep_manifest, sweep_data;
  std::vector<std::string> sweep_modes = {"mle", "cme"}, sweep_variants = {"default"};
  bool sweep_ablations = false;
  sweep->add_option("--out", sweep_out, "Output directory")->required();
  sweep->add_option("--manifest", sweep_manifest, "Replay a recorded sweep");
  sweep->add_option("--data", sweep_data, "Directory with train/dev/test(/od).jsonl (default: synthetic)");
  sweep->add_option("--seeds", spec.seeds)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->capture_default_str();
  sweep->add_option("--lambdas", spec.lambdas)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->capture_default_str();
  sweep->add_option("--modes", sweep_modes)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->capture_default_str();
  sweep->add_option("--variants", sweep_variants, "default, confidence-only, unscaled-attention")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->capture_default_str();
  sweep->add_flag("--ablations", sweep_ablations, "Add the confidence-only and unscaled-attention variants");
  sweep->add_option("--synth-n", spec.data.synth_n)->capture_default_str();
  sweep->add_option("--noise", spec.data.noise_rate)->capture_default_str();
  sweep->add_option("--data-seed", spec.data.data_seed)->capture_default_str();
  sweep->add_option("--od-n", spec.data.od_n)->capture_default_str();
  sweep_flags.add(*sweep);

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const cme::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_n, synth_noise, synth_seed, synth_od);
    if (*train) return cmd_train(train_flags, train_data, train_out);
    if (*eval) return cmd_eval(eval_flags);
    if (*calibrate) return cmd_calibrate(cal_dev, cal_test, cal_bins, cal_out);
    if (*attribute) {
      attr_opts.layer = attr_layer;
      return cmd_attribute(attr_ckpt, attr_data, attr_out, attr_opts, attr_batch);
    }
    if (*diagram) return cmd_diagram(diag_flags, diag_prefix, diag_title);
    if (*sweep) {
      cme::SweepResult r;
      if (!sweep_manifest.empty()) {
        r = cme::replay_sweep(cme::read_manifest(sweep_manifest), sweep_out);
      } else {
        spec.training = sweep_flags.resolve();
        spec.bins = spec.training.bins;
        spec.arch = sweep_flags.arch;
        if (!sweep_data.empty()) spec.data.dir = sweep_data;
        spec.modes.clear();
        for (const auto& m : sweep_modes) spec.modes.push_back(cme::parse_loss_mode(m));
        spec.variants.clear();
        for (const auto& v : sweep_variants) spec.variants.push_back(cme::parse_variant(v));
        if (sweep_ablations) {
          for (auto v : {cme::Variant::ConfidenceOnly, cme::Variant::UnscaledAttention}) {
            if (std::find(spec.variants.begin(), spec.variants.end(), v) == spec.variants.end()) spec.variants.push_back(v);
          }
        }
        r = cme::run_sweep_with_manifest(spec, sweep_out);
      }
      print_sweep(r);
      std::cout << cme::summary_json(r).dump(2) << "\n";
      return r.partial ? kExitPartial : 0;
    }
  } catch (const cme::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
