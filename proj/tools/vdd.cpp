/**
 * vdd: batch driver over the library. Subcommands: probe, classify,
 * generate, sweep, eval, make-fixtures.
 *
 * Every run resolves a single effective configuration (flags override the
 * --config file; VDD_SEED is the seed fallback; built-in defaults last),
 * echoes it next to the results, and names result files deterministically
 * from a hash of that configuration plus the seed. Exit codes: 0 success,
 * 2 configuration error, 1 runtime error (partial results are left behind).
 */

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vdd/calibration.hpp"
#include "vdd/core.hpp"
#include "vdd/decoding.hpp"
#include "vdd/error.hpp"
#include "vdd/eval.hpp"
#include "vdd/fixtures.hpp"
#include "vdd/logit_source.hpp"
#include "vdd/sweep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vdd;

namespace {

constexpr std::string_view kRunFormat = "vdd-run/1";

// ----------------------------------------------------------------------------
// Flag storage
// ----------------------------------------------------------------------------

struct Flags {
  std::string config_path;
  std::string source;
  std::string output;
  std::uint64_t seed = 0;
  unsigned parallelism = 0;
  double alpha = 1.0;
  double beta = 0.1;
  double epsilon = kCalibrationEpsilon;
  std::string debias;
  std::string variants;
  std::string strategy;
  std::string mode;
  std::string positive_label;
  std::string records;
  std::string stop;
  int max_new_tokens = 16;
  std::size_t top_n = 15;
  std::size_t bins = 10;
  bool length_normalize = false;
  bool step_debug = false;
};

// ----------------------------------------------------------------------------
// Config handling
// ----------------------------------------------------------------------------

const std::set<std::string>& allowed_keys() {
  static const std::set<std::string> keys = {
      "format",      "task",           "source",        "seed",           "alpha",
      "beta",        "epsilon",        "debias",        "variants",       "strategy",
      "mode",        "positive_label", "records",       "stop_tokens",    "max_new_tokens",
      "top_n",       "bins",           "length_normalize", "step_debug",  "parallelism",
      "samples",     "output_dir"};
  return keys;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::IoError, "cannot open config file '" + path + "'");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) raise(Errc::ParseError, path + ": not valid JSON");
  if (!doc.is_object()) raise(Errc::BadConfig, path + ": config must be a JSON object");
  if (doc.value("format", std::string(kRunFormat)) != kRunFormat)
    raise(Errc::BadConfig, path + ": unsupported format '" + doc.value("format", "") + "'");
  for (const auto& [key, _] : doc.items())
    if (!allowed_keys().count(key))
      raise(Errc::BadConfig, path + ": unknown key '" + key + "'");
  if (doc.contains("source")) {
    if (!doc["source"].is_object()) raise(Errc::BadConfig, path + ": 'source' must be an object");
    static const std::set<std::string> source_keys = {"kind", "path", "vocab_size",
                                                      "prior_strength", "visual_strength",
                                                      "hash_seed"};
    for (const auto& [key, _] : doc["source"].items())
      if (!source_keys.count(key))
        raise(Errc::BadConfig, path + ": unknown key 'source." + key + "'");
  }
  return doc;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// The effective configuration for one run, after flag/file/env resolution.
struct RunSpec {
  std::string task;
  std::string source_kind;  // "scenario" | "trace" | "procedural"
  std::string source_path;
  ProceduralModelSpec procedural;
  std::uint64_t seed = 0;
  double alpha = 1.0;
  double beta = 0.1;
  double epsilon = kCalibrationEpsilon;
  std::string debias = "naive";
  std::vector<std::string> variant_names;
  std::string strategy = "greedy";
  std::string mode = "oracle";
  std::string positive_label;
  std::string records_path;
  std::vector<std::string> stop_tokens;
  int max_new_tokens = 16;
  std::size_t top_n = 15;
  std::size_t bins = 10;
  bool length_normalize = false;
  bool step_debug = false;
  unsigned parallelism = 0;
  json samples;  // array of {id, text, candidates, gold} or null
  std::string output_dir = ".";
};

std::uint64_t parse_env_seed(const char* text) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text, &end, 10);
  if (errno != 0 || end == text || *end != '\0')
    raise(Errc::BadConfig, std::string("VDD_SEED is not an unsigned integer: '") + text + "'");
  return v;
}

RunSpec resolve_run_spec(const CLI::App* active, const Flags& flags) {
  RunSpec spec;
  spec.task = active->get_name();

  json cfg = json::object();
  if (active->count("--config")) cfg = load_config_file(flags.config_path);
  if (cfg.contains("task") && cfg["task"].get<std::string>() != spec.task)
    raise(Errc::BadConfig, "config key 'task' is '" + cfg["task"].get<std::string>() +
                               "' but the subcommand is '" + spec.task + "'");

  auto has = [&](const char* name) { return active->get_option_no_throw(name) != nullptr; };
  auto passed = [&](const char* name) { return has(name) && active->count(name) > 0; };

  // seed: flag > config > VDD_SEED > 0
  if (passed("--seed")) {
    spec.seed = flags.seed;
  } else if (cfg.contains("seed")) {
    spec.seed = cfg["seed"].get<std::uint64_t>();
  } else if (const char* env = std::getenv("VDD_SEED")) {
    spec.seed = parse_env_seed(env);
  }

  auto pick_double = [&](const char* flag, const char* key, double flag_value, double fallback) {
    if (passed(flag)) return flag_value;
    if (cfg.contains(key)) return cfg[key].get<double>();
    return fallback;
  };
  auto pick_string = [&](const char* flag, const char* key, const std::string& flag_value,
                         const std::string& fallback) {
    if (passed(flag)) return flag_value;
    if (cfg.contains(key)) return cfg[key].get<std::string>();
    return fallback;
  };

  spec.alpha = pick_double("--alpha", "alpha", flags.alpha, 1.0);
  spec.beta = pick_double("--beta", "beta", flags.beta, 0.1);
  spec.epsilon = pick_double("--epsilon", "epsilon", flags.epsilon, kCalibrationEpsilon);
  spec.strategy = pick_string("--strategy", "strategy", flags.strategy, "greedy");
  spec.mode = pick_string("--mode", "mode", flags.mode, "oracle");
  spec.positive_label =
      pick_string("--positive-label", "positive_label", flags.positive_label, "");
  spec.records_path = pick_string("--records", "records", flags.records, "");
  spec.output_dir = pick_string("--output", "output_dir", flags.output, ".");

  const std::string default_debias = spec.task == "classify" ? "none,unk" : "naive";
  spec.debias = pick_string("--debias", "debias", flags.debias, default_debias);

  std::string variants =
      pick_string("--variants", "variants", flags.variants, spec.task == "probe" ? "none,unk" : "");
  spec.variant_names = split_list(spec.task == "classify" ? spec.debias : variants);

  if (passed("--max-new-tokens")) spec.max_new_tokens = flags.max_new_tokens;
  else if (cfg.contains("max_new_tokens")) spec.max_new_tokens = cfg["max_new_tokens"].get<int>();

  if (passed("--top-n")) spec.top_n = flags.top_n;
  else if (cfg.contains("top_n")) spec.top_n = cfg["top_n"].get<std::size_t>();

  if (passed("--bins")) spec.bins = flags.bins;
  else if (cfg.contains("bins")) spec.bins = cfg["bins"].get<std::size_t>();

  if (passed("--length-normalize")) spec.length_normalize = flags.length_normalize;
  else if (cfg.contains("length_normalize")) spec.length_normalize = cfg["length_normalize"].get<bool>();

  if (passed("--step-debug")) spec.step_debug = flags.step_debug;
  else if (cfg.contains("step_debug")) spec.step_debug = cfg["step_debug"].get<bool>();

  if (passed("--parallelism")) spec.parallelism = flags.parallelism;
  else if (cfg.contains("parallelism")) spec.parallelism = cfg["parallelism"].get<unsigned>();
  if (spec.parallelism == 0) spec.parallelism = std::max(1u, std::thread::hardware_concurrency());

  if (passed("--stop")) spec.stop_tokens = split_list(flags.stop);
  else if (cfg.contains("stop_tokens"))
    spec.stop_tokens = cfg["stop_tokens"].get<std::vector<std::string>>();

  // source: flag "kind:path" > config object
  if (passed("--source")) {
    const std::string& s = flags.source;
    const auto colon = s.find(':');
    if (s == "procedural") {
      spec.source_kind = "procedural";
    } else if (colon != std::string::npos) {
      spec.source_kind = s.substr(0, colon);
      spec.source_path = s.substr(colon + 1);
    }
    if (spec.source_kind != "scenario" && spec.source_kind != "trace" &&
        spec.source_kind != "procedural")
      raise(Errc::BadConfig, "--source must be scenario:PATH, trace:PATH, or procedural");
  } else if (cfg.contains("source")) {
    const json& src = cfg["source"];
    spec.source_kind = src.value("kind", "");
    spec.source_path = src.value("path", "");
    if (spec.source_kind == "procedural") {
      spec.procedural.vocab_size = src.value("vocab_size", std::size_t{16});
      spec.procedural.prior_strength = src.value("prior_strength", 1.0);
      spec.procedural.visual_strength = src.value("visual_strength", 1.0);
      spec.procedural.hash_seed = src.value("hash_seed", std::uint64_t{0});
    } else if (spec.source_kind != "scenario" && spec.source_kind != "trace") {
      raise(Errc::BadConfig, "source.kind must be scenario, trace, or procedural");
    }
    if (spec.source_kind != "procedural" && spec.source_path.empty())
      raise(Errc::BadConfig, "source.path is required for '" + spec.source_kind + "' sources");
  } else if (spec.task != "eval" && spec.task != "make-fixtures") {
    raise(Errc::BadConfig, "no source given; pass --source or a config with a 'source' key");
  }

  if (cfg.contains("samples")) {
    if (!cfg["samples"].is_array()) raise(Errc::BadConfig, "'samples' must be an array");
    spec.samples = cfg["samples"];
  }

  if (spec.task == "eval" && spec.records_path.empty())
    raise(Errc::BadConfig, "eval needs --records or a config 'records' key");
  return spec;
}

// The run's canonical self-description; rerunning `TASK --config <echo>` is
// the reproduction path.
json run_spec_echo(const RunSpec& spec) {
  json doc;
  doc["format"] = kRunFormat;
  doc["task"] = spec.task;
  json src;
  src["kind"] = spec.source_kind;
  if (spec.source_kind == "procedural") {
    src["vocab_size"] = spec.procedural.vocab_size;
    src["prior_strength"] = spec.procedural.prior_strength;
    src["visual_strength"] = spec.procedural.visual_strength;
    src["hash_seed"] = spec.procedural.hash_seed;
  } else if (!spec.source_kind.empty()) {
    src["path"] = spec.source_path;
  }
  doc["source"] = std::move(src);
  doc["seed"] = spec.seed;
  doc["alpha"] = spec.alpha;
  doc["beta"] = spec.beta;
  doc["epsilon"] = spec.epsilon;
  doc["debias"] = spec.debias;
  json variants = json::array();
  for (const auto& v : spec.variant_names) variants.push_back(v);
  doc["variants"] = std::move(variants);
  doc["strategy"] = spec.strategy;
  doc["mode"] = spec.mode;
  doc["positive_label"] = spec.positive_label;
  if (!spec.records_path.empty()) doc["records"] = spec.records_path;
  doc["stop_tokens"] = spec.stop_tokens;
  doc["max_new_tokens"] = spec.max_new_tokens;
  doc["top_n"] = spec.top_n;
  doc["bins"] = spec.bins;
  doc["length_normalize"] = spec.length_normalize;
  doc["step_debug"] = spec.step_debug;
  doc["parallelism"] = spec.parallelism;
  if (!spec.samples.is_null()) doc["samples"] = spec.samples;
  doc["output_dir"] = spec.output_dir;
  return doc;
}

/// Result-file stem: task, a 16-hex-digit hash of the configuration, the
/// seed. The hash ignores where outputs land and reduces the source path to
/// its filename, so the same logical run keeps its names anywhere.
std::string output_stem(const RunSpec& spec) {
  json hashed = run_spec_echo(spec);
  hashed.erase("output_dir");
  if (hashed["source"].contains("path"))
    hashed["source"]["path"] = fs::path(spec.source_path).filename().string();
  Fnv1a h;
  h.update_str(hashed.dump());
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h.digest()));
  return spec.task + "_" + buf + "_seed" + std::to_string(spec.seed);
}

// ----------------------------------------------------------------------------
// Sources and samples
// ----------------------------------------------------------------------------

std::unique_ptr<LogitSource> open_source(const RunSpec& spec) {
  try {
    if (spec.source_kind == "scenario")
      return std::make_unique<ScenarioSource>(load_scenario(spec.source_path));
    if (spec.source_kind == "trace")
      return std::make_unique<TraceSource>(load_trace(spec.source_path));
    return std::make_unique<ProceduralSource>(spec.procedural);
  } catch (const Error& e) {
    // An input that cannot be opened means the config referenced a path that
    // does not resolve, which is a configuration error by contract.
    if (e.code() == Errc::IoError) raise(Errc::BadConfig, e.what());
    throw;
  }
}

struct CliSample {
  Prompt prompt;
  std::string gold_text;  // empty when the sample provides none
};

std::vector<TokenId> token_ids(const Vocabulary& vocab, const json& arr, const std::string& where) {
  std::vector<TokenId> out;
  for (const auto& t : arr) {
    if (!t.is_string()) raise(Errc::BadConfig, where + ": token entries must be strings");
    auto id = vocab.find(t.get<std::string>());
    if (!id)
      raise(Errc::BadConfig, where + ": token '" + t.get<std::string>() + "' is not in the vocabulary");
    out.push_back(*id);
  }
  return out;
}

std::vector<CliSample> build_samples(const LogitSource& source, const RunSpec& spec,
                                     bool need_gold) {
  std::vector<CliSample> out;
  if (const auto* scenario = dynamic_cast<const ScenarioSource*>(&source);
      scenario && spec.samples.is_null()) {
    for (const auto& s : scenario->spec().samples)
      out.push_back({Prompt(s.id, s.text, s.candidates),
                     s.gold.empty() ? std::string() : source.vocab().detokenize(s.gold)});
  } else {
    if (!spec.samples.is_array() || spec.samples.empty())
      raise(Errc::BadConfig, "this source needs a non-empty 'samples' array in the config");
    const Vocabulary& vocab = source.vocab();
    for (const auto& js : spec.samples) {
      const std::string id = js.value("id", "");
      if (id.empty()) raise(Errc::BadConfig, "samples: every entry needs an 'id'");
      const std::string where = "samples['" + id + "']";
      for (const auto& [key, _] : js.items())
        if (key != "id" && key != "text" && key != "candidates" && key != "gold")
          raise(Errc::BadConfig, where + ": unknown key '" + key + "'");
      if (!js.contains("text")) raise(Errc::BadConfig, where + ": missing 'text'");
      std::vector<TokenId> text = token_ids(vocab, js["text"], where + ".text");
      std::vector<std::vector<TokenId>> candidates;
      for (const auto& c : js.value("candidates", json::array()))
        candidates.push_back(token_ids(vocab, c, where + ".candidates"));
      std::string gold_text;
      if (js.contains("gold"))
        gold_text = vocab.detokenize(token_ids(vocab, js["gold"], where + ".gold"));
      out.push_back({Prompt(id, std::move(text), std::move(candidates)), std::move(gold_text)});
    }
  }
  if (out.empty()) raise(Errc::BadConfig, "the source provides no samples");
  if (need_gold)
    for (const auto& s : out)
      if (s.gold_text.empty())
        raise(Errc::BadConfig, "sample '" + s.prompt.sample_id + "' has no gold answer");
  return out;
}

std::vector<VisualContext> make_variant_contexts(const std::vector<std::string>& names,
                                                 std::uint64_t seed) {
  if (names.empty()) raise(Errc::BadConfig, "need at least one degenerate variant");
  std::vector<VisualContext> out;
  for (const auto& name : names) {
    auto v = variant_from_tag(name);
    if (!v || *v == Variant::Real)
      raise(Errc::BadConfig, "'" + name + "' is not a degenerate variant (use none, unk, noise, zeros, ones)");
    out.push_back(*v == Variant::Noise ? VisualContext::noise(seed) : [&] {
      VisualContext ctx;
      ctx.variant = *v;
      return ctx;
    }());
  }
  return out;
}

DecodingConfig decoding_config(const RunSpec& spec, const Vocabulary& vocab) {
  DecodingConfig config;
  const std::string& s = spec.strategy;
  if (s == "greedy") {
    config.strategy = DecodingStrategy::greedy();
  } else if (s.rfind("temp=", 0) == 0) {
    config.strategy = DecodingStrategy::temperature(std::stod(s.substr(5)));
  } else if (s.rfind("top_k=", 0) == 0) {
    config.strategy = DecodingStrategy::top_k(std::stoi(s.substr(6)));
  } else if (s.rfind("top_p=", 0) == 0) {
    config.strategy = DecodingStrategy::top_p(std::stod(s.substr(6)));
  } else {
    raise(Errc::BadConfig, "unknown strategy '" + s + "' (greedy, temp=T, top_k=K, top_p=P)");
  }
  auto mode = debias_mode_from_name(spec.debias);
  if (!mode)
    raise(Errc::BadConfig, "unknown debias mode '" + spec.debias +
                               "' (naive, vdd-none, vdd-unk, vdd-both)");
  config.debias = *mode;
  config.alpha = spec.alpha;
  config.beta = spec.beta;
  config.max_new_tokens = spec.max_new_tokens;
  config.seed = spec.seed;
  for (const auto& t : spec.stop_tokens) {
    auto id = vocab.find(t);
    if (!id) raise(Errc::BadConfig, "stop token '" + t + "' is not in the vocabulary");
    config.stop_tokens.insert(*id);
  }
  config.validate();
  return config;
}

// ----------------------------------------------------------------------------
// Output plumbing
// ----------------------------------------------------------------------------

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::IoError, "cannot write '" + path.string() + "'");
  return out;
}

fs::path write_echo(const RunSpec& spec, const std::string& stem) {
  fs::create_directories(spec.output_dir);
  fs::path path = fs::path(spec.output_dir) / (stem + "_config.json");
  open_output(path) << run_spec_echo(spec).dump(1) << "\n";
  return path;
}

json metrics_to_json(const MetricReport& m) {
  json out;
  out["positive_label"] = m.positive_label;
  out["accuracy"] = round_for_output(m.accuracy);
  out["precision"] = round_for_output(m.precision);
  out["recall"] = round_for_output(m.recall);
  out["f1"] = round_for_output(m.f1);
  out["tp"] = m.tp;
  out["fp"] = m.fp;
  out["fn"] = m.fn;
  out["tn"] = m.tn;
  out["zero_denominator"] = m.zero_denominator;
  return out;
}

/// Full metrics when the label space is binary, accuracy only otherwise.
json metrics_or_accuracy(const std::vector<EvalRecord>& records, const std::string& positive) {
  std::string label = positive;
  if (label.empty()) {
    std::set<std::string> labels;
    for (const auto& r : records) labels.insert(normalize_answer(r.gold));
    label = labels.count("yes") ? "yes" : *labels.begin();
  }
  try {
    return metrics_to_json(classification_metrics(records, label));
  } catch (const Error& e) {
    if (e.code() != Errc::NotBinary) throw;
    json out;
    out["accuracy"] = round_for_output(overall_accuracy(records));
    out["note"] = "label space is not binary; precision and recall omitted";
    return out;
  }
}

// ----------------------------------------------------------------------------
// Tasks
// ----------------------------------------------------------------------------

int run_classify(const RunSpec& spec) {
  auto source = open_source(spec);
  const auto samples = build_samples(*source, spec, true);
  const auto contexts = make_variant_contexts(spec.variant_names, spec.seed);
  const ScoreOptions opts{spec.length_normalize};

  const std::string stem = output_stem(spec);
  write_echo(spec, stem);
  fs::path records_path = fs::path(spec.output_dir) / (stem + "_records.jsonl");
  auto records_out = open_output(records_path);

  std::vector<EvalRecord> naive_records, debiased_records;
  std::size_t no_evidence = 0;
  for (const auto& s : samples) {
    ClassifyResult res =
        classify_debiased(*source, s.prompt, VisualContext::real(s.prompt.sample_id), contexts,
                          spec.epsilon, opts);
    const std::size_t naive_label = argmax_lowest(res.naive);
    const std::string naive_text =
        source->vocab().detokenize(s.prompt.candidate_labels[naive_label]);
    const std::string debiased_text =
        source->vocab().detokenize(s.prompt.candidate_labels[res.label]);
    naive_records.push_back(make_eval_record(s.prompt.sample_id, naive_text, s.gold_text,
                                             res.naive[naive_label]));
    debiased_records.push_back(make_eval_record(s.prompt.sample_id, debiased_text, s.gold_text,
                                                res.debiased[res.label]));
    if (res.no_evidence) ++no_evidence;

    json line;
    line["sample"] = s.prompt.sample_id;
    line["gold"] = s.gold_text;
    line["no_evidence"] = res.no_evidence;
    json naive;
    naive["label"] = naive_label;
    naive["text"] = naive_text;
    naive["correct"] = naive_records.back().correct;
    naive["confidence"] = round_for_output(naive_records.back().confidence);
    line["naive"] = std::move(naive);
    json debiased;
    debiased["label"] = res.label;
    debiased["text"] = debiased_text;
    debiased["correct"] = debiased_records.back().correct;
    debiased["confidence"] = round_for_output(debiased_records.back().confidence);
    line["debiased"] = std::move(debiased);
    records_out << line.dump() << "\n";
  }

  json summary;
  summary["format"] = "vdd-classify-summary/1";
  summary["samples"] = samples.size();
  summary["variants"] = spec.variant_names;
  summary["epsilon"] = spec.epsilon;
  summary["naive"] = metrics_or_accuracy(naive_records, spec.positive_label);
  summary["debiased"] = metrics_or_accuracy(debiased_records, spec.positive_label);
  summary["no_evidence_count"] = no_evidence;
  json bins;
  bins["naive"] = bins_to_json(confidence_bins(naive_records, spec.bins));
  bins["debiased"] = bins_to_json(confidence_bins(debiased_records, spec.bins));
  summary["bins"] = std::move(bins);

  fs::path summary_path = fs::path(spec.output_dir) / (stem + "_summary.json");
  open_output(summary_path) << summary.dump(1) << "\n";

  std::cout << "classify: " << samples.size() << " samples, naive "
            << format_double(overall_accuracy(naive_records)) << ", debiased "
            << format_double(overall_accuracy(debiased_records)) << " -> " << summary_path.string()
            << "\n";
  return 0;
}

int run_probe(const RunSpec& spec) {
  auto source = open_source(spec);
  const auto samples = build_samples(*source, spec, false);
  const auto contexts = make_variant_contexts(spec.variant_names, spec.seed);
  std::vector<Prompt> prompts;
  prompts.reserve(samples.size());
  for (const auto& s : samples) prompts.push_back(s.prompt);

  ProbeReport report =
      probe_report(*source, prompts, contexts, spec.top_n, ScoreOptions{spec.length_normalize});

  const std::string stem = output_stem(spec);
  write_echo(spec, stem);
  fs::path tsv_path = fs::path(spec.output_dir) / (stem + "_probe.tsv");
  {
    auto out = open_output(tsv_path);
    write_probe_tsv(report, out);
  }

  json summary;
  summary["format"] = "vdd-probe-summary/1";
  summary["prompts"] = report.prompt_count;
  summary["variants"] = spec.variant_names;
  summary["top_n"] = report.top_n;
  summary["rows"] = report.rows.size();
  fs::path summary_path = fs::path(spec.output_dir) / (stem + "_summary.json");
  open_output(summary_path) << summary.dump(1) << "\n";

  std::cout << "probe: " << report.prompt_count << " prompts, " << spec.variant_names.size()
            << " variants, top " << report.top_n << " -> " << tsv_path.string() << "\n";
  return 0;
}

int run_generate(const RunSpec& spec) {
  auto source = open_source(spec);
  const auto samples = build_samples(*source, spec, false);
  DecodingConfig config = decoding_config(spec, source->vocab());

  const std::string stem = output_stem(spec);
  write_echo(spec, stem);
  fs::path records_path = fs::path(spec.output_dir) / (stem + "_generations.jsonl");
  auto records_out = open_output(records_path);

  std::size_t total_tokens = 0;
  for (const auto& s : samples) {
    GenerationResult gen =
        generate(*source, s.prompt, VisualContext::real(s.prompt.sample_id), config);
    total_tokens += gen.tokens.size();
    json line;
    line["sample"] = s.prompt.sample_id;
    line["tokens"] = gen.tokens;
    line["text"] = source->vocab().detokenize(gen.tokens);
    if (spec.step_debug) {
      json steps = json::array();
      for (const auto& st : gen.steps) {
        json js;
        js["step"] = st.step;
        js["head_size"] = st.head_size;
        js["threshold"] = round_for_output(st.threshold);
        js["contrast_argmax"] = st.contrast_argmax;
        js["chosen"] = st.chosen;
        steps.push_back(std::move(js));
      }
      line["steps"] = std::move(steps);
    }
    records_out << line.dump() << "\n";
  }

  json summary;
  summary["format"] = "vdd-generate-summary/1";
  summary["samples"] = samples.size();
  summary["total_tokens"] = total_tokens;
  summary["strategy"] = spec.strategy;
  summary["debias"] = spec.debias;
  fs::path summary_path = fs::path(spec.output_dir) / (stem + "_summary.json");
  open_output(summary_path) << summary.dump(1) << "\n";

  std::cout << "generate: " << samples.size() << " samples, " << total_tokens << " tokens -> "
            << records_path.string() << "\n";
  return 0;
}

int run_sweep_task(const RunSpec& spec) {
  auto source = open_source(spec);
  const auto cli_samples = build_samples(*source, spec, true);
  std::vector<SweepSample> samples;
  samples.reserve(cli_samples.size());
  for (const auto& s : cli_samples) samples.push_back({s.prompt, s.gold_text});

  DecodingConfig base = decoding_config(spec, source->vocab());
  const SelectionMode mode = selection_mode_from_name(spec.mode);

  SweepResult result = run_sweep(*source, samples, base, spec.parallelism);

  const std::string stem = output_stem(spec);
  write_echo(spec, stem);
  fs::path records_path = fs::path(spec.output_dir) / (stem + "_records.jsonl");
  {
    auto out = open_output(records_path);
    write_sweep_records(result, out);
  }
  json summary = sweep_summary_json(result, mode);
  fs::path summary_path = fs::path(spec.output_dir) / (stem + "_summary.json");
  open_output(summary_path) << summary.dump(1) << "\n";

  Selection overall = select_best(result, Grouping::Overall, mode);
  std::cout << "sweep: " << samples.size() << " samples x " << ConfigGrid::standard().total()
            << " configs, overall " << std::string(selection_mode_name(mode)) << " "
            << format_double(overall.score) << " -> " << summary_path.string() << "\n";
  return 0;
}

int run_eval(const RunSpec& spec) {
  std::ifstream in(spec.records_path);
  if (!in) raise(Errc::BadConfig, "cannot open records file '" + spec.records_path + "'");
  std::vector<EvalRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    const std::string where = spec.records_path + ":" + std::to_string(line_no);
    if (rec.is_discarded() || !rec.is_object())
      raise(Errc::ParseError, where + ": malformed record");
    for (const char* key : {"sample", "predicted", "gold"})
      if (!rec.contains(key) || !rec[key].is_string())
        raise(Errc::ParseError, where + ": missing string field '" + key + "'");
    if (!rec.contains("confidence") || !rec["confidence"].is_number())
      raise(Errc::ParseError, where + ": missing numeric field 'confidence'");
    records.push_back(make_eval_record(rec["sample"], rec["predicted"], rec["gold"],
                                       rec["confidence"].get<double>()));
  }
  if (records.empty()) raise(Errc::BadParam, spec.records_path + ": no records");

  const auto bins = confidence_bins(records, spec.bins);
  json summary;
  summary["format"] = "vdd-eval-summary/1";
  summary["records"] = records.size();
  summary["accuracy"] = round_for_output(overall_accuracy(records));
  summary["metrics"] = metrics_or_accuracy(records, spec.positive_label);
  summary["bins"] = bins_to_json(bins);

  const std::string stem = output_stem(spec);
  write_echo(spec, stem);
  fs::path summary_path = fs::path(spec.output_dir) / (stem + "_summary.json");
  open_output(summary_path) << summary.dump(1) << "\n";
  fs::path bins_path = fs::path(spec.output_dir) / (stem + "_bins.csv");
  {
    auto out = open_output(bins_path);
    write_bins_csv(bins, out);
  }

  std::cout << "eval: " << records.size() << " records, accuracy "
            << format_double(overall_accuracy(records)) << " -> " << summary_path.string() << "\n";
  return 0;
}

int run_make_fixtures(const std::string& output_dir, std::uint64_t seed) {
  fs::create_directories(output_dir);
  const fs::path dir(output_dir);

  write_trace(make_golden_trace(seed), (dir / "golden_trace.jsonl").string());
  save_scenario(make_prior_vs_evidence_suite(seed), (dir / "prior_vs_evidence.json").string());
  save_scenario(make_sweep_suite(seed), (dir / "sweep_suite.json").string());
  open_output(dir / "config_grid.json") << grid_to_json(ConfigGrid::standard()).dump(1) << "\n";

  std::cout << "fixtures: 4 files (seed " << seed << ") -> " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoding and calibration toolkit for language-prior debiasing"};
  app.require_subcommand(1);
  Flags flags;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config_path, "JSON run config; flags override its values");
    sub->add_option("--source", flags.source, "scenario:PATH, trace:PATH, or procedural");
    sub->add_option("--output", flags.output, "output directory (default .)");
    sub->add_option("--seed", flags.seed, "global seed (fallback: config, then VDD_SEED)");
    sub->add_option("--parallelism", flags.parallelism, "worker threads (default: core count)");
    return sub;
  };

  auto* probe = add_common(app.add_subcommand("probe", "Rank answers under degenerate contexts"));
  probe->add_option("--variants", flags.variants, "comma list: none,unk,noise,zeros,ones");
  probe->add_option("--top-n", flags.top_n, "rows per variant (default 15)");
  probe->add_flag("--length-normalize", flags.length_normalize, "length-normalize candidate scores");

  auto* classify =
      add_common(app.add_subcommand("classify", "Score candidates naively and prior-corrected"));
  classify->add_option("--debias", flags.debias, "prior variants, comma list (default none,unk)");
  classify->add_option("--epsilon", flags.epsilon, "prior clamp (default 1e-8)");
  classify->add_option("--bins", flags.bins, "confidence bins (default 10)");
  classify->add_option("--positive-label", flags.positive_label, "positive label for P/R/F1");
  classify->add_flag("--length-normalize", flags.length_normalize, "length-normalize candidate scores");

  auto* generate = add_common(app.add_subcommand("generate", "Autoregressive decoding"));
  generate->add_option("--debias", flags.debias, "naive, vdd-none, vdd-unk, or vdd-both");
  generate->add_option("--alpha", flags.alpha, "contrast strength (default 1)");
  generate->add_option("--beta", flags.beta, "plausibility cutoff (default 0.1)");
  generate->add_option("--strategy", flags.strategy, "greedy, temp=T, top_k=K, or top_p=P");
  generate->add_option("--max-new-tokens", flags.max_new_tokens, "generation budget (default 16)");
  generate->add_option("--stop", flags.stop, "stop tokens, comma list");
  generate->add_flag("--step-debug", flags.step_debug, "emit per-step decoding details");

  auto* sweep = add_common(app.add_subcommand("sweep", "Run the 49-configuration grid"));
  sweep->add_option("--debias", flags.debias, "naive, vdd-none, vdd-unk, or vdd-both");
  sweep->add_option("--alpha", flags.alpha, "contrast strength (default 1)");
  sweep->add_option("--beta", flags.beta, "plausibility cutoff (default 0.1)");
  sweep->add_option("--max-new-tokens", flags.max_new_tokens, "generation budget (default 16)");
  sweep->add_option("--stop", flags.stop, "stop tokens, comma list");
  sweep->add_option("--mode", flags.mode, "best-of selection: oracle or fixed (default oracle)");

  auto* eval = add_common(app.add_subcommand("eval", "Aggregate a records file"));
  eval->add_option("--records", flags.records, "JSON Lines of {sample, predicted, gold, confidence}");
  eval->add_option("--bins", flags.bins, "confidence bins (default 10)");
  eval->add_option("--positive-label", flags.positive_label, "positive label for P/R/F1");

  auto* fixtures = app.add_subcommand("make-fixtures", "Write the golden corpora");
  fixtures->add_option("--output", flags.output, "output directory (default .)");
  fixtures->add_option("--seed", flags.seed, "fixture seed (default 0; fallback VDD_SEED)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const CLI::App* active = app.get_subcommands().front();

  if (active == fixtures) {
    std::uint64_t seed = flags.seed;
    try {
      if (!fixtures->count("--seed")) {
        if (const char* env = std::getenv("VDD_SEED")) seed = parse_env_seed(env);
      }
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
    try {
      return run_make_fixtures(flags.output, seed);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  RunSpec spec;
  try {
    spec = resolve_run_spec(active, flags);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  }

  try {
    if (spec.task == "classify") return run_classify(spec);
    if (spec.task == "probe") return run_probe(spec);
    if (spec.task == "generate") return run_generate(spec);
    if (spec.task == "sweep") return run_sweep_task(spec);
    if (spec.task == "eval") return run_eval(spec);
    std::cerr << "error: unknown task '" << spec.task << "'\n";
    return 2;
  } catch (const Error& e) {
    // Configuration-shaped problems discovered while opening inputs still
    // count as config errors.
    const bool config_error = e.code() == Errc::BadConfig || e.code() == Errc::ParseError;
    std::cerr << "error: " << e.what() << "\n";
    return config_error ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
