#pragma once

/**
 * The 49-configuration decoding grid (20 temperatures, 9 top-k values, 20
 * top-p values), batch execution across samples, and best-of selection
 * within each strategy group.
 *
 * Two selection modes with very different meanings:
 * - oracle_per_sample: a sample scores correct when any configuration in the
 *   group got it right. An upper bound that peeks at ground truth per
 *   sample; not a deployable decoder.
 * - fixed_config: the single configuration with the best aggregate accuracy,
 *   reported together with its identity. The honest counterpart.
 */

#include <atomic>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vdd/core.hpp"
#include "vdd/decoding.hpp"
#include "vdd/error.hpp"
#include "vdd/eval.hpp"
#include "vdd/logit_source.hpp"

namespace vdd {

inline constexpr std::string_view kGridFormat = "vdd-grid/1";
inline constexpr std::string_view kSweepSummaryFormat = "vdd-sweep-summary/1";

// Grid configurations take indices 0..48; the always-run greedy baseline
// sits outside the grid at this index.
inline constexpr std::size_t kDefaultConfigIndex = 49;

// ============================================================================
// Grid
// ============================================================================

/// Temperature and top-p values are stored as integer hundredths so the grid
/// is exact and serializes without float formatting questions.
struct ConfigGrid {
  std::vector<int> temperature_hundredths;
  std::vector<int> top_k_values;
  std::vector<int> top_p_hundredths;

  static ConfigGrid standard() {
    ConfigGrid g;
    for (int h = 5; h <= 100; h += 5) g.temperature_hundredths.push_back(h);
    g.top_k_values = {1, 2, 5, 10, 20, 50, 100, 200, 500};
    for (int h = 5; h <= 100; h += 5) g.top_p_hundredths.push_back(h);
    return g;
  }

  std::size_t total() const noexcept {
    return temperature_hundredths.size() + top_k_values.size() + top_p_hundredths.size();
  }
};

inline nlohmann::json grid_to_json(const ConfigGrid& grid) {
  nlohmann::json doc;
  doc["format"] = kGridFormat;
  doc["temperature_hundredths"] = grid.temperature_hundredths;
  doc["top_k"] = grid.top_k_values;
  doc["top_p_hundredths"] = grid.top_p_hundredths;
  return doc;
}

struct SweepConfigEntry {
  std::size_t config_index = 0;
  std::string group;  // "temp" | "top_k" | "top_p" | "default"
  std::string label;
  DecodingConfig config;
};

/// Materialize the grid on top of a base configuration: 49 entries that
/// differ from the base only in sampling strategy, indexed 0..48 in grid
/// order (temperatures, then top-k, then top-p).
inline std::vector<SweepConfigEntry> enumerate_configs(const DecodingConfig& base) {
  const ConfigGrid grid = ConfigGrid::standard();
  std::vector<SweepConfigEntry> entries;
  entries.reserve(grid.total());

  auto add = [&](std::string group, DecodingStrategy strategy) {
    SweepConfigEntry e;
    e.config_index = entries.size();
    e.group = std::move(group);
    e.config = base;
    e.config.strategy = strategy;
    e.config.config_index = e.config_index;
    e.label = strategy.label();
    entries.push_back(std::move(e));
  };

  for (int h : grid.temperature_hundredths)
    add("temp", DecodingStrategy::temperature(h / 100.0));
  for (int k : grid.top_k_values) add("top_k", DecodingStrategy::top_k(k));
  for (int h : grid.top_p_hundredths) add("top_p", DecodingStrategy::top_p(h / 100.0));
  return entries;
}

/// The greedy baseline that always runs alongside the grid.
inline SweepConfigEntry default_config_entry(const DecodingConfig& base) {
  SweepConfigEntry e;
  e.config_index = kDefaultConfigIndex;
  e.group = "default";
  e.config = base;
  e.config.strategy = DecodingStrategy::greedy();
  e.config.config_index = kDefaultConfigIndex;
  e.label = e.config.strategy.label();
  return e;
}

// ============================================================================
// Execution
// ============================================================================

struct SweepSample {
  Prompt prompt;
  std::string gold;
};

inline std::vector<SweepSample> sweep_samples_from_scenario(const ScenarioSource& source) {
  std::vector<SweepSample> out;
  for (const auto& s : source.spec().samples)
    out.push_back(SweepSample{Prompt(s.id, s.text, s.candidates), source.vocab().detokenize(s.gold)});
  return out;
}

struct SweepRecord {
  std::string sample_id;
  std::size_t config_index = 0;
  std::string group;
  std::string label;
  bool ok = true;
  std::string error;    // error code name when !ok
  std::string message;  // human-readable detail when !ok
  std::vector<TokenId> tokens;
  std::string text;
  bool correct = false;
  double confidence = 0.0;  // probability of the first emitted token under
                            // the distribution it was drawn from; 0 if none
};

struct SweepResult {
  // Sample-major: records[si * 49 + ci]. Error records keep their slot.
  std::vector<SweepRecord> records;
  std::vector<SweepRecord> default_records;  // one greedy baseline per sample
  std::size_t sample_count = 0;
};

namespace detail {

inline SweepRecord run_sweep_record(const LogitSource& source, const SweepSample& sample,
                                    const SweepConfigEntry& entry) {
  SweepRecord rec;
  rec.sample_id = sample.prompt.sample_id;
  rec.config_index = entry.config_index;
  rec.group = entry.group;
  rec.label = entry.label;
  try {
    GenerationResult gen =
        generate(source, sample.prompt, VisualContext::real(sample.prompt.sample_id), entry.config);
    rec.tokens = gen.tokens;
    rec.text = source.vocab().detokenize(gen.tokens);
    rec.correct = match_answer(rec.text, sample.gold);
    if (!gen.tokens.empty() && !gen.step_probs.empty())
      rec.confidence = gen.step_probs.front()[static_cast<std::size_t>(gen.tokens.front())];
  } catch (const Error& e) {
    rec.ok = false;
    rec.error = std::string(errc_name(e.code()));
    rec.message = e.what();
  }
  return rec;
}

}  // namespace detail

/**
 * Run every grid configuration plus the greedy baseline on every sample.
 * Tasks are independent; each one draws from the RNG sub-stream keyed by
 * (seed, sample_id, config_index), and results land in pre-assigned slots,
 * so output is identical for any parallelism level. Per-record failures are
 * captured in place and never abort the batch.
 */
inline SweepResult run_sweep(const LogitSource& source, const std::vector<SweepSample>& samples,
                             const DecodingConfig& base, unsigned parallelism = 1) {
  if (samples.empty()) raise(Errc::BadParam, "sweep needs at least one sample");
  base.validate();

  const std::vector<SweepConfigEntry> entries = enumerate_configs(base);
  const SweepConfigEntry baseline = default_config_entry(base);
  const std::size_t per = entries.size();

  SweepResult result;
  result.sample_count = samples.size();
  result.records.resize(samples.size() * per);
  result.default_records.resize(samples.size());

  const std::size_t stride = per + 1;
  const std::size_t task_count = samples.size() * stride;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= task_count) return;
      const std::size_t si = task / stride;
      const std::size_t ci = task % stride;
      if (ci < per)
        result.records[si * per + ci] = detail::run_sweep_record(source, samples[si], entries[ci]);
      else
        result.default_records[si] = detail::run_sweep_record(source, samples[si], baseline);
    }
  };

  if (parallelism <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const unsigned threads = std::min<std::size_t>(parallelism, task_count);
    pool.reserve(threads);
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return result;
}

// ============================================================================
// Selection
// ============================================================================

enum class Grouping { Temp, TopP, TopK, Overall };
enum class SelectionMode { OraclePerSample, FixedConfig };

inline std::string_view grouping_name(Grouping g) {
  switch (g) {
    case Grouping::Temp:    return "temp";
    case Grouping::TopP:    return "top_p";
    case Grouping::TopK:    return "top_k";
    case Grouping::Overall: return "overall";
  }
  return "?";
}

inline Grouping grouping_from_name(std::string_view s) {
  if (s == "temp")    return Grouping::Temp;
  if (s == "top_p")   return Grouping::TopP;
  if (s == "top_k")   return Grouping::TopK;
  if (s == "overall") return Grouping::Overall;
  raise(Errc::BadParam, "unknown grouping '" + std::string(s) + "'");
}

inline std::string_view selection_mode_name(SelectionMode m) {
  return m == SelectionMode::OraclePerSample ? "oracle" : "fixed";
}

inline SelectionMode selection_mode_from_name(std::string_view s) {
  if (s == "oracle") return SelectionMode::OraclePerSample;
  if (s == "fixed")  return SelectionMode::FixedConfig;
  raise(Errc::BadParam, "unknown selection mode '" + std::string(s) + "'");
}

inline bool grouping_contains(Grouping g, std::string_view record_group) {
  if (record_group == "default") return false;
  switch (g) {
    case Grouping::Overall: return true;
    case Grouping::Temp:    return record_group == "temp";
    case Grouping::TopP:    return record_group == "top_p";
    case Grouping::TopK:    return record_group == "top_k";
  }
  return false;
}

struct Selection {
  Grouping grouping = Grouping::Overall;
  SelectionMode mode = SelectionMode::OraclePerSample;
  double score = 0.0;
  std::optional<std::size_t> chosen_config;  // fixed mode only
  std::string chosen_label;
};

inline Selection select_best(const SweepResult& result, Grouping grouping, SelectionMode mode) {
  if (result.sample_count == 0 || result.records.empty())
    raise(Errc::BadParam, "selection needs a non-empty sweep result");
  const std::size_t n = result.sample_count;
  const std::size_t per = result.records.size() / n;

  Selection sel;
  sel.grouping = grouping;
  sel.mode = mode;

  if (mode == SelectionMode::OraclePerSample) {
    std::size_t hits = 0;
    for (std::size_t si = 0; si < n; ++si) {
      for (std::size_t ci = 0; ci < per; ++ci) {
        const SweepRecord& r = result.records[si * per + ci];
        if (grouping_contains(grouping, r.group) && r.ok && r.correct) {
          ++hits;
          break;
        }
      }
    }
    sel.score = static_cast<double>(hits) / static_cast<double>(n);
    return sel;
  }

  double best = -1.0;
  for (std::size_t ci = 0; ci < per; ++ci) {
    if (!grouping_contains(grouping, result.records[ci].group)) continue;
    std::size_t hits = 0;
    for (std::size_t si = 0; si < n; ++si) {
      const SweepRecord& r = result.records[si * per + ci];
      if (r.ok && r.correct) ++hits;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(n);
    if (acc > best) {  // strict: ties keep the lowest config index
      best = acc;
      sel.chosen_config = result.records[ci].config_index;
      sel.chosen_label = result.records[ci].label;
    }
  }
  if (!sel.chosen_config) raise(Errc::BadParam, "grouping matches no configurations");
  sel.score = best;
  return sel;
}

// ============================================================================
// Serialization
// ============================================================================

inline nlohmann::json sweep_record_json(const SweepRecord& r) {
  nlohmann::json out;
  out["sample"] = r.sample_id;
  out["config_index"] = r.config_index;
  out["group"] = r.group;
  out["label"] = r.label;
  out["ok"] = r.ok;
  if (r.ok) {
    out["tokens"] = r.tokens;
    out["text"] = r.text;
    out["correct"] = r.correct;
    out["confidence"] = round_for_output(r.confidence);
  } else {
    out["error"] = r.error;
    out["message"] = r.message;
  }
  return out;
}

/// JSON Lines, sample-major, grid order then the baseline, so bytes are a
/// pure function of the result.
inline void write_sweep_records(const SweepResult& result, std::ostream& out) {
  const std::size_t per = result.sample_count ? result.records.size() / result.sample_count : 0;
  for (std::size_t si = 0; si < result.sample_count; ++si) {
    for (std::size_t ci = 0; ci < per; ++ci)
      out << sweep_record_json(result.records[si * per + ci]).dump() << "\n";
    out << sweep_record_json(result.default_records[si]).dump() << "\n";
  }
}

inline nlohmann::json sweep_summary_json(const SweepResult& result, SelectionMode mode) {
  nlohmann::json doc;
  doc["format"] = kSweepSummaryFormat;
  doc["samples"] = result.sample_count;
  doc["mode"] = std::string(selection_mode_name(mode));

  nlohmann::json groups;
  nlohmann::json chosen;
  for (Grouping g : {Grouping::Temp, Grouping::TopP, Grouping::TopK, Grouping::Overall}) {
    Selection sel = select_best(result, g, mode);
    groups[std::string(grouping_name(g))] = round_for_output(sel.score);
    if (mode == SelectionMode::FixedConfig) {
      nlohmann::json c;
      c["config_index"] = *sel.chosen_config;
      c["label"] = sel.chosen_label;
      chosen[std::string(grouping_name(g))] = std::move(c);
    }
  }
  doc["groups"] = std::move(groups);
  doc["chosen_configs"] = mode == SelectionMode::FixedConfig ? std::move(chosen)
                                                             : nlohmann::json(nullptr);

  std::size_t hits = 0;
  for (const auto& r : result.default_records)
    if (r.ok && r.correct) ++hits;
  nlohmann::json deflt;
  deflt["label"] = "greedy";
  deflt["accuracy"] =
      round_for_output(static_cast<double>(hits) / static_cast<double>(result.sample_count));
  doc["default"] = std::move(deflt);
  return doc;
}

}  // namespace vdd
