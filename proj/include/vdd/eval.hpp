#pragma once

/**
 * Evaluation utilities: one-word answer matching, binary classification
 * metrics, confidence-binned accuracy, and the degenerate-context answer
 * probe that exposes what a source prefers when the image carries no
 * information.
 */

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vdd/calibration.hpp"
#include "vdd/core.hpp"
#include "vdd/error.hpp"
#include "vdd/logit_source.hpp"

namespace vdd {

// ============================================================================
// Answer matching
// ============================================================================

/// Case-fold (ASCII), trim surrounding whitespace, strip trailing
/// punctuation. Non-ASCII bytes pass through untouched.
inline std::string normalize_answer(std::string_view s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  auto is_punct = [](unsigned char c) { return std::ispunct(c) != 0; };
  while (begin < end && is_space(s[begin])) ++begin;
  while (end > begin && (is_space(s[end - 1]) || is_punct(s[end - 1]))) --end;
  std::string out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i)
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
  return out;
}

inline bool match_answer(std::string_view predicted, std::string_view gold) {
  return normalize_answer(predicted) == normalize_answer(gold);
}

// ============================================================================
// Records and metrics
// ============================================================================

struct EvalRecord {
  std::string sample_id;
  std::string predicted;
  std::string gold;
  double confidence = 0.0;
  bool correct = false;
};

inline EvalRecord make_eval_record(std::string sample_id, std::string predicted, std::string gold,
                                   double confidence) {
  if (!(confidence >= 0.0 && confidence <= 1.0))
    raise(Errc::BadParam, "confidence must lie in [0, 1]");
  const bool correct = match_answer(predicted, gold);
  return EvalRecord{std::move(sample_id), std::move(predicted), std::move(gold), confidence,
                    correct};
}

inline double overall_accuracy(const std::vector<EvalRecord>& records) {
  if (records.empty()) raise(Errc::BadParam, "accuracy needs at least one record");
  std::size_t correct = 0;
  for (const auto& r : records) correct += r.correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

/// Harmonic mean of precision and recall; 0 when both are 0. Scale-free, so
/// it works on [0,1] values and on percent values alike.
inline double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  if (!(denom > 0.0)) return 0.0;
  return 2.0 * precision * recall / denom;
}

struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::string positive_label;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  // A zero-count denominator was replaced by 0 somewhere above.
  bool zero_denominator = false;
};

/**
 * Confusion-matrix metrics over a binary label space. Labels are compared
 * after normalize_answer. More than two distinct labels across gold and
 * predictions is an error; zero denominators yield 0 with a warning flag
 * rather than NaN.
 */
inline MetricReport classification_metrics(const std::vector<EvalRecord>& records,
                                           std::string_view positive_label) {
  if (records.empty()) raise(Errc::BadParam, "metrics need at least one record");

  std::set<std::string> labels;
  for (const auto& r : records) {
    labels.insert(normalize_answer(r.gold));
    labels.insert(normalize_answer(r.predicted));
  }
  if (labels.size() > 2)
    raise(Errc::NotBinary, "label space has " + std::to_string(labels.size()) +
                               " distinct labels; precision and recall need a binary task");

  MetricReport rep;
  rep.positive_label = normalize_answer(positive_label);
  for (const auto& r : records) {
    const bool pred_pos = normalize_answer(r.predicted) == rep.positive_label;
    const bool gold_pos = normalize_answer(r.gold) == rep.positive_label;
    if (pred_pos && gold_pos) ++rep.tp;
    else if (pred_pos && !gold_pos) ++rep.fp;
    else if (!pred_pos && gold_pos) ++rep.fn;
    else ++rep.tn;
  }

  const auto total = static_cast<double>(records.size());
  rep.accuracy = static_cast<double>(rep.tp + rep.tn) / total;
  if (rep.tp + rep.fp > 0) {
    rep.precision = static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fp);
  } else {
    rep.zero_denominator = true;
  }
  if (rep.tp + rep.fn > 0) {
    rep.recall = static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fn);
  } else {
    rep.zero_denominator = true;
  }
  if (rep.precision + rep.recall == 0.0) rep.zero_denominator = true;
  rep.f1 = f1_score(rep.precision, rep.recall);
  return rep;
}

// ============================================================================
// Confidence bins
// ============================================================================

struct ConfidenceBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
  std::optional<double> accuracy;  // empty bins stay null
};

/// Equal-width bins over [0,1]; the top bin is right-inclusive, so a
/// confidence of exactly 1 lands in the last bin.
inline std::vector<ConfidenceBin> confidence_bins(const std::vector<EvalRecord>& records,
                                                  std::size_t bin_count = 10) {
  if (bin_count < 1) raise(Errc::BadParam, "bin count must be at least 1");
  std::vector<ConfidenceBin> bins(bin_count);
  const auto b = static_cast<double>(bin_count);
  for (std::size_t i = 0; i < bin_count; ++i) {
    bins[i].lo = static_cast<double>(i) / b;
    bins[i].hi = static_cast<double>(i + 1) / b;
  }
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
      raise(Errc::BadParam, "record '" + r.sample_id + "' has confidence outside [0, 1]");
    auto idx = static_cast<std::size_t>(r.confidence * b);
    if (idx >= bin_count) idx = bin_count - 1;
    ++bins[idx].count;
    if (r.correct) ++bins[idx].correct;
  }
  for (auto& bin : bins)
    if (bin.count > 0)
      bin.accuracy = static_cast<double>(bin.correct) / static_cast<double>(bin.count);
  return bins;
}

inline nlohmann::json bins_to_json(const std::vector<ConfidenceBin>& bins) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : bins) {
    nlohmann::json jb;
    jb["lo"] = round_for_output(b.lo);
    jb["hi"] = round_for_output(b.hi);
    jb["count"] = b.count;
    jb["correct"] = b.correct;
    if (b.accuracy) jb["accuracy"] = round_for_output(*b.accuracy);
    else jb["accuracy"] = nullptr;
    out.push_back(std::move(jb));
  }
  return out;
}

inline void write_bins_csv(const std::vector<ConfidenceBin>& bins, std::ostream& out) {
  out << "lo,hi,count,correct,accuracy\n";
  for (const auto& b : bins) {
    out << format_double(b.lo) << "," << format_double(b.hi) << "," << b.count << "," << b.correct
        << ",";
    if (b.accuracy) out << format_double(*b.accuracy);
    out << "\n";
  }
}

// ============================================================================
// Degenerate-context probe
// ============================================================================

struct ProbeRow {
  Variant variant = Variant::NoneCtx;
  std::size_t rank = 0;  // 1-based within the variant
  std::string answer;
  double probability = 0.0;
};

struct ProbeReport {
  std::vector<ProbeRow> rows;
  std::size_t prompt_count = 0;
  std::size_t top_n = 0;
};

/**
 * For each degenerate variant: score every prompt's candidate labels,
 * average label probability over prompts (a label missing from a prompt
 * contributes zero for it), rank descending, keep the top_n. Ties keep
 * first-appearance order, so rankings are stable under prompt duplication.
 */
inline ProbeReport probe_report(const LogitSource& source, const std::vector<Prompt>& prompts,
                                const std::vector<VisualContext>& variants, std::size_t top_n = 15,
                                const ScoreOptions& opts = {}) {
  if (prompts.empty()) raise(Errc::BadParam, "probe needs at least one prompt");
  if (variants.empty()) raise(Errc::BadParam, "probe needs at least one variant");
  if (top_n < 1) raise(Errc::BadParam, "top_n must be at least 1");
  for (const auto& v : variants)
    if (!v.is_degenerate())
      raise(Errc::InvalidDegradation, "the probe inspects degenerate contexts only");

  ProbeReport report;
  report.prompt_count = prompts.size();
  report.top_n = top_n;

  for (const auto& v : variants) {
    std::vector<std::string> order;
    std::map<std::string, double> sums;
    for (const auto& prompt : prompts) {
      ProbVector p = score_candidates(source, prompt, v, opts);
      for (std::size_t i = 0; i < prompt.candidate_labels.size(); ++i) {
        std::string answer = source.vocab().detokenize(prompt.candidate_labels[i]);
        auto [it, inserted] = sums.emplace(answer, 0.0);
        if (inserted) order.push_back(answer);
        it->second += p[i];
      }
    }

    std::vector<std::size_t> ranked(order.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = i;
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
      return sums[order[a]] > sums[order[b]];
    });

    const auto count = static_cast<double>(prompts.size());
    const std::size_t keep = std::min(top_n, ranked.size());
    for (std::size_t r = 0; r < keep; ++r) {
      ProbeRow row;
      row.variant = v.variant;
      row.rank = r + 1;
      row.answer = order[ranked[r]];
      row.probability = sums[row.answer] / count;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

inline void write_probe_tsv(const ProbeReport& report, std::ostream& out) {
  out << "variant\trank\tanswer\tprobability\n";
  for (const auto& row : report.rows)
    out << variant_tag(row.variant) << "\t" << row.rank << "\t" << row.answer << "\t"
        << format_double(row.probability) << "\n";
}

}  // namespace vdd
