#pragma once

/**
 * Pluggable providers of logits conditioned on (prompt, visual context,
 * generated prefix):
 *
 * - ScenarioSource: table-driven synthetic model. Each sample stores, per
 *   prefix step, a language-prior row plus two evidence rows (real and
 *   degenerate), so query(Real) = prior + real evidence and every
 *   image-free context sees prior + degenerate evidence.
 * - ProceduralSource: hash-driven model of unbounded depth, bit-identical
 *   across platforms.
 * - TraceSource: replay of externally recorded logits from a JSON Lines
 *   file, for teacher-forced scoring paths.
 *
 * Sources are immutable after construction and safe to query from many
 * threads.
 */

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "vdd/core.hpp"
#include "vdd/error.hpp"

namespace vdd {

// ============================================================================
// VisualContext
// ============================================================================

enum class Variant { Real, NoneCtx, Unk, Noise, Zeros, Ones };

inline std::string_view variant_tag(Variant v) {
  switch (v) {
    case Variant::Real:    return "real";
    case Variant::NoneCtx: return "none";
    case Variant::Unk:     return "unk";
    case Variant::Noise:   return "noise";
    case Variant::Zeros:   return "zeros";
    case Variant::Ones:    return "ones";
  }
  return "?";
}

inline std::optional<Variant> variant_from_tag(std::string_view tag) {
  if (tag == "real")  return Variant::Real;
  if (tag == "none")  return Variant::NoneCtx;
  if (tag == "unk")   return Variant::Unk;
  if (tag == "noise") return Variant::Noise;
  if (tag == "zeros") return Variant::Zeros;
  if (tag == "ones")  return Variant::Ones;
  return std::nullopt;
}

/**
 * Tagged visual input. Real carries an opaque context id that resolves
 * within the source; Noise carries the seed of its perturbation; the other
 * degenerate variants carry no payload.
 */
struct VisualContext {
  Variant variant = Variant::NoneCtx;
  std::string real_id;          // Real only
  std::uint64_t noise_seed = 0; // Noise only

  static VisualContext real(std::string id) { return {Variant::Real, std::move(id), 0}; }
  static VisualContext none()  { return {Variant::NoneCtx, {}, 0}; }
  static VisualContext unk()   { return {Variant::Unk, {}, 0}; }
  static VisualContext noise(std::uint64_t seed) { return {Variant::Noise, {}, seed}; }
  static VisualContext zeros() { return {Variant::Zeros, {}, 0}; }
  static VisualContext ones()  { return {Variant::Ones, {}, 0}; }

  bool is_degenerate() const noexcept { return variant != Variant::Real; }
};

/**
 * Replace a real visual context by a degenerate one. Noise receives a seed
 * derived from (global_seed, context id) with FNV-1a, so the perturbation
 * is stable across runs and independent of sample order.
 */
inline VisualContext degrade_visual(const VisualContext& v, Variant target,
                                    std::uint64_t global_seed = 0) {
  if (v.variant != Variant::Real)
    raise(Errc::InvalidDegradation, "only a real context can be degraded");
  if (target == Variant::Real)
    raise(Errc::InvalidDegradation, "cannot degrade to the real variant");
  if (target == Variant::Noise) {
    Fnv1a h;
    h.update_u64(global_seed).update_str(v.real_id);
    return VisualContext::noise(h.digest());
  }
  VisualContext out;
  out.variant = target;
  return out;
}

// ============================================================================
// Prompt
// ============================================================================

/**
 * A text prompt plus optional candidate labels for classification tasks.
 * Candidate labels are token sequences, distinct and non-empty.
 */
struct Prompt {
  std::string sample_id;
  std::vector<TokenId> text;
  std::vector<std::vector<TokenId>> candidate_labels;

  Prompt(std::string id, std::vector<TokenId> text_tokens,
         std::vector<std::vector<TokenId>> candidates = {})
      : sample_id(std::move(id)),
        text(std::move(text_tokens)),
        candidate_labels(std::move(candidates)) {
    if (text.empty()) raise(Errc::BadParam, "prompt text must not be empty");
    for (std::size_t i = 0; i < candidate_labels.size(); ++i) {
      if (candidate_labels[i].empty())
        raise(Errc::BadCandidate, "candidate " + std::to_string(i) + " is empty");
      for (std::size_t j = 0; j < i; ++j)
        if (candidate_labels[i] == candidate_labels[j])
          raise(Errc::BadCandidate, "candidates " + std::to_string(j) + " and " +
                                        std::to_string(i) + " are identical");
    }
  }
};

// ============================================================================
// LogitSource interface
// ============================================================================

class LogitSource {
 public:
  virtual ~LogitSource() = default;

  virtual const Vocabulary& vocab() const = 0;

  /// Logits over the full vocabulary given (prompt, visual context, prefix).
  /// Deterministic: identical arguments always yield identical output.
  virtual LogitVector query(const Prompt& prompt, const VisualContext& visual,
                            std::span<const TokenId> prefix) const = 0;

 protected:
  void check_prefix(std::span<const TokenId> prefix) const {
    for (TokenId t : prefix)
      if (!vocab().valid(t))
        raise(Errc::BadParam, "prefix token " + std::to_string(t) + " out of range");
  }
};

// ============================================================================
// ScenarioSource
// ============================================================================

/// One prefix step of a scenario sample: a prior row plus the evidence rows.
/// All degenerate contexts share the single degenerate row; that sharing is
/// structural, not a convention the data could violate.
struct ScenarioStep {
  std::vector<double> prior;
  std::vector<double> evidence_real;
  std::vector<double> evidence_degenerate;
};

struct ScenarioSample {
  std::string id;
  std::vector<TokenId> text;
  std::vector<std::vector<TokenId>> candidates;
  std::vector<TokenId> gold;
  std::vector<ScenarioStep> steps;
};

struct ScenarioSpec {
  Vocabulary vocabulary;
  double noise_jitter = 0.01;
  std::vector<ScenarioSample> samples;
};

class ScenarioSource : public LogitSource {
 public:
  explicit ScenarioSource(ScenarioSpec spec) : spec_(std::move(spec)) {
    const std::size_t n = spec_.vocabulary.size();
    for (const auto& s : spec_.samples) {
      if (index_.count(s.id)) raise(Errc::DuplicateRecord, "duplicate sample id '" + s.id + "'");
      for (std::size_t t = 0; t < s.steps.size(); ++t) {
        const auto& st = s.steps[t];
        if (st.prior.size() != n || st.evidence_real.size() != n ||
            st.evidence_degenerate.size() != n)
          raise(Errc::VocabMismatch, "sample '" + s.id + "' step " + std::to_string(t) +
                                         " has a row of the wrong length");
      }
      index_[s.id] = &s;
    }
  }

  const Vocabulary& vocab() const override { return spec_.vocabulary; }
  const ScenarioSpec& spec() const noexcept { return spec_; }

  LogitVector query(const Prompt& prompt, const VisualContext& visual,
                    std::span<const TokenId> prefix) const override {
    check_prefix(prefix);
    auto it = index_.find(prompt.sample_id);
    if (it == index_.end())
      raise(Errc::TraceMiss, "no scenario sample '" + prompt.sample_id + "'");
    const ScenarioSample& s = *it->second;
    const std::size_t step = prefix.size();
    if (step >= s.steps.size())
      raise(Errc::TraceMiss, "sample '" + s.id + "' has no step " + std::to_string(step));
    const ScenarioStep& st = s.steps[step];

    std::vector<double> out(spec_.vocabulary.size());
    const std::vector<double>& evidence =
        visual.variant == Variant::Real ? st.evidence_real : st.evidence_degenerate;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = st.prior[i] + evidence[i];

    if (visual.variant == Variant::Noise && spec_.noise_jitter != 0.0) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        Fnv1a h;
        h.update_u64(visual.noise_seed).update_u64(step).update_u32(static_cast<std::uint32_t>(i));
        out[i] += spec_.noise_jitter * signed_unit_from_hash(h.digest());
      }
    }
    return LogitVector(std::move(out));
  }

  std::vector<Prompt> prompts() const {
    std::vector<Prompt> out;
    out.reserve(spec_.samples.size());
    for (const auto& s : spec_.samples) out.emplace_back(s.id, s.text, s.candidates);
    return out;
  }

  const ScenarioSample* find_sample(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : it->second;
  }

 private:
  ScenarioSpec spec_;
  std::map<std::string, const ScenarioSample*> index_;
};

// ============================================================================
// ProceduralSource
// ============================================================================

/**
 * Deterministic stand-in for a model: every logit is
 *
 *   prior_strength  * u(seed, sample_id, "prior", prefix, token)
 * + visual_strength * u(seed, ctx_id,    tag,     prefix, token)
 *
 * where u maps an FNV-1a digest to uniform [-1, 1]. The digest covers, in
 * order: hash_seed (u64 LE), the sample/context id (bytes + 0x00), the
 * component tag (bytes + 0x00), the Noise seed (u64 LE, noise only), the
 * prefix length (u64 LE), each prefix token (u32 LE), and the scored token
 * (u32 LE). Degenerate contexts use an empty ctx_id, so their evidence
 * carries no sample information; the prior term always hashes the sample id.
 */
struct ProceduralModelSpec {
  std::size_t vocab_size = 16;
  double prior_strength = 1.0;
  double visual_strength = 1.0;
  std::uint64_t hash_seed = 0;
};

class ProceduralSource : public LogitSource {
 public:
  explicit ProceduralSource(ProceduralModelSpec spec)
      : spec_(spec), vocab_(make_tokens(spec.vocab_size)) {
    if (spec_.prior_strength < 0 || spec_.visual_strength < 0)
      raise(Errc::BadParam, "strengths must be non-negative");
  }

  const Vocabulary& vocab() const override { return vocab_; }

  LogitVector query(const Prompt& prompt, const VisualContext& visual,
                    std::span<const TokenId> prefix) const override {
    check_prefix(prefix);
    std::vector<double> out(vocab_.size());
    const bool real = visual.variant == Variant::Real;
    const std::string_view ctx_id = real ? std::string_view(prompt.sample_id) : std::string_view();
    const std::string_view tag = variant_tag(visual.variant);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto token = static_cast<std::uint32_t>(i);
      out[i] = spec_.prior_strength *
                   signed_unit_from_hash(component_hash(prompt.sample_id, "prior", nullptr, prefix, token)) +
               spec_.visual_strength *
                   signed_unit_from_hash(component_hash(
                       ctx_id, tag, visual.variant == Variant::Noise ? &visual.noise_seed : nullptr,
                       prefix, token));
    }
    return LogitVector(std::move(out));
  }

 private:
  static std::vector<std::string> make_tokens(std::size_t n) {
    if (n < 2) raise(Errc::BadParam, "procedural vocabulary needs at least 2 tokens");
    std::vector<std::string> tokens;
    tokens.reserve(n);
    tokens.emplace_back(kUnkToken);
    for (std::size_t i = 1; i < n; ++i) tokens.push_back("t" + std::to_string(i));
    return tokens;
  }

  std::uint64_t component_hash(std::string_view id, std::string_view tag,
                               const std::uint64_t* noise_seed,
                               std::span<const TokenId> prefix, std::uint32_t token) const {
    Fnv1a h;
    h.update_u64(spec_.hash_seed).update_str(id).update_str(tag);
    if (noise_seed) h.update_u64(*noise_seed);
    h.update_u64(prefix.size());
    for (TokenId t : prefix) h.update_u32(static_cast<std::uint32_t>(t));
    h.update_u32(token);
    return h.digest();
  }

  ProceduralModelSpec spec_;
  Vocabulary vocab_;
};

// ============================================================================
// TraceSource
// ============================================================================

inline constexpr std::string_view kTraceFormat = "vdd-trace/1";
inline constexpr std::string_view kScenarioFormat = "vdd-scenario/1";

/**
 * Replay of recorded logits keyed by (sample, variant, prefix-step). The
 * step index is the prefix length; rows are assumed to have been recorded
 * under teacher forcing of the continuation being scored, so a trace covers
 * classification candidates and fixed continuations, not free generation.
 */
class TraceSource : public LogitSource {
 public:
  using Key = std::tuple<std::string, Variant, std::size_t>;

  TraceSource(Vocabulary vocab, std::map<Key, std::vector<double>> records)
      : vocab_(std::move(vocab)), records_(std::move(records)) {}

  const Vocabulary& vocab() const override { return vocab_; }

  LogitVector query(const Prompt& prompt, const VisualContext& visual,
                    std::span<const TokenId> prefix) const override {
    check_prefix(prefix);
    Key key{prompt.sample_id, visual.variant, prefix.size()};
    auto it = records_.find(key);
    if (it == records_.end())
      raise(Errc::TraceMiss, "no trace record for (" + prompt.sample_id + ", " +
                                 std::string(variant_tag(visual.variant)) + ", step " +
                                 std::to_string(prefix.size()) + ")");
    return LogitVector(it->second);
  }

  std::size_t record_count() const noexcept { return records_.size(); }

  std::vector<std::string> sample_ids() const {
    std::vector<std::string> out;
    for (const auto& [key, _] : records_) {
      const std::string& id = std::get<0>(key);
      if (out.empty() || out.back() != id) out.push_back(id);
    }
    return out;  // map order: already sorted and distinct
  }

  const std::map<Key, std::vector<double>>& records() const noexcept { return records_; }

 private:
  Vocabulary vocab_;
  std::map<Key, std::vector<double>> records_;
};

/**
 * Parse a trace file (UTF-8 JSON Lines). Line 1 is the header
 * {"format":"vdd-trace/1","vocab":[...]}; every following line is one
 * record {"sample","variant","step","logits"}. All logits must be finite
 * (JSON has no infinity). Errors carry the 1-based line number.
 */
inline TraceSource load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::IoError, "cannot open trace file '" + path + "'");

  auto fail = [&](std::size_t line_no, const std::string& what) {
    raise(Errc::ParseError, path + ":" + std::to_string(line_no) + ": " + what);
  };

  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) raise(Errc::ParseError, path + ": empty file, missing header");
  ++line_no;
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object()) fail(line_no, "malformed header");
  if (header.value("format", "") != kTraceFormat)
    fail(line_no, "unsupported format '" + header.value("format", "") + "'");
  if (!header.contains("vocab") || !header["vocab"].is_array())
    fail(line_no, "header missing vocab array");
  std::vector<std::string> tokens;
  for (const auto& t : header["vocab"]) {
    if (!t.is_string()) fail(line_no, "vocab entry is not a string");
    tokens.push_back(t.get<std::string>());
  }
  Vocabulary vocab(std::move(tokens));

  std::map<TraceSource::Key, std::vector<double>> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) fail(line_no, "malformed record");
    if (!rec.contains("sample") || !rec["sample"].is_string())
      fail(line_no, "record missing sample id");
    if (!rec.contains("variant") || !rec["variant"].is_string())
      fail(line_no, "record missing variant");
    auto variant = variant_from_tag(rec["variant"].get<std::string>());
    if (!variant) fail(line_no, "unknown variant '" + rec["variant"].get<std::string>() + "'");
    if (!rec.contains("step") || !rec["step"].is_number_integer() || rec["step"].get<long long>() < 0)
      fail(line_no, "record missing non-negative step");
    if (!rec.contains("logits") || !rec["logits"].is_array())
      fail(line_no, "record missing logits array");

    std::vector<double> logits;
    for (const auto& v : rec["logits"]) {
      if (!v.is_number()) fail(line_no, "logit entry is not a number");
      logits.push_back(v.get<double>());
    }
    if (logits.size() != vocab.size())
      raise(Errc::VocabMismatch, path + ":" + std::to_string(line_no) + ": record has " +
                                     std::to_string(logits.size()) + " logits, vocabulary has " +
                                     std::to_string(vocab.size()));

    TraceSource::Key key{rec["sample"].get<std::string>(), *variant,
                         static_cast<std::size_t>(rec["step"].get<long long>())};
    if (records.count(key))
      raise(Errc::DuplicateRecord,
            path + ":" + std::to_string(line_no) + ": duplicate record for (" +
                std::get<0>(key) + ", " + std::string(variant_tag(std::get<1>(key))) + ", step " +
                std::to_string(std::get<2>(key)) + ")");
    records.emplace(std::move(key), std::move(logits));
  }
  return TraceSource(std::move(vocab), std::move(records));
}

/// Serialize a trace source back to the JSON Lines format. Records are
/// emitted in key order, so the output is deterministic.
inline void write_trace(const TraceSource& source, std::ostream& out) {
  nlohmann::json header;
  header["format"] = kTraceFormat;
  header["vocab"] = source.vocab().tokens();
  out << header.dump() << "\n";
  for (const auto& [key, logits] : source.records()) {
    nlohmann::json rec;
    rec["sample"] = std::get<0>(key);
    rec["variant"] = std::string(variant_tag(std::get<1>(key)));
    rec["step"] = std::get<2>(key);
    rec["logits"] = logits;
    out << rec.dump() << "\n";
  }
}

inline void write_trace(const TraceSource& source, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::IoError, "cannot write trace file '" + path + "'");
  write_trace(source, static_cast<std::ostream&>(out));
}

// ============================================================================
// Scenario JSON I/O
// ============================================================================

inline nlohmann::json scenario_to_json(const ScenarioSpec& spec) {
  nlohmann::json doc;
  doc["format"] = kScenarioFormat;
  doc["vocab"] = spec.vocabulary.tokens();
  doc["noise_jitter"] = spec.noise_jitter;
  doc["samples"] = nlohmann::json::array();
  for (const auto& s : spec.samples) {
    nlohmann::json js;
    js["id"] = s.id;
    js["text"] = s.text;
    js["candidates"] = s.candidates;
    js["gold"] = s.gold;
    js["steps"] = nlohmann::json::array();
    for (const auto& st : s.steps) {
      nlohmann::json jst;
      jst["prior"] = st.prior;
      jst["real"] = st.evidence_real;
      jst["degenerate"] = st.evidence_degenerate;
      js["steps"].push_back(std::move(jst));
    }
    doc["samples"].push_back(std::move(js));
  }
  return doc;
}

inline ScenarioSpec scenario_from_json(const nlohmann::json& doc, const std::string& where) {
  auto fail = [&](const std::string& what) { raise(Errc::ParseError, where + ": " + what); };
  if (!doc.is_object()) fail("scenario document is not an object");
  if (doc.value("format", "") != kScenarioFormat)
    fail("unsupported format '" + doc.value("format", "") + "'");
  if (!doc.contains("vocab") || !doc["vocab"].is_array()) fail("missing vocab array");

  ScenarioSpec spec{Vocabulary(doc["vocab"].get<std::vector<std::string>>()),
                    doc.value("noise_jitter", 0.01),
                    {}};
  for (const auto& js : doc.value("samples", nlohmann::json::array())) {
    ScenarioSample s;
    s.id = js.value("id", "");
    if (s.id.empty()) fail("sample missing id");
    s.text = js.value("text", std::vector<TokenId>{});
    s.candidates = js.value("candidates", std::vector<std::vector<TokenId>>{});
    s.gold = js.value("gold", std::vector<TokenId>{});
    if (!js.contains("steps") || !js["steps"].is_array())
      fail("sample '" + s.id + "' missing steps");
    for (const auto& jst : js["steps"]) {
      ScenarioStep st;
      st.prior = jst.value("prior", std::vector<double>{});
      st.evidence_real = jst.value("real", std::vector<double>{});
      st.evidence_degenerate = jst.value("degenerate", std::vector<double>{});
      s.steps.push_back(std::move(st));
    }
    spec.samples.push_back(std::move(s));
  }
  return spec;
}

inline ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::IoError, "cannot open scenario file '" + path + "'");
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) raise(Errc::ParseError, path + ": not valid JSON");
  return scenario_from_json(doc, path);
}

inline void save_scenario(const ScenarioSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::IoError, "cannot write scenario file '" + path + "'");
  out << scenario_to_json(spec).dump(1) << "\n";
}

}  // namespace vdd
