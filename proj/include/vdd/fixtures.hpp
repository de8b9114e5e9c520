#pragma once

/**
 * Deterministic synthetic corpora for tests and the reproducibility gate.
 * Every value comes from FNV-1a/SplitMix64 draws combined with plain IEEE
 * add/multiply (no libm), so regeneration from the same seed is bit-identical
 * on any conforming platform.
 */

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "vdd/core.hpp"
#include "vdd/decoding.hpp"
#include "vdd/logit_source.hpp"
#include "vdd/sweep.hpp"

namespace vdd {

namespace detail {

inline double fixture_unit(std::uint64_t seed, std::string_view tag, std::string_view id,
                           std::uint64_t step, std::uint32_t token) {
  Fnv1a h;
  h.update_u64(seed).update_str(tag).update_str(id).update_u64(step).update_u32(token);
  return signed_unit_from_hash(h.digest());
}

inline std::string padded_id(const char* prefix, std::size_t index, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, index);
  return buf;
}

}  // namespace detail

// ============================================================================
// Golden trace
// ============================================================================

/**
 * Three classification samples recorded across all six visual variants and
 * two prefix steps (36 records). The prior rows carry a bump on a distractor
 * answer that outweighs the real-context evidence on the gold answer, so
 * naive candidate scoring picks the distractor on every sample while
 * prior-corrected scoring recovers the gold one. Jitter amplitudes are small
 * enough that no margin can flip.
 */
inline TraceSource make_golden_trace(std::uint64_t seed) {
  Vocabulary vocab({"<unk>", "yes", "no", "brown", "white", "gray", "round", "square"});

  struct Item {
    const char* id;
    const char* gold;
    const char* bias;
  };
  const Item items[] = {{"s1", "yes", "no"}, {"s2", "brown", "white"}, {"s3", "square", "round"}};
  const char* degenerate_tags[] = {"none", "unk", "noise", "zeros", "ones"};

  std::map<TraceSource::Key, std::vector<double>> records;
  for (const Item& item : items) {
    const auto gold = static_cast<std::uint32_t>(*vocab.find(item.gold));
    const auto bias = static_cast<std::uint32_t>(*vocab.find(item.bias));
    for (std::uint64_t step = 0; step < 2; ++step) {
      std::vector<double> prior(vocab.size());
      for (std::uint32_t i = 0; i < prior.size(); ++i) {
        prior[i] = 0.1 * detail::fixture_unit(seed, "prior", item.id, step, i);
        if (i == bias) prior[i] += 1.0;
      }

      std::vector<double> real = prior;
      for (std::uint32_t i = 0; i < real.size(); ++i) {
        real[i] += 0.05 * detail::fixture_unit(seed, "real", item.id, step, i);
        if (i == gold) real[i] += 0.6;
      }
      records.emplace(TraceSource::Key{item.id, Variant::Real, step}, std::move(real));

      for (const char* tag : degenerate_tags) {
        std::vector<double> row = prior;
        for (std::uint32_t i = 0; i < row.size(); ++i)
          row[i] += 0.05 * detail::fixture_unit(seed, tag, item.id, step, i);
        records.emplace(TraceSource::Key{item.id, *variant_from_tag(tag), step}, std::move(row));
      }
    }
  }
  return TraceSource(std::move(vocab), std::move(records));
}

/// Sample metadata matching make_golden_trace, for driving classification
/// over the replayed records.
inline std::vector<SweepSample> golden_trace_samples(const Vocabulary& vocab) {
  auto tok = [&](const char* s) { return *vocab.find(s); };
  std::vector<SweepSample> out;
  out.push_back({Prompt("s1", {tok("<unk>")}, {{tok("yes")}, {tok("no")}}), "yes"});
  out.push_back(
      {Prompt("s2", {tok("<unk>")}, {{tok("brown")}, {tok("white")}, {tok("gray")}}), "brown"});
  out.push_back({Prompt("s3", {tok("<unk>")}, {{tok("round")}, {tok("square")}}), "square"});
  return out;
}

// ============================================================================
// Prior-vs-evidence benchmark
// ============================================================================

/**
 * Synthetic two-candidate benchmark where the language prior always opposes
 * the visual evidence and always wins on raw logits. Per sample: the prior
 * puts margin m on the wrong answer with m drawn uniformly from
 * [1.001, 1.999], the real context puts margin 1 on the gold answer,
 * degenerate contexts see the prior alone.
 *
 * Consequences, exact by construction: naive answers score 0% accuracy;
 * prior-corrected scoring and greedy contrastive decoding with alpha = 1
 * score 100%, because the corrected margin is 1 and the contrast margin is
 * 2 - m > 0, while the gold token stays inside the beta = 0.1 plausibility
 * head (probability ratio e^(1-m) > 0.36).
 */
inline ScenarioSpec make_prior_vs_evidence_suite(std::uint64_t seed, std::size_t count = 1000) {
  ScenarioSpec spec{Vocabulary({"<unk>", "a", "b", "x"}), 0.0, {}};
  const TokenId tok_a = 1, tok_b = 2, tok_x = 3;

  for (std::size_t i = 0; i < count; ++i) {
    std::string id = detail::padded_id("pv", i + 1, 4);
    SeededRng rng = SeededRng::for_stream(seed, id, 0);
    const bool gold_is_a = (rng.next_u64() & 1) == 0;
    const TokenId gold = gold_is_a ? tok_a : tok_b;
    const TokenId wrong = gold_is_a ? tok_b : tok_a;
    const double margin = 1.001 + 0.998 * rng.next_unit();

    ScenarioStep step;
    step.prior.assign(spec.vocabulary.size(), 0.0);
    step.prior[0] = -12.0;
    step.prior[static_cast<std::size_t>(tok_x)] = -12.0;
    step.prior[static_cast<std::size_t>(wrong)] = margin;
    step.evidence_real.assign(spec.vocabulary.size(), 0.0);
    step.evidence_real[static_cast<std::size_t>(gold)] = 1.0;
    step.evidence_degenerate.assign(spec.vocabulary.size(), 0.0);

    ScenarioSample sample;
    sample.id = std::move(id);
    sample.text = {tok_x};
    sample.candidates = {{tok_a}, {tok_b}};
    sample.gold = {gold};
    sample.steps = {std::move(step)};
    spec.samples.push_back(std::move(sample));
  }
  return spec;
}

// ============================================================================
// Sweep suite
// ============================================================================

/**
 * Small generation benchmark for the configuration sweep. At step 0 the gold
 * answer ranks second, a distractor leads by a gap in [0.3, 1.2), and the
 * two remaining answers trail far behind; steps 1 and 2 are dominated by the
 * stop token. Greedy therefore always answers wrong, while explorative
 * sampling configurations can hit the gold answer, which is what per-group
 * best-of selection is meant to surface.
 */
inline ScenarioSpec make_sweep_suite(std::uint64_t seed, std::size_t count = 8) {
  ScenarioSpec spec{Vocabulary({"<unk>", "a", "b", "c", "d", "</s>"}), 0.0, {}};
  const std::size_t vocab_size = spec.vocabulary.size();
  const TokenId stop = 5;

  for (std::size_t i = 0; i < count; ++i) {
    std::string id = detail::padded_id("sw", i + 1, 2);
    SeededRng rng = SeededRng::for_stream(seed, id, 0);

    const TokenId gold = static_cast<TokenId>(1 + rng.next_u64() % 4);
    TokenId others[3];
    std::size_t w = 0;
    for (TokenId t = 1; t <= 4; ++t)
      if (t != gold) others[w++] = t;
    const TokenId leader = others[rng.next_u64() % 3];
    const double gap = 0.3 + 0.9 * rng.next_unit();

    ScenarioStep answer_step;
    answer_step.prior.assign(vocab_size, 0.0);
    answer_step.prior[0] = -10.0;
    answer_step.prior[static_cast<std::size_t>(stop)] = -10.0;
    answer_step.prior[static_cast<std::size_t>(leader)] = gap;
    for (TokenId t : others)
      if (t != leader) answer_step.prior[static_cast<std::size_t>(t)] = -1.5 - rng.next_unit();
    answer_step.evidence_real.assign(vocab_size, 0.0);
    answer_step.evidence_degenerate.assign(vocab_size, 0.0);

    ScenarioStep stop_step;
    stop_step.prior.assign(vocab_size, 0.0);
    stop_step.prior[static_cast<std::size_t>(stop)] = 12.0;
    stop_step.evidence_real.assign(vocab_size, 0.0);
    stop_step.evidence_degenerate.assign(vocab_size, 0.0);

    ScenarioSample sample;
    sample.id = std::move(id);
    sample.text = {0};
    sample.candidates = {{1}, {2}, {3}, {4}};
    sample.gold = {gold};
    sample.steps = {std::move(answer_step), stop_step, stop_step};
    spec.samples.push_back(std::move(sample));
  }
  return spec;
}

/// Base decoding configuration matching make_sweep_suite: generation ends at
/// the suite's stop token and never outruns the three recorded steps.
inline DecodingConfig sweep_suite_base_config(std::uint64_t seed) {
  DecodingConfig config;
  config.strategy = DecodingStrategy::greedy();
  config.debias = DebiasMode::Naive;
  config.max_new_tokens = 3;
  config.stop_tokens = {5};
  config.seed = seed;
  return config;
}

}  // namespace vdd
