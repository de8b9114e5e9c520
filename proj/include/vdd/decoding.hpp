#pragma once

/**
 * Token-level generation: temperature / top-k / top-p transforms, the
 * contrastive debiased distribution with its adaptive plausibility
 * constraint, and the autoregressive loop over a logit source.
 *
 * The debiased distribution is softmax[(1+alpha)*l - alpha*l_ref] restricted
 * to the plausibility head of the image-conditioned distribution; tokens
 * outside the head have probability exactly 0. Sampling transforms are
 * applied on top of that distribution (log, transform, re-softmax), and
 * greedy decoding bypasses both the transform and the RNG.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "vdd/core.hpp"
#include "vdd/error.hpp"
#include "vdd/logit_source.hpp"

namespace vdd {

// ============================================================================
// Configuration
// ============================================================================

enum class StrategyKind { Greedy, Temperature, TopK, TopP };

struct DecodingStrategy {
  StrategyKind kind = StrategyKind::Greedy;
  double tau = 1.0;
  int k = 1;
  double p = 1.0;

  static DecodingStrategy greedy() { return {}; }
  static DecodingStrategy temperature(double tau) {
    if (!(tau > 0.0)) raise(Errc::BadParam, "temperature must be positive");
    return {StrategyKind::Temperature, tau, 1, 1.0};
  }
  static DecodingStrategy top_k(int k) {
    if (k < 1) raise(Errc::BadParam, "top-k must be at least 1");
    return {StrategyKind::TopK, 1.0, k, 1.0};
  }
  static DecodingStrategy top_p(double p) {
    if (!(p > 0.0) || p > 1.0) raise(Errc::BadParam, "top-p must lie in (0, 1]");
    return {StrategyKind::TopP, 1.0, 1, p};
  }

  std::string label() const {
    switch (kind) {
      case StrategyKind::Greedy:      return "greedy";
      case StrategyKind::Temperature: return "temp=" + format_param(tau);
      case StrategyKind::TopK:        return "top_k=" + std::to_string(k);
      case StrategyKind::TopP:        return "top_p=" + format_param(p);
    }
    return "?";
  }

 private:
  static std::string format_param(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
  }
};

enum class DebiasMode { Naive, VddNone, VddUnk, VddBoth };

inline std::string_view debias_mode_name(DebiasMode m) {
  switch (m) {
    case DebiasMode::Naive:   return "naive";
    case DebiasMode::VddNone: return "vdd-none";
    case DebiasMode::VddUnk:  return "vdd-unk";
    case DebiasMode::VddBoth: return "vdd-both";
  }
  return "?";
}

inline std::optional<DebiasMode> debias_mode_from_name(std::string_view s) {
  if (s == "naive")    return DebiasMode::Naive;
  if (s == "vdd-none") return DebiasMode::VddNone;
  if (s == "vdd-unk")  return DebiasMode::VddUnk;
  if (s == "vdd-both") return DebiasMode::VddBoth;
  return std::nullopt;
}

struct DecodingConfig {
  DecodingStrategy strategy = DecodingStrategy::greedy();
  DebiasMode debias = DebiasMode::Naive;
  double alpha = 1.0;
  double beta = 0.1;
  int max_new_tokens = 16;
  std::set<TokenId> stop_tokens;
  std::uint64_t seed = 0;
  // RNG sub-stream index; the sweep stamps grid positions here so every
  // (sample, config) pair draws from its own stream.
  std::uint64_t config_index = 0;

  void validate() const {
    if (alpha < 0.0) raise(Errc::BadParam, "alpha must be non-negative");
    if (beta < 0.0 || beta > 1.0) raise(Errc::BadParam, "beta must lie in [0, 1]");
    if (max_new_tokens < 0) raise(Errc::BadParam, "max_new_tokens must be non-negative");
    switch (strategy.kind) {
      case StrategyKind::Temperature:
        if (!(strategy.tau > 0.0)) raise(Errc::BadParam, "temperature must be positive");
        break;
      case StrategyKind::TopK:
        if (strategy.k < 1) raise(Errc::BadParam, "top-k must be at least 1");
        break;
      case StrategyKind::TopP:
        if (!(strategy.p > 0.0) || strategy.p > 1.0)
          raise(Errc::BadParam, "top-p must lie in (0, 1]");
        break;
      case StrategyKind::Greedy:
        break;
    }
  }
};

// ============================================================================
// Sampling transforms
// ============================================================================

/// Divide every finite logit by tau; masked entries stay masked.
inline LogitVector temperature_scale(const LogitVector& l, double tau) {
  if (!(tau > 0.0)) raise(Errc::BadParam, "temperature must be positive");
  std::vector<double> out(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) out[i] = std::isfinite(l[i]) ? l[i] / tau : l[i];
  return LogitVector(std::move(out));
}

/// Keep the k highest logits (boundary ties break toward the lowest token
/// index), mask the rest. Identity when k covers the whole finite support.
inline LogitVector top_k_filter(const LogitVector& l, int k) {
  if (k < 1) raise(Errc::BadParam, "top-k must be at least 1");
  const std::size_t support = l.finite_count();
  if (static_cast<std::size_t>(k) >= support) return l;

  std::vector<std::size_t> order;
  order.reserve(support);
  for (std::size_t i = 0; i < l.size(); ++i)
    if (std::isfinite(l[i])) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (l[a] != l[b]) return l[a] > l[b];
    return a < b;
  });

  std::vector<double> out(l.size(), kNegInf);
  for (std::size_t r = 0; r < static_cast<std::size_t>(k); ++r) out[order[r]] = l[order[r]];
  return LogitVector(std::move(out));
}

/// Keep the shortest probability-sorted prefix whose cumulative softmax
/// mass reaches p; mask the rest. p = 1 is the identity on the finite
/// support.
inline LogitVector top_p_filter(const LogitVector& l, double p) {
  if (!(p > 0.0) || p > 1.0) raise(Errc::BadParam, "top-p must lie in (0, 1]");
  if (p == 1.0) return l;

  ProbVector probs = softmax(l);
  std::vector<std::size_t> order;
  order.reserve(l.size());
  for (std::size_t i = 0; i < l.size(); ++i)
    if (std::isfinite(l[i])) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });

  std::vector<double> out(l.size(), kNegInf);
  double cum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    out[order[r]] = l[order[r]];
    cum += probs[order[r]];
    if (cum >= p) break;  // rounding can leave cum just under 1; then keep all
  }
  return LogitVector(std::move(out));
}

// ============================================================================
// Contrastive distribution
// ============================================================================

/// Token subset whose conditioning probability is at least beta times the
/// maximum. Always contains the argmax tie set, so it is never empty.
struct PlausibilityHead {
  std::vector<TokenId> allowed;  // ascending
  double threshold = 0.0;

  bool contains(std::size_t i) const {
    return std::binary_search(allowed.begin(), allowed.end(), static_cast<TokenId>(i));
  }
};

inline PlausibilityHead plausibility_head(const ProbVector& p_image, double beta) {
  if (beta < 0.0 || beta > 1.0) raise(Errc::BadParam, "beta must lie in [0, 1]");
  double max_p = 0.0;
  for (std::size_t i = 0; i < p_image.size(); ++i) max_p = std::max(max_p, p_image[i]);
  const double threshold = beta * max_p;
  PlausibilityHead head;
  head.threshold = threshold;
  for (std::size_t i = 0; i < p_image.size(); ++i)
    if (p_image[i] >= threshold) head.allowed.push_back(static_cast<TokenId>(i));
  return head;
}

/**
 * The debiased next-token distribution: softmax over
 * (1+alpha)*l - alpha*l_ref, with every token outside the plausibility head
 * of softmax(l) masked to exact zero.
 *
 * Corner handled explicitly: a head token whose reference logit is -inf
 * (while l is finite, alpha > 0) has contrast +inf. The limit of the
 * softmax splits all mass uniformly over such tokens, and that is what is
 * returned; NaN never escapes.
 */
inline ProbVector vdd_distribution(const LogitVector& l, const LogitVector& l_ref, double alpha,
                                   double beta) {
  if (l.size() != l_ref.size())
    raise(Errc::ShapeMismatch, "logit vectors have lengths " + std::to_string(l.size()) +
                                   " and " + std::to_string(l_ref.size()));
  if (alpha < 0.0) raise(Errc::BadParam, "alpha must be non-negative");

  const PlausibilityHead head = plausibility_head(softmax(l), beta);

  std::vector<double> contrast(l.size(), kNegInf);
  std::vector<std::size_t> unbounded;
  for (TokenId id : head.allowed) {
    const auto i = static_cast<std::size_t>(id);
    if (!std::isfinite(l[i])) continue;  // zero-probability token, stays masked
    if (alpha == 0.0) {
      contrast[i] = l[i];
    } else if (!std::isfinite(l_ref[i])) {
      unbounded.push_back(i);
    } else {
      contrast[i] = (1.0 + alpha) * l[i] - alpha * l_ref[i];
    }
  }

  if (!unbounded.empty()) {
    std::vector<double> out(l.size(), 0.0);
    const double share = 1.0 / static_cast<double>(unbounded.size());
    for (std::size_t i : unbounded) out[i] = share;
    return ProbVector(std::move(out));
  }
  return softmax(LogitVector(std::move(contrast)));
}

/// Reference logits for the contrastive step: image-free (none), unk
/// placeholder, or the elementwise mean of the two.
inline LogitVector build_reference_logits(const LogitSource& source, const Prompt& prompt,
                                          std::span<const TokenId> prefix, DebiasMode mode) {
  switch (mode) {
    case DebiasMode::VddNone:
      return source.query(prompt, VisualContext::none(), prefix);
    case DebiasMode::VddUnk:
      return source.query(prompt, VisualContext::unk(), prefix);
    case DebiasMode::VddBoth: {
      LogitVector a = source.query(prompt, VisualContext::none(), prefix);
      LogitVector b = source.query(prompt, VisualContext::unk(), prefix);
      if (a.size() != b.size()) raise(Errc::ShapeMismatch, "reference logit lengths differ");
      std::vector<double> out(a.size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
      return LogitVector(std::move(out));
    }
    case DebiasMode::Naive:
      break;
  }
  raise(Errc::BadParam, "reference logits are only defined for debiasing modes");
}

// ============================================================================
// Sampling
// ============================================================================

/// Inverse-CDF sampling over tokens in index order: the chosen token is the
/// first whose cumulative probability exceeds the uniform draw. Never
/// returns a zero-probability token.
inline TokenId sample_token(const ProbVector& p, SeededRng& rng) {
  const double u = rng.next_unit();
  double cum = 0.0;
  std::size_t last_positive = 0;
  bool seen = false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    last_positive = i;
    seen = true;
    cum += p[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  if (!seen) raise(Errc::EmptySupport, "cannot sample from an all-zero distribution");
  return static_cast<TokenId>(last_positive);  // u landed in rounding slack at the tail
}

// ============================================================================
// Generation loop
// ============================================================================

struct StepTrace {
  std::size_t step = 0;
  std::size_t head_size = 0;
  double threshold = 0.0;
  std::size_t contrast_argmax = 0;
  TokenId chosen = 0;
};

struct GenerationResult {
  std::vector<TokenId> tokens;
  std::vector<ProbVector> step_probs;  // the distribution each token was drawn from
  std::vector<StepTrace> steps;
};

/**
 * Autoregressive decoding. Per step: query the source under the real
 * context, form the (optionally debiased) distribution, apply the sampling
 * transform on its log-scores, re-normalize, draw. A sampled stop token
 * ends generation and is not part of the output. Deterministic under a
 * fixed (seed, sample_id, config_index) triple.
 */
inline GenerationResult generate(const LogitSource& source, const Prompt& prompt,
                                 const VisualContext& visual, const DecodingConfig& config) {
  if (visual.variant != Variant::Real)
    raise(Errc::BadParam, "generation conditions on a real visual context");
  config.validate();

  SeededRng rng = SeededRng::for_stream(config.seed, prompt.sample_id, config.config_index);
  GenerationResult result;

  for (int t = 0; t < config.max_new_tokens; ++t) {
    std::span<const TokenId> prefix(result.tokens);
    LogitVector l = source.query(prompt, visual, prefix);

    ProbVector decided = [&] {
      if (config.debias == DebiasMode::Naive) return softmax(l);
      LogitVector l_ref = build_reference_logits(source, prompt, prefix, config.debias);
      return vdd_distribution(l, l_ref, config.alpha, config.beta);
    }();

    StepTrace trace;
    trace.step = static_cast<std::size_t>(t);
    trace.contrast_argmax = argmax_lowest(decided);
    if (config.debias == DebiasMode::Naive) {
      trace.head_size = l.size();
      trace.threshold = 0.0;
    } else {
      PlausibilityHead head = plausibility_head(softmax(l), config.beta);
      trace.head_size = head.allowed.size();
      trace.threshold = head.threshold;
    }

    TokenId chosen;
    if (config.strategy.kind == StrategyKind::Greedy) {
      chosen = static_cast<TokenId>(argmax_lowest(decided));
      result.step_probs.push_back(decided);
    } else {
      std::vector<double> logs(decided.size());
      for (std::size_t i = 0; i < logs.size(); ++i)
        logs[i] = decided[i] > 0.0 ? std::log(decided[i]) : kNegInf;
      LogitVector lt(std::move(logs));
      LogitVector transformed = [&] {
        switch (config.strategy.kind) {
          case StrategyKind::Temperature: return temperature_scale(lt, config.strategy.tau);
          case StrategyKind::TopK:        return top_k_filter(lt, config.strategy.k);
          case StrategyKind::TopP:        return top_p_filter(lt, config.strategy.p);
          default:                        return lt;
        }
      }();
      ProbVector p_sample = softmax(transformed);
      chosen = sample_token(p_sample, rng);
      result.step_probs.push_back(std::move(p_sample));
    }

    trace.chosen = chosen;
    result.steps.push_back(trace);

    if (config.stop_tokens.count(chosen)) break;
    result.tokens.push_back(chosen);
  }
  return result;
}

}  // namespace vdd
