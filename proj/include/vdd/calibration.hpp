#pragma once

/**
 * Post-hoc prior correction for classification and multiple-choice prompts.
 *
 * The pipeline: score the candidate labels under the real visual context,
 * estimate the language prior from degenerate contexts, build a diagonal
 * reweighting from the reciprocal prior, and renormalize through a softmax.
 * When the real context adds no evidence the debiased distribution is
 * uniform, which is exactly the regularization the reweighting encodes.
 */

#include <cmath>
#include <string>
#include <vector>

#include "vdd/core.hpp"
#include "vdd/error.hpp"
#include "vdd/logit_source.hpp"

namespace vdd {

inline constexpr double kCalibrationEpsilon = 1e-8;

/// Diagonal weight vector plus bias for the affine correction. The bias is
/// kept in the data model but defaults to zero.
struct CalibrationParams {
  std::vector<double> w;
  std::vector<double> b;

  CalibrationParams(std::vector<double> weights, std::vector<double> bias)
      : w(std::move(weights)), b(std::move(bias)) {
    validate();
  }

  explicit CalibrationParams(std::vector<double> weights)
      : w(std::move(weights)), b(w.size(), 0.0) {
    validate();
  }

 private:
  void validate() const {
    if (w.size() != b.size()) raise(Errc::ShapeMismatch, "weight and bias lengths differ");
    for (double v : w)
      if (!std::isfinite(v) || v <= 0.0)
        raise(Errc::BadParam, "calibration weights must be finite and positive");
    for (double v : b)
      if (!std::isfinite(v)) raise(Errc::BadParam, "calibration bias must be finite");
  }
};

/// Candidate-label distribution measured under degenerate visual contexts.
struct PriorEstimate {
  ProbVector p_prime;
  std::vector<Variant> variants_used;
};

struct ScoreOptions {
  // Divide each candidate's log-probability by its token count before
  // renormalizing. Off by default: one-word labels need no normalization
  // and the unnormalized chain rule is the reference behavior.
  bool length_normalize = false;
};

/**
 * Teacher-forced scores over the prompt's candidate labels: each label's
 * log-probability is the chain-rule sum of per-token log-softmax values
 * starting from the empty prefix, and the exponentiated scores are
 * renormalized over the candidate set. Computed in log space so long
 * labels cannot underflow.
 */
inline ProbVector score_candidates(const LogitSource& source, const Prompt& prompt,
                                   const VisualContext& visual, const ScoreOptions& opts = {}) {
  const auto& candidates = prompt.candidate_labels;
  if (candidates.size() < 2)
    raise(Errc::BadParam, "need at least 2 candidate labels, got " +
                              std::to_string(candidates.size()));
  for (const auto& c : candidates)
    for (TokenId t : c)
      if (!source.vocab().valid(t))
        raise(Errc::BadCandidate, "candidate token " + std::to_string(t) + " out of vocabulary");

  std::vector<double> log_scores(candidates.size(), 0.0);
  for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
    const auto& cand = candidates[ci];
    double logp = 0.0;
    for (std::size_t t = 0; t < cand.size(); ++t) {
      std::span<const TokenId> prefix(cand.data(), t);
      LogitVector ls = log_softmax(source.query(prompt, visual, prefix));
      logp += ls[static_cast<std::size_t>(cand[t])];
    }
    if (opts.length_normalize) logp /= static_cast<double>(cand.size());
    log_scores[ci] = logp;
  }

  double max_ls = kNegInf;
  for (double v : log_scores)
    if (v > max_ls) max_ls = v;
  if (!std::isfinite(max_ls))
    raise(Errc::EmptySupport, "every candidate has probability zero");

  std::vector<double> out(log_scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::isfinite(log_scores[i]) ? std::exp(log_scores[i] - max_ls) : 0.0;
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return ProbVector(std::move(out));
}

/**
 * Language-prior estimate over the candidate labels: the unweighted mean of
 * the candidate distributions under the given degenerate contexts,
 * renormalized (a no-op guard, since a mean of unit-sum vectors is
 * unit-sum).
 */
inline PriorEstimate prior_distribution(const LogitSource& source, const Prompt& prompt,
                                        const std::vector<VisualContext>& variants,
                                        const ScoreOptions& opts = {}) {
  if (variants.empty()) raise(Errc::BadParam, "need at least one degenerate variant");
  for (const auto& v : variants)
    if (!v.is_degenerate())
      raise(Errc::InvalidDegradation, "prior estimation requires degenerate contexts");

  std::vector<double> mean;
  std::vector<Variant> used;
  for (const auto& v : variants) {
    ProbVector p = score_candidates(source, prompt, v, opts);
    if (mean.empty()) mean.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i];
    used.push_back(v.variant);
  }
  double sum = 0.0;
  for (double& v : mean) {
    v /= static_cast<double>(variants.size());
    sum += v;
  }
  for (double& v : mean) v /= sum;
  return PriorEstimate{ProbVector(std::move(mean)), std::move(used)};
}

/// Reciprocal-prior weights: w_i = 1 / max(p'_i, epsilon), zero bias. The
/// epsilon clamp keeps a zero-probability candidate from producing an
/// infinite weight.
inline CalibrationParams calibration_params(const PriorEstimate& prior,
                                            double epsilon = kCalibrationEpsilon) {
  if (!(epsilon > 0.0)) raise(Errc::BadParam, "epsilon must be positive");
  std::vector<double> w(prior.p_prime.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 / std::max(prior.p_prime[i], epsilon);
  return CalibrationParams(std::move(w));
}

/// The affine correction: softmax(w * p + b).
inline ProbVector apply_posthoc_debias(const ProbVector& p, const CalibrationParams& params) {
  if (p.size() != params.w.size())
    raise(Errc::ShapeMismatch, "distribution has " + std::to_string(p.size()) +
                                   " entries, params have " + std::to_string(params.w.size()));
  std::vector<double> scores(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) scores[i] = params.w[i] * p[i] + params.b[i];
  return softmax(LogitVector(std::move(scores)));
}

struct ClassifyResult {
  std::size_t label = 0;
  ProbVector naive;
  ProbVector debiased;
  // Set when calibration flattened the answer scores to uniform: the real
  // context carried no evidence beyond the language prior.
  bool no_evidence = false;
};

/**
 * End-to-end debiased classification: candidate scores under the real
 * context, prior from the degenerate variants, reciprocal-prior weights,
 * affine correction, lowest-index argmax.
 */
inline ClassifyResult classify_debiased(const LogitSource& source, const Prompt& prompt,
                                        const VisualContext& visual,
                                        const std::vector<VisualContext>& variants,
                                        double epsilon = kCalibrationEpsilon,
                                        const ScoreOptions& opts = {}) {
  if (visual.variant != Variant::Real)
    raise(Errc::BadParam, "classification conditions on a real visual context");
  ProbVector naive = score_candidates(source, prompt, visual, opts);
  PriorEstimate prior = prior_distribution(source, prompt, variants, opts);
  CalibrationParams params = calibration_params(prior, epsilon);
  ProbVector debiased = apply_posthoc_debias(naive, params);

  const double uniform = 1.0 / static_cast<double>(debiased.size());
  bool flat = true;
  for (std::size_t i = 0; i < debiased.size(); ++i)
    if (std::abs(debiased[i] - uniform) > 1e-9) flat = false;

  std::size_t label = argmax_lowest(debiased);
  return ClassifyResult{label, std::move(naive), std::move(debiased), flat};
}

}  // namespace vdd
