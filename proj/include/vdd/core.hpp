#pragma once

/**
 * Foundational numeric types and kernels: vocabulary, logit/probability
 * vectors, stable softmax, and the deterministic RNG used everywhere.
 *
 * Conventions that the rest of the library relies on:
 * - Masked logits are IEEE -infinity, never a large negative sentinel.
 *   softmax maps them to exactly 0.
 * - Argmax ties break toward the lowest token index.
 * - All arithmetic is double precision.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vdd/error.hpp"

namespace vdd {

using TokenId = std::int32_t;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ============================================================================
// Hashing (FNV-1a, 64-bit)
// ============================================================================

/**
 * Incremental FNV-1a over a byte stream. Field encoding used throughout:
 * integers are appended little-endian at fixed width, strings as raw UTF-8
 * bytes followed by a 0x00 separator. This layout is the wire contract for
 * the procedural model and for derived noise seeds; changing it changes
 * every fixture.
 */
class Fnv1a {
 public:
  Fnv1a& update_byte(std::uint8_t b) {
    hash_ ^= b;
    hash_ *= 0x100000001b3ull;
    return *this;
  }

  Fnv1a& update_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) update_byte(p[i]);
    return *this;
  }

  Fnv1a& update_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) update_byte(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }

  Fnv1a& update_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) update_byte(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }

  Fnv1a& update_str(std::string_view s) {
    update_bytes(s.data(), s.size());
    return update_byte(0);
  }

  std::uint64_t digest() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

// Map a 64-bit hash to a uniform double in [0, 1): top 53 bits scaled down.
inline double unit_from_hash(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Map a 64-bit hash to a uniform double in [-1, 1].
inline double signed_unit_from_hash(std::uint64_t h) {
  return unit_from_hash(h) * 2.0 - 1.0;
}

// ============================================================================
// Portable float formatting
// ============================================================================

/// Render a double with 12 significant digits. Result files go through this
/// so that sub-ulp differences between math libraries cannot change output
/// bytes.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

/// Round a value to what format_double prints, for floats embedded in JSON
/// documents that must be byte-stable across platforms.
inline double round_for_output(double v) {
  if (!std::isfinite(v)) return v;
  return std::strtod(format_double(v).c_str(), nullptr);
}

// ============================================================================
// Vocabulary
// ============================================================================

inline constexpr std::string_view kUnkToken = "<unk>";

/**
 * Ordered list of distinct token strings. Every vocabulary carries a
 * designated unknown-token entry ("<unk>"); index <-> string is a bijection.
 */
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) raise(Errc::BadParam, "vocabulary must not be empty");
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
      if (!inserted) raise(Errc::BadParam, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
    auto unk = index_.find(std::string(kUnkToken));
    if (unk == index_.end()) raise(Errc::BadParam, "vocabulary is missing the <unk> entry");
    unk_ = unk->second;
  }

  std::size_t size() const noexcept { return tokens_.size(); }

  bool valid(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
  }

  const std::string& token(TokenId id) const {
    if (!valid(id)) raise(Errc::BadParam, "token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::optional<TokenId> find(std::string_view s) const {
    auto it = index_.find(std::string(s));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId unk_id() const noexcept { return unk_; }

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  // Concatenate the token strings of a sequence.
  std::string detokenize(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) out += token(id);
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId unk_ = 0;
};

// ============================================================================
// LogitVector / ProbVector
// ============================================================================

/**
 * Real-valued log-scores, one per token. Entries are finite or exactly
 * -infinity (masked); NaN and +infinity are rejected, and at least one
 * entry must be finite.
 */
class LogitVector {
 public:
  explicit LogitVector(std::vector<double> values) : values_(std::move(values)) {
    bool any_finite = false;
    for (double v : values_) {
      if (std::isnan(v)) raise(Errc::BadParam, "logit vector contains NaN");
      if (std::isinf(v) && v > 0) raise(Errc::BadParam, "logit vector contains +inf");
      if (std::isfinite(v)) any_finite = true;
    }
    if (!any_finite) raise(Errc::EmptySupport, "logit vector has no finite entry");
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  const std::vector<double>& values() const noexcept { return values_; }

  std::size_t finite_count() const noexcept {
    std::size_t n = 0;
    for (double v : values_) n += std::isfinite(v) ? 1 : 0;
    return n;
  }

 private:
  std::vector<double> values_;
};

/**
 * Probability distribution: non-negative entries summing to 1 within 1e-9.
 * Length is either the vocabulary size or a candidate-set size.
 */
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) raise(Errc::BadParam, "probability vector must not be empty");
    double sum = 0.0;
    for (double v : values_) {
      if (!(v >= 0.0)) raise(Errc::BadParam, "probability entry is negative or NaN");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      raise(Errc::BadParam, "probabilities sum to " + std::to_string(sum) + ", not 1");
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  const std::vector<double>& values() const noexcept { return values_; }

 private:
  std::vector<double> values_;
};

// Lowest-index argmax. Ties always break toward the smaller index.
inline std::size_t argmax_lowest(std::span<const double> values) {
  if (values.empty()) raise(Errc::BadParam, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

inline std::size_t argmax_lowest(const ProbVector& p) { return argmax_lowest(std::span(p.values())); }
inline std::size_t argmax_lowest(const LogitVector& l) { return argmax_lowest(std::span(l.values())); }

// ============================================================================
// softmax / log_softmax
// ============================================================================

/**
 * Numerically stable softmax: subtracts the finite maximum before
 * exponentiating, so no finite input overflows. Masked (-inf) entries map
 * to exactly 0.
 */
inline ProbVector softmax(const LogitVector& l) {
  double max_v = kNegInf;
  for (double v : l.values())
    if (std::isfinite(v) && v > max_v) max_v = v;

  std::vector<double> out(l.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (std::isfinite(l[i])) {
      out[i] = std::exp(l[i] - max_v);
      sum += out[i];
    }
  }
  for (double& v : out) v /= sum;
  return ProbVector(std::move(out));
}

// Companion of softmax: exp(log_softmax(l)) == softmax(l); masked entries
// stay -inf.
inline LogitVector log_softmax(const LogitVector& l) {
  double max_v = kNegInf;
  for (double v : l.values())
    if (std::isfinite(v) && v > max_v) max_v = v;

  double sum = 0.0;
  for (double v : l.values())
    if (std::isfinite(v)) sum += std::exp(v - max_v);
  const double lse = max_v + std::log(sum);

  std::vector<double> out(l.size(), kNegInf);
  for (std::size_t i = 0; i < l.size(); ++i)
    if (std::isfinite(l[i])) out[i] = l[i] - lse;
  return LogitVector(std::move(out));
}

// ============================================================================
// SeededRng
// ============================================================================

/**
 * SplitMix64 generator. Chosen for bit-identical output on every platform;
 * std::mt19937 plus standard distributions would not give that.
 *
 * Sub-streams are derived by hashing (seed, sample_id, config_index) with
 * FNV-1a, so a stream's output depends only on its key, never on the order
 * in which streams are created or consumed.
 */
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  static SeededRng for_stream(std::uint64_t seed, std::string_view sample_id,
                              std::uint64_t config_index) {
    Fnv1a h;
    h.update_u64(seed).update_str(sample_id).update_u64(config_index);
    return SeededRng(h.digest());
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_unit() { return unit_from_hash(next_u64()); }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

 private:
  std::uint64_t state_;
};

}  // namespace vdd
