#pragma once

// Vocabulary, sequence shapes, error types and the small numeric kernels
// (log-sum-exp, compensated summation, vector entropy) shared by every module.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace entcal {

using Token = std::uint32_t;
using Sequence = std::vector<Token>;
using Distribution = std::vector<double>;

struct LengthError : std::length_error {
  using std::length_error::length_error;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Raised when an exact computation would exceed its enumeration budget.
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a one-parameter fit has no finite minimizer.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Cross entropies and KL divergences that are infinite are reported with
/// this value after explicit support checks, never via log(0) arithmetic.
inline constexpr double kInfiniteNats = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class Vocab {
 public:
  explicit Vocab(std::size_t size) : size_(size) {
    if (size < 2) throw DomainError("vocabulary size M must be at least 2");
  }
  std::size_t size() const noexcept { return size_; }
  bool contains(Token t) const noexcept { return t < size_; }
  bool operator==(const Vocab&) const = default;

 private:
  std::size_t size_;
};

class SequenceSpec {
 public:
  SequenceSpec(Vocab vocab, std::size_t length) : vocab_(vocab), length_(length) {
    if (length < 1) throw DomainError("sequence length T must be at least 1");
  }
  SequenceSpec(std::size_t M, std::size_t T) : SequenceSpec(Vocab(M), T) {}

  const Vocab& vocab() const noexcept { return vocab_; }
  std::size_t M() const noexcept { return vocab_.size(); }
  std::size_t T() const noexcept { return length_; }
  bool operator==(const SequenceSpec&) const = default;

  void check_tokens(std::span<const Token> tokens) const {
    for (Token t : tokens)
      if (!vocab_.contains(t))
        throw DomainError("token " + std::to_string(t) + " outside vocabulary of size " +
                          std::to_string(M()));
  }
  /// A context for predicting step t holds t-1 < T tokens.
  void check_context(std::span<const Token> context) const {
    if (context.size() >= length_)
      throw LengthError("context of length " + std::to_string(context.size()) +
                        " exceeds T-1 = " + std::to_string(length_ - 1));
    check_tokens(context);
  }
  void check_prefix(std::span<const Token> prefix) const {
    if (prefix.size() > length_)
      throw LengthError("prefix of length " + std::to_string(prefix.size()) + " exceeds T = " +
                        std::to_string(length_));
    check_tokens(prefix);
  }
  void check_sequence(std::span<const Token> w) const {
    if (w.size() != length_)
      throw LengthError("sequence of length " + std::to_string(w.size()) + ", expected T = " +
                        std::to_string(length_));
    check_tokens(w);
  }

 private:
  Vocab vocab_;
  std::size_t length_;
};

/// base^exp if it does not exceed limit.
inline std::optional<std::size_t> power_within(std::size_t base, std::size_t exp,
                                               std::size_t limit) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (r > limit / base) return std::nullopt;
    r *= base;
  }
  if (r > limit) return std::nullopt;
  return r;
}

struct EnumerationBudget {
  std::size_t max_states = 1'000'000;

  /// Returns M^exponent or throws ResourceError naming the operation.
  std::size_t require(std::size_t M, std::size_t exponent, std::string_view what) const {
    auto n = power_within(M, exponent, max_states);
    if (!n)
      throw ResourceError(std::string(what) + ": enumeration of " + std::to_string(M) + "^" +
                          std::to_string(exponent) + " states exceeds budget of " +
                          std::to_string(max_states));
    return *n;
  }
};

/// Exact-computation settings: enumeration budget and worker cap.
struct ExactOptions {
  EnumerationBudget budget{};
  std::size_t workers = 1;
};

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) noexcept {
    add(x);
    return *this;
  }
  void merge(const CompensatedSum& o) noexcept {
    add(o.sum_);
    add(o.comp_);
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double log_add_exp(double a, double b) noexcept {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(std::span<const double> xs) noexcept {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  if (m == std::numeric_limits<double>::infinity()) return m;
  CompensatedSum s;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s.value());
}

/// Safe log: log(0) is -inf, never NaN.
inline double safe_log(double p) noexcept { return p > 0.0 ? std::log(p) : kNegInf; }

/// Entropy in nats of a probability vector; 0 log 0 = 0.
inline double entropy(std::span<const double> p) noexcept {
  CompensatedSum s;
  for (double x : p)
    if (x > 0.0) s += -x * std::log(x);
  return s.value();
}

/// Rescales nonnegative weights to sum to one.
inline void normalize(Distribution& p) {
  CompensatedSum s;
  for (double x : p) s += x;
  double z = s.value();
  if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("cannot normalize a zero or non-finite vector");
  for (double& x : p) x /= z;
}

/// exp(logits) / sum exp(logits); -inf entries map to exactly zero.
inline Distribution softmax(std::span<const double> logits) {
  double lse = log_sum_exp(logits);
  if (lse == kNegInf || !std::isfinite(lse)) throw DomainError("softmax of all -inf or +inf logits");
  Distribution p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    p[i] = logits[i] == kNegInf ? 0.0 : std::exp(logits[i] - lse);
  normalize(p);
  return p;
}

/// Checks a probability vector: entries >= 0 and sum within tol of one.
inline bool is_distribution(std::span<const double> p, double tol = 1e-12) {
  CompensatedSum s;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    s += x;
  }
  return std::abs(s.value() - 1.0) <= tol;
}

/// Lexicographic index of a token sequence (first token most significant).
inline std::size_t sequence_index(std::span<const Token> w, std::size_t M) noexcept {
  std::size_t idx = 0;
  for (Token t : w) idx = idx * M + t;
  return idx;
}

inline Sequence sequence_at(std::size_t index, std::size_t M, std::size_t length) {
  Sequence w(length);
  for (std::size_t i = length; i-- > 0;) {
    w[i] = static_cast<Token>(index % M);
    index /= M;
  }
  return w;
}

}  // namespace entcal
