#pragma once

#include <cstdio>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "entcal/core.hpp"
#include "entcal/rng.hpp"

namespace entcal {

using json = nlohmann::json;

/// Incremental state of a model after reading a prefix.
///
/// dist() is the next-token distribution and is only meaningful while
/// position() < T. Cursors are cheap to clone, which is how exact
/// enumeration branches on every candidate token.
class Cursor {
 public:
  virtual ~Cursor() = default;
  virtual std::size_t position() const noexcept = 0;
  virtual const Distribution& dist() const = 0;
  virtual void push(Token token) = 0;
  virtual std::unique_ptr<Cursor> clone() const = 0;
};

/// An autoregressive distribution over [M]^T defined by its conditionals.
///
/// Models are immutable after construction and may be shared across threads;
/// all mutable state lives in cursors owned by the caller.
class ConditionalModel {
 public:
  explicit ConditionalModel(SequenceSpec spec) : spec_(spec) {}
  virtual ~ConditionalModel() = default;

  const SequenceSpec& spec() const noexcept { return spec_; }

  virtual std::string kind() const = 0;
  /// Kind-specific parameters for the serialized document.
  virtual json parameters() const = 0;
  virtual std::unique_ptr<Cursor> start() const = 0;

  /// Positions a fresh cursor after `prefix`.
  std::unique_ptr<Cursor> cursor_at(std::span<const Token> prefix) const {
    spec_.check_prefix(prefix);
    auto c = start();
    for (Token t : prefix) c->push(t);
    return c;
  }

  Distribution next_dist(std::span<const Token> context) const {
    spec_.check_context(context);
    auto c = start();
    for (Token t : context) c->push(t);
    return c->dist();
  }

  /// log P(w_1..w_k) for any prefix length k <= T.
  double prefix_log_prob(std::span<const Token> prefix) const {
    spec_.check_prefix(prefix);
    auto c = start();
    double lp = 0.0;
    for (Token t : prefix) {
      lp += safe_log(c->dist()[t]);
      c->push(t);
    }
    return lp;
  }

  /// log P(w) in nats; -inf only when some step probability is exactly zero.
  double seq_log_prob(std::span<const Token> w) const {
    spec_.check_sequence(w);
    return prefix_log_prob(w);
  }

 private:
  SequenceSpec spec_;
};

using ModelPtr = std::shared_ptr<const ConditionalModel>;

inline constexpr int kFormatVersion = 1;

/// Versioned structured document {format_version, kind, M, T, parameters}.
inline json to_document(const ConditionalModel& m) {
  return {{"format_version", kFormatVersion},
          {"kind", m.kind()},
          {"M", m.spec().M()},
          {"T", m.spec().T()},
          {"parameters", m.parameters()}};
}

/// Content hash of a model's document, as 16 hex digits.
inline std::string model_hash(const ConditionalModel& m) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(detail::fnv1a64(to_document(m).dump())));
  return buf;
}

/// Inverse-CDF draw over ascending token ids. Never floors probabilities.
inline Token sample_token(std::span<const double> dist, double u) {
  double cum = 0.0;
  std::size_t last_positive = dist.size();
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (dist[j] <= 0.0) continue;
    cum += dist[j];
    last_positive = j;
    if (u < cum) return static_cast<Token>(j);
  }
  if (last_positive == dist.size()) throw DomainError("cannot sample from an all-zero distribution");
  return static_cast<Token>(last_positive);  // rounding: u beyond the accumulated mass
}

/// Continues `cursor` to length T, appending draws to `out`.
inline void sample_continue(Cursor& cursor, std::size_t T, RngStream& rng, Sequence& out) {
  while (cursor.position() < T) {
    Token t = sample_token(cursor.dist(), rng.uniform());
    out.push_back(t);
    cursor.push(t);
  }
}

/// Draws a length-T sequence that begins with `prefix`.
inline Sequence sample_sequence(const ConditionalModel& model, RngStream& rng,
                                std::span<const Token> prefix = {}) {
  const auto& spec = model.spec();
  if (prefix.size() >= spec.T())
    throw LengthError("seed prefix must be shorter than T");
  spec.check_tokens(prefix);
  Sequence out(prefix.begin(), prefix.end());
  out.reserve(spec.T());
  auto c = model.start();
  for (Token t : prefix) c->push(t);
  sample_continue(*c, spec.T(), rng, out);
  return out;
}

}  // namespace entcal
