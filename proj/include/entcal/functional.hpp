#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <utility>

#include "entcal/enumerate.hpp"

namespace entcal {

/// A scalar function f on length-T sequences, with an optional declared
/// bound B (|f| <= B, checked whenever f is enumerated).
class FunctionalF {
 public:
  enum class Kind { NegLogProb, LogProb, Table, Custom };

  static FunctionalF neg_log_prob(ModelPtr model) { return FunctionalF(Kind::NegLogProb, std::move(model)); }
  static FunctionalF log_prob(ModelPtr model) { return FunctionalF(Kind::LogProb, std::move(model)); }

  static FunctionalF table(SequenceSpec spec, std::vector<double> values) {
    auto n = power_within(spec.M(), spec.T(), std::numeric_limits<std::size_t>::max());
    if (!n || values.size() != *n) throw DomainError("functional table needs M^T values");
    FunctionalF f(Kind::Table, spec);
    f.table_ = std::make_shared<const std::vector<double>>(std::move(values));
    return f;
  }

  static FunctionalF custom(SequenceSpec spec, std::function<double(std::span<const Token>)> fn,
                            std::string name) {
    FunctionalF f(Kind::Custom, spec);
    f.fn_ = std::move(fn);
    f.name_ = std::move(name);
    return f;
  }

  /// f + c; a constant shift leaves every tilt unchanged.
  FunctionalF shifted(double c) const {
    FunctionalF f = *this;
    f.offset_ += c;
    if (f.bound_) *f.bound_ += std::abs(c);
    return f;
  }
  FunctionalF with_bound(double bound) const {
    if (!(bound >= 0.0)) throw DomainError("functional bound must be nonnegative");
    FunctionalF f = *this;
    f.bound_ = bound;
    return f;
  }

  Kind kind() const noexcept { return kind_; }
  std::string kind_name() const {
    switch (kind_) {
      case Kind::NegLogProb: return "neg_log_prob";
      case Kind::LogProb: return "log_prob";
      case Kind::Table: return "table";
      case Kind::Custom: return "custom";
    }
    return "unknown";
  }
  const SequenceSpec& spec() const noexcept { return spec_; }
  const ModelPtr& model() const noexcept { return model_; }
  double offset() const noexcept { return offset_; }
  std::optional<double> bound() const noexcept { return bound_; }
  const std::string& name() const noexcept { return name_; }
  const std::vector<double>& table_values() const { return *table_; }

  double operator()(std::span<const Token> w) const {
    spec_.check_sequence(w);
    double v = 0.0;
    switch (kind_) {
      case Kind::NegLogProb: v = -model_->seq_log_prob(w); break;
      case Kind::LogProb: v = model_->seq_log_prob(w); break;
      case Kind::Table: v = (*table_)[sequence_index(w, spec_.M())]; break;
      case Kind::Custom: v = fn_(w); break;
    }
    v += offset_;
    check_bound(v);
    return v;
  }

  /// f over all M^T sequences in lexicographic order.
  std::vector<double> values(const ExactOptions& opts = {}) const {
    std::vector<double> out;
    switch (kind_) {
      case Kind::NegLogProb:
      case Kind::LogProb: {
        out = log_prob_table(*model_, opts);
        if (kind_ == Kind::NegLogProb)
          for (double& x : out) x = -x;
        break;
      }
      case Kind::Table: out = *table_; break;
      case Kind::Custom: {
        const std::size_t n = opts.budget.require(spec_.M(), spec_.T(), "FunctionalF::values");
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = fn_(sequence_at(i, spec_.M(), spec_.T()));
        break;
      }
    }
    if (offset_ != 0.0)
      for (double& x : out) x += offset_;
    for (double x : out) check_bound(x);
    return out;
  }

 private:
  FunctionalF(Kind kind, SequenceSpec spec) : kind_(kind), spec_(spec) {}
  FunctionalF(Kind kind, ModelPtr model)
      : kind_(kind), spec_(model ? model->spec() : throw DomainError("functional needs a model")),
        model_(std::move(model)) {}

  void check_bound(double v) const {
    if (bound_ && std::isfinite(v) && std::abs(v) > *bound_)
      throw DomainError("functional value " + std::to_string(v) + " exceeds declared bound " +
                        std::to_string(*bound_));
    if (bound_ && !std::isfinite(v)) throw DomainError("bounded functional took a non-finite value");
  }

  Kind kind_;
  SequenceSpec spec_;
  ModelPtr model_;
  std::shared_ptr<const std::vector<double>> table_;
  std::function<double(std::span<const Token>)> fn_;
  std::string name_;
  double offset_ = 0.0;
  std::optional<double> bound_;
};

}  // namespace entcal
