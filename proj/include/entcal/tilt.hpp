#pragma once

// Exponentially tilted models.
//
// GlobalTiltModel reweights whole sequences, exp(alpha f(w)) P(w) / Z_alpha,
// and needs the full M^T table. StepTiltModel reweights each conditional by
// exp(alpha g_t(w_t)) with a per-step normalizer, where g_t comes from a
// StepFeature (one-step lookahead entropy, or the log-probability of a
// limited-memory comparator).

#include <utility>

#include "entcal/functional.hpp"
#include "entcal/tabular.hpp"

namespace entcal {

/// Per-step feature values for every candidate next token.
class FeatureState {
 public:
  virtual ~FeatureState() = default;
  /// Writes g(j) for each candidate j at the base cursor's position.
  virtual void values(const Cursor& base, std::span<double> out) const = 0;
  virtual void push(Token t) = 0;
  virtual std::unique_ptr<FeatureState> clone() const = 0;
};

class StepFeature {
 public:
  virtual ~StepFeature() = default;
  virtual std::string kind() const = 0;
  virtual json parameters() const = 0;
  virtual std::unique_ptr<FeatureState> start() const = 0;
};

using FeaturePtr = std::shared_ptr<const StepFeature>;

/// g_t(j) = H(base(. | w_<t, j)): the entropy one step ahead after
/// tentatively emitting j. Zero at the final step, where nothing follows.
class LookaheadEntropyFeature final : public StepFeature {
 public:
  explicit LookaheadEntropyFeature(std::size_t T) : T_(T) {}

  std::string kind() const override { return "lookahead_entropy"; }
  json parameters() const override { return json::object(); }
  std::unique_ptr<FeatureState> start() const override { return std::make_unique<State>(T_); }

 private:
  class State final : public FeatureState {
   public:
    explicit State(std::size_t T) : T_(T) {}
    void values(const Cursor& base, std::span<double> out) const override {
      if (base.position() + 1 >= T_) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
      }
      for (std::size_t j = 0; j < out.size(); ++j) {
        auto next = base.clone();
        next->push(static_cast<Token>(j));
        out[j] = entropy(next->dist());
      }
    }
    void push(Token) override {}
    std::unique_ptr<FeatureState> clone() const override { return std::make_unique<State>(*this); }

   private:
    std::size_t T_;
  };

  std::size_t T_;
};

/// g_t(j) = log comparator(j | w_<t) on the listed steps (1-based), zero
/// elsewhere. Exact zeros are floored at log(p_min) so the tilt stays finite.
class ComparatorLogFeature final : public StepFeature {
 public:
  static constexpr double kDefaultFloor = 1e-300;

  ComparatorLogFeature(ModelPtr comparator, std::vector<std::size_t> steps, double p_min = kDefaultFloor)
      : comparator_(std::move(comparator)), steps_(std::move(steps)), p_min_(p_min) {
    if (!comparator_) throw DomainError("comparator feature needs a model");
    if (!(p_min_ > 0.0)) throw DomainError("probability floor must be positive");
    active_.assign(comparator_->spec().T(), false);
    for (std::size_t t : steps_) {
      if (t < 1 || t > comparator_->spec().T()) throw DomainError("tilt step outside 1..T");
      active_[t - 1] = true;
    }
  }

  const ModelPtr& comparator() const noexcept { return comparator_; }
  const std::vector<std::size_t>& steps() const noexcept { return steps_; }
  double floor() const noexcept { return p_min_; }

  std::string kind() const override { return "comparator_log"; }
  json parameters() const override {
    return {{"comparator", to_document(*comparator_)}, {"steps", steps_}, {"p_min", p_min_}};
  }
  std::unique_ptr<FeatureState> start() const override {
    return std::make_unique<State>(*this, comparator_->start());
  }

 private:
  class State final : public FeatureState {
   public:
    State(const ComparatorLogFeature& f, std::unique_ptr<Cursor> c) : f_(&f), c_(std::move(c)) {}
    State(const State& o) : f_(o.f_), c_(o.c_->clone()) {}
    void values(const Cursor& base, std::span<double> out) const override {
      if (!f_->active_[base.position()]) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
      }
      const auto& d = c_->dist();
      const double lf = std::log(f_->p_min_);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] = d[j] > 0.0 ? std::log(d[j]) : lf;
    }
    void push(Token t) override { c_->push(t); }
    std::unique_ptr<FeatureState> clone() const override { return std::make_unique<State>(*this); }

   private:
    const ComparatorLogFeature* f_;
    std::unique_ptr<Cursor> c_;
  };

  ModelPtr comparator_;
  std::vector<std::size_t> steps_;
  double p_min_;
  std::vector<bool> active_;
};

/// Log conditional of a step tilt: log base(j) + alpha g(j) - log Z.
/// Entries where the base is exactly zero stay at -inf.
inline void tilted_log_row(std::span<const double> base, std::span<const double> g, double alpha,
                           std::span<double> out) {
  for (std::size_t j = 0; j < base.size(); ++j)
    out[j] = base[j] > 0.0 ? std::log(base[j]) + alpha * g[j] : kNegInf;
  const double lz = log_sum_exp(out);
  for (double& x : out)
    if (x != kNegInf) x -= lz;
}

/// Per-step tilt P_alpha(j | w_<t) proportional to P(j | w_<t) exp(alpha g_t(j)).
class StepTiltModel final : public ConditionalModel {
 public:
  StepTiltModel(ModelPtr base, FeaturePtr feature, double alpha)
      : ConditionalModel(base->spec()), base_(std::move(base)), feature_(std::move(feature)), alpha_(alpha) {
    if (!feature_) throw DomainError("step tilt needs a feature");
    if (!std::isfinite(alpha_)) throw DomainError("tilt parameter must be finite");
  }

  const ModelPtr& base() const noexcept { return base_; }
  const FeaturePtr& feature() const noexcept { return feature_; }
  double alpha() const noexcept { return alpha_; }

  std::string kind() const override { return "step_tilt"; }
  json parameters() const override {
    return {{"alpha", alpha_},
            {"base", to_document(*base_)},
            {"feature", {{"kind", feature_->kind()}, {"parameters", feature_->parameters()}}}};
  }

  std::unique_ptr<Cursor> start() const override {
    return std::make_unique<TiltCursor>(*this, base_->start(), feature_->start());
  }

 private:
  class TiltCursor final : public Cursor {
   public:
    TiltCursor(const StepTiltModel& m, std::unique_ptr<Cursor> base, std::unique_ptr<FeatureState> feat)
        : m_(&m), base_(std::move(base)), feat_(std::move(feat)) {
      refresh();
    }
    TiltCursor(const TiltCursor& o) : m_(o.m_), base_(o.base_->clone()), feat_(o.feat_->clone()), dist_(o.dist_) {}

    std::size_t position() const noexcept override { return base_->position(); }
    const Distribution& dist() const override { return dist_; }
    void push(Token t) override {
      base_->push(t);
      feat_->push(t);
      refresh();
    }
    std::unique_ptr<Cursor> clone() const override { return std::make_unique<TiltCursor>(*this); }

   private:
    void refresh() {
      if (base_->position() >= m_->spec().T()) {
        dist_.clear();
        return;
      }
      const auto& bd = base_->dist();
      if (m_->alpha_ == 0.0) {
        dist_ = bd;
        return;
      }
      Distribution g(bd.size()), lp(bd.size());
      feat_->values(*base_, g);
      tilted_log_row(bd, g, m_->alpha_, lp);
      dist_.resize(bd.size());
      for (std::size_t j = 0; j < bd.size(); ++j) dist_[j] = lp[j] == kNegInf ? 0.0 : std::exp(lp[j]);
      normalize(dist_);
    }

    const StepTiltModel* m_;
    std::unique_ptr<Cursor> base_;
    std::unique_ptr<FeatureState> feat_;
    Distribution dist_;
  };

  ModelPtr base_;
  FeaturePtr feature_;
  double alpha_;
};

/// Serializable description of a functional. Custom functions have no
/// document form.
inline json functional_descriptor(const FunctionalF& f) {
  json d = {{"kind", f.kind_name()}, {"offset", f.offset()}};
  if (f.bound()) d["bound"] = *f.bound();
  switch (f.kind()) {
    case FunctionalF::Kind::NegLogProb:
    case FunctionalF::Kind::LogProb: d["model"] = to_document(*f.model()); break;
    case FunctionalF::Kind::Table: d["values"] = f.table_values(); break;
    case FunctionalF::Kind::Custom: throw DataError("custom functional '" + f.name() + "' cannot be serialized");
  }
  return d;
}

/// Sequence-level tilt exp(alpha f(w)) base(w) / Z_alpha, materialized over
/// all M^T sequences.
class GlobalTiltModel final : public ConditionalModel {
 public:
  GlobalTiltModel(ModelPtr base, FunctionalF f, double alpha, const ExactOptions& opts = {})
      : ConditionalModel(base->spec()),
        base_(std::move(base)),
        f_(std::move(f)),
        alpha_(alpha),
        table_(base_->spec(), tilted_weights(*base_, f_, alpha, opts)) {}

  const ModelPtr& base() const noexcept { return base_; }
  const FunctionalF& functional() const noexcept { return f_; }
  double alpha() const noexcept { return alpha_; }
  double log_partition() const noexcept { return table_.log_normalizer(); }
  const SequenceTable& table() const noexcept { return table_; }

  std::string kind() const override { return "global_tilt"; }
  json parameters() const override {
    return {{"alpha", alpha_},
            {"base", to_document(*base_)},
            {"functional", functional_descriptor(f_)},
            {"log_partition", log_partition()}};
  }
  std::unique_ptr<Cursor> start() const override { return std::make_unique<SequenceTable::TableCursor>(table_); }

 private:
  static std::vector<double> tilted_weights(const ConditionalModel& base, const FunctionalF& f, double alpha,
                                            const ExactOptions& opts) {
    if (!(base.spec() == f.spec())) throw DomainError("functional and model disagree on the sequence space");
    if (!std::isfinite(alpha)) throw DomainError("tilt parameter must be finite");
    auto lw = log_prob_table(base, opts);
    auto fv = f.values(opts);
    for (std::size_t i = 0; i < lw.size(); ++i) {
      if (lw[i] == kNegInf) continue;
      if (!std::isfinite(fv[i])) throw DomainError("tilt functional is not finite on the base support");
      if (alpha != 0.0) lw[i] += alpha * fv[i];
    }
    return lw;
  }

  ModelPtr base_;
  FunctionalF f_;
  double alpha_;
  SequenceTable table_;
};

}  // namespace entcal
