#pragma once

#include <utility>

#include "entcal/model.hpp"

namespace entcal {

/// Worst-case drift construction: emits from `base` until, with probability
/// p decided before each emission, it switches for good to uniform output.
///
/// The latent mode is marginalized exactly by a two-hypothesis forward
/// recursion over log joint weights (prefix, faithful) and (prefix, uniform).
class DriftModel final : public ConditionalModel {
 public:
  DriftModel(ModelPtr base, double switch_prob)
      : ConditionalModel(base->spec()), base_(std::move(base)), p_(switch_prob) {
    if (!(p_ >= 0.0 && p_ <= 1.0)) throw DomainError("switch probability must lie in [0,1]");
  }
  /// Default switch probability 1/T.
  explicit DriftModel(ModelPtr base)
      : DriftModel(base, 1.0 / static_cast<double>(base->spec().T())) {}

  const ModelPtr& base() const noexcept { return base_; }
  double switch_prob() const noexcept { return p_; }

  std::string kind() const override { return "drift"; }
  json parameters() const override { return {{"switch_prob", p_}, {"base", to_document(*base_)}}; }

  std::unique_ptr<Cursor> start() const override {
    return std::make_unique<DriftCursor>(*this, base_->start());
  }

  /// Posterior probability of uniform mode at the emission of the next token.
  double uniform_posterior(std::span<const Token> context) const {
    spec().check_context(context);
    auto c = start();
    for (Token t : context) c->push(t);
    return static_cast<const DriftCursor&>(*c).uniform_weight();
  }

 private:
  class DriftCursor final : public Cursor {
   public:
    DriftCursor(const DriftModel& m, std::unique_ptr<Cursor> base) : m_(&m), base_(std::move(base)) {
      refresh();
    }
    DriftCursor(const DriftCursor& o)
        : m_(o.m_),
          base_(o.base_->clone()),
          pos_(o.pos_),
          log_faithful_(o.log_faithful_),
          log_uniform_(o.log_uniform_),
          emit_faithful_(o.emit_faithful_),
          emit_uniform_(o.emit_uniform_),
          pi_uniform_(o.pi_uniform_),
          dist_(o.dist_) {}

    std::size_t position() const noexcept override { return pos_; }
    const Distribution& dist() const override { return dist_; }
    double uniform_weight() const noexcept { return pi_uniform_; }

    void push(Token t) override {
      const double M = static_cast<double>(m_->spec().M());
      log_faithful_ = emit_faithful_ + safe_log(base_->dist()[t]);
      log_uniform_ = emit_uniform_ - std::log(M);
      base_->push(t);
      ++pos_;
      refresh();
    }
    std::unique_ptr<Cursor> clone() const override { return std::make_unique<DriftCursor>(*this); }

   private:
    void refresh() {
      if (pos_ >= m_->spec().T()) {
        dist_.clear();
        return;
      }
      const double p = m_->p_;
      // Switch decision precedes emission.
      emit_faithful_ = log_faithful_ + safe_log(1.0 - p);
      emit_uniform_ = log_add_exp(log_uniform_, log_faithful_ + safe_log(p));
      const double z = log_add_exp(emit_faithful_, emit_uniform_);
      const double pf = emit_faithful_ == kNegInf ? 0.0 : std::exp(emit_faithful_ - z);
      pi_uniform_ = emit_uniform_ == kNegInf ? 0.0 : std::exp(emit_uniform_ - z);
      const auto& bd = base_->dist();
      const double u = pi_uniform_ / static_cast<double>(bd.size());
      dist_.resize(bd.size());
      if (pi_uniform_ == 0.0) {
        dist_ = bd;
        return;
      }
      for (std::size_t j = 0; j < bd.size(); ++j) dist_[j] = pf * bd[j] + u;
      normalize(dist_);
    }

    const DriftModel* m_;
    std::unique_ptr<Cursor> base_;
    std::size_t pos_ = 0;
    double log_faithful_ = 0.0;
    double log_uniform_ = kNegInf;
    double emit_faithful_ = 0.0;
    double emit_uniform_ = kNegInf;
    double pi_uniform_ = 0.0;
    Distribution dist_;
  };

  ModelPtr base_;
  double p_;
};

/// Generates by simulating the latent mode explicitly (switch before each
/// emission). Same law as sampling the marginal conditionals.
inline Sequence sample_drift_latent(const DriftModel& m, RngStream& rng) {
  const auto& spec = m.spec();
  Sequence out;
  auto c = m.base()->start();
  bool uniform = false;
  for (std::size_t t = 0; t < spec.T(); ++t) {
    if (!uniform && rng.uniform() < m.switch_prob()) uniform = true;
    Token tok = uniform ? static_cast<Token>(rng.below(spec.M())) : sample_token(c->dist(), rng.uniform());
    out.push_back(tok);
    c->push(tok);
  }
  return out;
}

}  // namespace entcal
