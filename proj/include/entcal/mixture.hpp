#pragma once

#include <utility>

#include "entcal/model.hpp"

namespace entcal {

/// Sequence-level gamma-mixture (1-gamma) D + gamma Uniform([M]^T).
///
/// The mixture does not factor per step. Conditionals are exact prefix
/// ratios
///   P(w_t | w_<t) = [(1-g) D(w_<=t) + g M^-t] / [(1-g) D(w_<t) + g M^-(t-1)]
/// with D's prefix probability carried incrementally in log space.
class MixtureModel final : public ConditionalModel {
 public:
  MixtureModel(ModelPtr base, double gamma)
      : ConditionalModel(checked(base).spec()), base_(std::move(base)), gamma_(gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("mixture weight gamma must lie in [0,1]");
  }

  const ModelPtr& base() const noexcept { return base_; }
  double gamma() const noexcept { return gamma_; }

  std::string kind() const override { return "mixture"; }
  json parameters() const override { return {{"gamma", gamma_}, {"base", to_document(*base_)}}; }

  std::unique_ptr<Cursor> start() const override {
    return std::make_unique<MixtureCursor>(*this, base_->start());
  }

 private:
  static const ConditionalModel& checked(const ModelPtr& p) {
    if (!p) throw DomainError("mixture needs a base model");
    return *p;
  }

  class MixtureCursor final : public Cursor {
   public:
    MixtureCursor(const MixtureModel& m, std::unique_ptr<Cursor> base) : m_(&m), base_(std::move(base)) {
      refresh();
    }
    MixtureCursor(const MixtureCursor& o)
        : m_(o.m_), base_(o.base_->clone()), pos_(o.pos_), log_prefix_(o.log_prefix_), dist_(o.dist_) {}

    std::size_t position() const noexcept override { return pos_; }
    const Distribution& dist() const override { return dist_; }
    void push(Token t) override {
      log_prefix_ += safe_log(base_->dist()[t]);
      base_->push(t);
      ++pos_;
      refresh();
    }
    std::unique_ptr<Cursor> clone() const override { return std::make_unique<MixtureCursor>(*this); }

   private:
    void refresh() {
      const auto& spec = m_->spec();
      if (pos_ >= spec.T()) {
        dist_.clear();
        return;
      }
      const Distribution& bd = base_->dist();
      const double g = m_->gamma_;
      if (g == 0.0) {
        dist_ = bd;
        return;
      }
      const double M = static_cast<double>(spec.M());
      const double a = (g == 1.0 ? kNegInf : std::log1p(-g)) + log_prefix_;
      const double b = std::log(g) - static_cast<double>(pos_ + 1) * std::log(M);
      Distribution logits(bd.size());
      for (std::size_t j = 0; j < bd.size(); ++j) logits[j] = log_add_exp(a + safe_log(bd[j]), b);
      dist_ = softmax(logits);
    }

    const MixtureModel* m_;
    std::unique_ptr<Cursor> base_;
    std::size_t pos_ = 0;
    double log_prefix_ = 0.0;
    Distribution dist_;
  };

  ModelPtr base_;
  double gamma_;
};

/// Per-token mixture (1-gamma) D(.|w_<t) + gamma/M. A different model from
/// the sequence-level mixture, kept for comparison only.
class PerTokenMixture final : public ConditionalModel {
 public:
  PerTokenMixture(ModelPtr base, double gamma) : ConditionalModel(base->spec()), base_(std::move(base)), gamma_(gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("mixture weight gamma must lie in [0,1]");
  }

  const ModelPtr& base() const noexcept { return base_; }
  double gamma() const noexcept { return gamma_; }

  std::string kind() const override { return "per_token_mixture"; }
  json parameters() const override { return {{"gamma", gamma_}, {"base", to_document(*base_)}}; }

  std::unique_ptr<Cursor> start() const override {
    return std::make_unique<PerTokenCursor>(*this, base_->start());
  }

 private:
  class PerTokenCursor final : public Cursor {
   public:
    PerTokenCursor(const PerTokenMixture& m, std::unique_ptr<Cursor> base) : m_(&m), base_(std::move(base)) {
      refresh();
    }
    PerTokenCursor(const PerTokenCursor& o) : m_(o.m_), base_(o.base_->clone()), dist_(o.dist_) {}
    std::size_t position() const noexcept override { return base_->position(); }
    const Distribution& dist() const override { return dist_; }
    void push(Token t) override {
      base_->push(t);
      refresh();
    }
    std::unique_ptr<Cursor> clone() const override { return std::make_unique<PerTokenCursor>(*this); }

   private:
    void refresh() {
      if (base_->position() >= m_->spec().T()) {
        dist_.clear();
        return;
      }
      const auto& bd = base_->dist();
      const double u = m_->gamma_ / static_cast<double>(bd.size());
      dist_.resize(bd.size());
      for (std::size_t j = 0; j < bd.size(); ++j) dist_[j] = (1.0 - m_->gamma_) * bd[j] + u;
      normalize(dist_);
    }
    const PerTokenMixture* m_;
    std::unique_ptr<Cursor> base_;
    Distribution dist_;
  };

  ModelPtr base_;
  double gamma_;
};

}  // namespace entcal
