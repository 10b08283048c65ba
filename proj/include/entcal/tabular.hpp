#pragma once

#include <utility>

#include "entcal/enumerate.hpp"

namespace entcal {

/// Explicit distribution over all M^T sequences, stored as a tree of log
/// prefix marginals so conditionals cost O(M) per step.
class SequenceTable {
 public:
  /// `log_weights` are unnormalized, one per sequence in lexicographic order.
  SequenceTable(SequenceSpec spec, std::span<const double> log_weights) : M_(spec.M()), T_(spec.T()) {
    auto n = power_within(M_, T_, std::numeric_limits<std::size_t>::max());
    if (!n || log_weights.size() != *n) throw DomainError("sequence table needs M^T log weights");
    log_normalizer_ = log_sum_exp(log_weights);
    if (!std::isfinite(log_normalizer_)) throw DomainError("sequence table weights do not normalize");
    levels_.resize(T_ + 1);
    levels_[T_].resize(*n);
    for (std::size_t i = 0; i < *n; ++i)
      levels_[T_][i] = log_weights[i] == kNegInf ? kNegInf : log_weights[i] - log_normalizer_;
    for (std::size_t l = T_; l-- > 0;) {
      const auto& below = levels_[l + 1];
      auto& level = levels_[l];
      level.resize(below.size() / M_);
      for (std::size_t c = 0; c < level.size(); ++c)
        level[c] = log_sum_exp(std::span<const double>(below).subspan(c * M_, M_));
    }
  }

  double log_normalizer() const noexcept { return log_normalizer_; }
  const std::vector<double>& log_probs() const noexcept { return levels_[T_]; }

  /// Conditional at a prefix with lexicographic code `code` of length `pos`.
  /// Zero-probability prefixes continue uniformly.
  Distribution conditional(std::size_t pos, std::size_t code) const {
    const double parent = levels_[pos][code];
    if (parent == kNegInf) return Distribution(M_, 1.0 / static_cast<double>(M_));
    Distribution d(M_);
    for (std::size_t j = 0; j < M_; ++j) {
      const double child = levels_[pos + 1][code * M_ + j];
      d[j] = child == kNegInf ? 0.0 : std::exp(child - parent);
    }
    normalize(d);
    return d;
  }

  class TableCursor final : public Cursor {
   public:
    explicit TableCursor(const SequenceTable& t) : t_(&t) { refresh(); }
    std::size_t position() const noexcept override { return pos_; }
    const Distribution& dist() const override { return dist_; }
    void push(Token tok) override {
      code_ = code_ * t_->M_ + tok;
      ++pos_;
      refresh();
    }
    std::unique_ptr<Cursor> clone() const override { return std::make_unique<TableCursor>(*this); }

   private:
    void refresh() {
      if (pos_ < t_->T_)
        dist_ = t_->conditional(pos_, code_);
      else
        dist_.clear();
    }
    const SequenceTable* t_;
    std::size_t pos_ = 0;
    std::size_t code_ = 0;
    Distribution dist_;
  };

 private:
  std::size_t M_, T_;
  double log_normalizer_ = 0.0;
  std::vector<std::vector<double>> levels_;
};

/// A ConditionalModel given by explicit sequence probabilities.
class TabularModel final : public ConditionalModel {
 public:
  TabularModel(SequenceSpec spec, std::span<const double> log_weights)
      : ConditionalModel(spec), table_(spec, log_weights) {}

  static TabularModel from_probabilities(SequenceSpec spec, std::span<const double> probs) {
    std::vector<double> lw(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (!(probs[i] >= 0.0)) throw DomainError("negative sequence probability");
      lw[i] = safe_log(probs[i]);
    }
    return TabularModel(spec, lw);
  }

  /// Materializes any enumerable model.
  static TabularModel materialize(const ConditionalModel& m, const ExactOptions& opts = {}) {
    return TabularModel(m.spec(), log_prob_table(m, opts));
  }

  const SequenceTable& table() const noexcept { return table_; }

  std::string kind() const override { return "tabular"; }
  json parameters() const override {
    std::vector<double> p(table_.log_probs().size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(table_.log_probs()[i]);
    return {{"probabilities", p}};
  }
  static TabularModel from_parameters(SequenceSpec spec, const json& p) {
    return from_probabilities(spec, p.at("probabilities").get<std::vector<double>>());
  }

  std::unique_ptr<Cursor> start() const override { return std::make_unique<SequenceTable::TableCursor>(table_); }

 private:
  SequenceTable table_;
};

}  // namespace entcal
