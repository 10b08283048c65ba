#pragma once

#include <utility>

#include "entcal/enumerate.hpp"

namespace entcal {

/// Conditional tables that read only the last tau tokens.
///
/// Step s (0-based, predicting token s+1) uses table step_table()[s], which
/// has M^min(tau, s) rows indexed by the truncated context. Steps may share a
/// table (a position-independent n-gram) or own one each (exact marginals of
/// a non-stationary source).
class LimitedMemoryModel final : public ConditionalModel {
 public:
  using Table = std::vector<Distribution>;

  LimitedMemoryModel(SequenceSpec spec, std::size_t tau, std::vector<Table> tables,
                     std::vector<std::size_t> step_table)
      : ConditionalModel(spec), tau_(tau), tables_(std::move(tables)), step_table_(std::move(step_table)) {
    if (tau_ < 1) throw DomainError("memory window tau must be at least 1");
    if (step_table_.size() != spec.T()) throw DomainError("need one table index per step");
    const std::size_t M = spec.M();
    for (std::size_t s = 0; s < spec.T(); ++s) {
      if (step_table_[s] >= tables_.size()) throw DomainError("step table index out of range");
      auto rows = power_within(M, std::min(tau_, s), std::numeric_limits<std::size_t>::max());
      const Table& t = tables_[step_table_[s]];
      if (!rows || t.size() != *rows) throw DomainError("limited-memory table has wrong row count");
      for (const auto& row : t)
        if (row.size() != M || !is_distribution(row))
          throw DomainError("limited-memory row is not a distribution");
    }
    window_mod_ = *power_within(M, tau_, std::numeric_limits<std::size_t>::max());
  }

  std::size_t tau() const noexcept { return tau_; }
  const std::vector<Table>& tables() const noexcept { return tables_; }
  const std::vector<std::size_t>& step_table() const noexcept { return step_table_; }

  std::string kind() const override { return "limited_memory"; }
  json parameters() const override {
    return {{"tau", tau_}, {"tables", tables_}, {"step_table", step_table_}};
  }
  static LimitedMemoryModel from_parameters(SequenceSpec spec, const json& p) {
    return LimitedMemoryModel(spec, p.at("tau").get<std::size_t>(), p.at("tables").get<std::vector<Table>>(),
                              p.at("step_table").get<std::vector<std::size_t>>());
  }

  std::unique_ptr<Cursor> start() const override { return std::make_unique<WindowCursor>(*this); }

  /// Wraps `model` so each prediction sees only the last tau tokens, as if
  /// the model were restarted on the truncated context.
  static LimitedMemoryModel truncate(const ConditionalModel& model, std::size_t tau,
                                     const EnumerationBudget& budget = {}) {
    const auto& spec = model.spec();
    const std::size_t M = spec.M();
    const std::size_t L = std::min(tau, spec.T() - 1);
    std::vector<Table> tables;
    std::vector<std::size_t> step_table(spec.T());
    for (std::size_t s = 0; s <= L; ++s) {
      std::size_t rows = budget.require(M, s + 1, "LimitedMemoryModel::truncate") / M;
      Table t;
      for (std::size_t y = 0; y < rows; ++y) t.push_back(model.next_dist(sequence_at(y, M, s)));
      tables.push_back(std::move(t));
    }
    for (std::size_t s = 0; s < spec.T(); ++s) step_table[s] = std::min(s, L);
    return LimitedMemoryModel(spec, tau, std::move(tables), std::move(step_table));
  }

 private:
  class WindowCursor final : public Cursor {
   public:
    explicit WindowCursor(const LimitedMemoryModel& m) : m_(&m) {}
    std::size_t position() const noexcept override { return pos_; }
    const Distribution& dist() const override { return m_->tables_[m_->step_table_[pos_]][code_]; }
    void push(Token t) override {
      code_ = (code_ * m_->spec().M() + t) % m_->window_mod_;
      ++pos_;
    }
    std::unique_ptr<Cursor> clone() const override { return std::make_unique<WindowCursor>(*this); }

   private:
    const LimitedMemoryModel* m_;
    std::size_t pos_ = 0;
    std::size_t code_ = 0;
  };

  std::size_t tau_;
  std::vector<Table> tables_;
  std::vector<std::size_t> step_table_;
  std::size_t window_mod_ = 1;
};

/// Exact tau-window marginal of `truth`: the row for recent context y at step
/// t is sum_x Pr(x, y) Pr(W_t | x, y) / Pr(y), enumerating every deep past x.
/// Contexts with Pr(y) = 0 get a uniform row.
inline LimitedMemoryModel marginalize_to_window(const ConditionalModel& truth, std::size_t tau,
                                                const ExactOptions& opts = {}) {
  const auto& spec = truth.spec();
  const std::size_t M = spec.M(), T = spec.T();
  if (tau < 1) throw DomainError("memory window tau must be at least 1");
  opts.budget.require(M, T, "marginalize_to_window");
  std::vector<std::size_t> rows(T);
  for (std::size_t s = 0; s < T; ++s) rows[s] = *power_within(M, std::min(tau, s), opts.budget.max_states);

  using Acc = std::vector<std::vector<double>>;  // [step][row * M + j]
  struct Accumulate {
    Acc acc;
    std::size_t M, tau;
    bool operator()(const WalkNode<CursorBundle>& node) {
      if (node.log_weight == kNegInf) return false;
      const std::size_t s = node.prefix.size();
      const std::size_t len = std::min(tau, s);
      const std::size_t y = sequence_index(node.prefix.subspan(s - len), M);
      const double w = std::exp(node.log_weight);
      const auto& d = node.state.lead();
      for (std::size_t j = 0; j < M; ++j) acc[s][y * M + j] += w * d[j];
      return true;
    }
  };
  auto make = [&] {
    Accumulate a{Acc(T), M, tau};
    for (std::size_t s = 0; s < T; ++s) a.acc[s].assign(rows[s] * M, 0.0);
    return a;
  };
  CursorBundle root{&truth};
  auto parts = walk_partitioned<Accumulate>(root, M, T - 1, opts.workers, make);

  std::vector<LimitedMemoryModel::Table> tables(T);
  std::vector<std::size_t> step_table(T);
  for (std::size_t s = 0; s < T; ++s) {
    step_table[s] = s;
    for (std::size_t y = 0; y < rows[s]; ++y) {
      Distribution row(M, 0.0);
      for (const auto& part : parts)
        for (std::size_t j = 0; j < M; ++j) row[j] += part.acc[s][y * M + j];
      double z = 0.0;
      for (double x : row) z += x;
      if (z > 0.0)
        normalize(row);
      else
        row.assign(M, 1.0 / static_cast<double>(M));
      tables[s].push_back(std::move(row));
    }
  }
  return LimitedMemoryModel(spec, tau, std::move(tables), std::move(step_table));
}

/// Add-lambda smoothed tau-gram fit. Steps s < tau get their own tables
/// (shorter contexts); all steps s >= tau pool counts into one table.
inline LimitedMemoryModel fit_ngram(SequenceSpec spec, std::span<const Sequence> samples, std::size_t tau,
                                    double lambda, std::size_t min_samples = 1,
                                    const EnumerationBudget& budget = {}) {
  const std::size_t M = spec.M(), T = spec.T();
  if (tau < 1) throw DomainError("memory window tau must be at least 1");
  if (!(lambda > 0.0)) throw DomainError("smoothing lambda must be positive");
  if (samples.size() < min_samples)
    throw DataError("n-gram fit needs at least " + std::to_string(min_samples) + " sequences, got " +
                    std::to_string(samples.size()));
  const std::size_t shared = std::min(tau, T - 1);  // index of the pooled table
  std::vector<std::vector<double>> counts(shared + 1);
  for (std::size_t k = 0; k <= shared; ++k)
    counts[k].assign(budget.require(M, std::min(tau, k) + 1, "fit_ngram"), 0.0);
  for (const auto& w : samples) {
    spec.check_sequence(w);
    for (std::size_t s = 0; s < T; ++s) {
      const std::size_t k = std::min(s, shared);
      const std::size_t len = std::min(tau, s);
      const std::size_t y = sequence_index(std::span<const Token>(w).subspan(s - len, len), M);
      counts[k][y * M + w[s]] += 1.0;
    }
  }
  std::vector<LimitedMemoryModel::Table> tables(shared + 1);
  for (std::size_t k = 0; k <= shared; ++k) {
    const std::size_t rows = counts[k].size() / M;
    for (std::size_t y = 0; y < rows; ++y) {
      Distribution row(M);
      for (std::size_t j = 0; j < M; ++j) row[j] = counts[k][y * M + j] + lambda;
      normalize(row);
      tables[k].push_back(std::move(row));
    }
  }
  std::vector<std::size_t> step_table(T);
  for (std::size_t s = 0; s < T; ++s) step_table[s] = std::min(s, shared);
  return LimitedMemoryModel(spec, tau, std::move(tables), std::move(step_table));
}

}  // namespace entcal
