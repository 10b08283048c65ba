#pragma once

#include <utility>

#include "entcal/model.hpp"

namespace entcal {

/// Order-k Markov chain with explicit tables for the first k steps.
///
/// Step t (1-based) with t <= k reads its row from initial()[t-1], a table of
/// M^(t-1) rows indexed by the whole context; later steps read transition(),
/// M^k rows indexed by the last k tokens. No padding token is used.
class MarkovModel final : public ConditionalModel {
 public:
  using Table = std::vector<Distribution>;

  MarkovModel(SequenceSpec spec, std::size_t order, std::vector<Table> initial, Table transition)
      : ConditionalModel(spec),
        order_(order),
        initial_(std::move(initial)),
        transition_(std::move(transition)) {
    const std::size_t M = spec.M();
    if (initial_.size() != order_)
      throw DomainError("Markov model of order k needs k initial tables");
    auto check_table = [&](const Table& table, std::size_t ctx_len, const char* what) {
      auto rows = power_within(M, ctx_len, std::numeric_limits<std::size_t>::max());
      if (!rows || table.size() != *rows)
        throw DomainError(std::string(what) + " has wrong row count");
      for (const auto& row : table) {
        if (row.size() != M) throw DomainError(std::string(what) + " row has wrong width");
        if (!is_distribution(row)) throw DomainError(std::string(what) + " row is not a distribution");
      }
    };
    for (std::size_t l = 0; l < order_; ++l) check_table(initial_[l], l, "initial table");
    check_table(transition_, order_, "transition table");
    context_mod_ = *power_within(M, order_, std::numeric_limits<std::size_t>::max());
  }

  static MarkovModel iid(SequenceSpec spec, Distribution p) {
    return MarkovModel(spec, 0, {}, Table{std::move(p)});
  }
  static MarkovModel uniform(SequenceSpec spec) {
    return iid(spec, Distribution(spec.M(), 1.0 / static_cast<double>(spec.M())));
  }
  static MarkovModel deterministic(SequenceSpec spec, Token token) {
    spec.check_tokens(std::span<const Token>(&token, 1));
    Distribution p(spec.M(), 0.0);
    p[token] = 1.0;
    return iid(spec, std::move(p));
  }

  std::size_t order() const noexcept { return order_; }
  const std::vector<Table>& initial() const noexcept { return initial_; }
  const Table& transition() const noexcept { return transition_; }

  std::string kind() const override { return "markov"; }

  json parameters() const override {
    return {{"order", order_}, {"initial", initial_}, {"transition", transition_}};
  }

  static MarkovModel from_parameters(SequenceSpec spec, const json& p) {
    return MarkovModel(spec, p.at("order").get<std::size_t>(),
                       p.at("initial").get<std::vector<Table>>(), p.at("transition").get<Table>());
  }

  std::unique_ptr<Cursor> start() const override { return std::make_unique<MarkovCursor>(*this); }

 private:
  class MarkovCursor final : public Cursor {
   public:
    explicit MarkovCursor(const MarkovModel& m) : m_(&m) {}
    std::size_t position() const noexcept override { return pos_; }
    const Distribution& dist() const override {
      return pos_ < m_->order_ ? m_->initial_[pos_][code_] : m_->transition_[code_];
    }
    void push(Token t) override {
      const std::size_t M = m_->spec().M();
      if (pos_ < m_->order_)
        code_ = code_ * M + t;
      else if (m_->order_ > 0)
        code_ = (code_ * M + t) % m_->context_mod_;
      ++pos_;
    }
    std::unique_ptr<Cursor> clone() const override { return std::make_unique<MarkovCursor>(*this); }

   private:
    const MarkovModel* m_;
    std::size_t pos_ = 0;
    std::size_t code_ = 0;
  };

  std::size_t order_;
  std::vector<Table> initial_;
  Table transition_;
  std::size_t context_mod_ = 1;
};

/// Dirichlet(concentration, ..., concentration) draw of width M.
inline Distribution random_dirichlet(std::size_t M, double concentration, RngStream& rng) {
  Distribution p(M);
  for (;;) {
    for (auto& x : p) x = rng.gamma(concentration);
    double s = 0.0;
    for (double x : p) s += x;
    if (s > 0.0 && std::isfinite(s)) break;
  }
  normalize(p);
  return p;
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
inline Distribution stationary_distribution(const MarkovModel::Table& rows,
                                            std::size_t max_iter = 100000, double tol = 1e-15) {
  const std::size_t M = rows.size();
  Distribution pi(M, 1.0 / static_cast<double>(M));
  for (std::size_t it = 0; it < max_iter; ++it) {
    Distribution next(M, 0.0);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < M; ++j) next[j] += pi[i] * rows[i][j];
    normalize(next);
    double diff = 0.0;
    for (std::size_t j = 0; j < M; ++j) diff = std::max(diff, std::abs(next[j] - pi[j]));
    // Averaging damps period-2 oscillation of periodic chains.
    for (std::size_t j = 0; j < M; ++j) pi[j] = 0.5 * (pi[j] + next[j]);
    if (diff < tol) break;
  }
  normalize(pi);
  return pi;
}

/// Random order-k chain with Dirichlet rows. Small concentrations give
/// low-entropy rows. `stationary` starts an order-1 chain in equilibrium.
inline MarkovModel random_markov(SequenceSpec spec, std::size_t order, double concentration,
                                 RngStream& rng, bool stationary = false) {
  const std::size_t M = spec.M();
  std::vector<MarkovModel::Table> initial(order);
  std::size_t rows = 1;
  for (std::size_t l = 0; l < order; ++l) {
    for (std::size_t r = 0; r < rows; ++r) initial[l].push_back(random_dirichlet(M, concentration, rng));
    rows *= M;
  }
  MarkovModel::Table transition;
  for (std::size_t r = 0; r < rows; ++r) transition.push_back(random_dirichlet(M, concentration, rng));
  if (stationary) {
    if (order > 1) throw DomainError("stationary start is implemented for order <= 1");
    if (order == 1) initial[0][0] = stationary_distribution(transition);
  }
  return MarkovModel(spec, order, std::move(initial), std::move(transition));
}

/// Mixes every row with fresh Dirichlet(1) noise: row' = (1-s) row + s noise.
/// Any s > 0 gives full support.
inline MarkovModel perturb_markov(const MarkovModel& m, double noise, RngStream& rng) {
  if (!(noise >= 0.0 && noise <= 1.0)) throw DomainError("perturbation scale must lie in [0,1]");
  const std::size_t M = m.spec().M();
  auto mix = [&](const Distribution& row) {
    Distribution n = random_dirichlet(M, 1.0, rng);
    Distribution out(M);
    for (std::size_t j = 0; j < M; ++j) out[j] = (1.0 - noise) * row[j] + noise * n[j];
    normalize(out);
    return out;
  };
  std::vector<MarkovModel::Table> initial;
  for (const auto& table : m.initial()) {
    MarkovModel::Table t;
    for (const auto& row : table) t.push_back(mix(row));
    initial.push_back(std::move(t));
  }
  MarkovModel::Table transition;
  for (const auto& row : m.transition()) transition.push_back(mix(row));
  return MarkovModel(m.spec(), m.order(), std::move(initial), std::move(transition));
}

}  // namespace entcal
