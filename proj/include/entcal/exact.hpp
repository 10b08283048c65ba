#pragma once

// Brute-force information quantities over all M^T sequences. Everything is
// in nats. These are the ground truth the estimators and the calibration
// results are checked against, so they stay deliberately direct: enumerate,
// then sum in lexicographic order with compensated accumulation.

#include "entcal/functional.hpp"

namespace entcal {

/// H(D) from a log-probability table.
inline double entropy_from_log_probs(std::span<const double> lp) {
  CompensatedSum s;
  for (double x : lp)
    if (x != kNegInf) s += -std::exp(x) * x;
  return s.value();
}

/// sum_w p(w) (-log q(w)); infinite when q misses p's support.
inline double cross_entropy_from_log_probs(std::span<const double> lp, std::span<const double> lq) {
  CompensatedSum s;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (lp[i] == kNegInf) continue;
    if (lq[i] == kNegInf) return kInfiniteNats;
    s += -std::exp(lp[i]) * lq[i];
  }
  return s.value();
}

inline double kl_from_log_probs(std::span<const double> lp, std::span<const double> lq) {
  CompensatedSum s;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (lp[i] == kNegInf) continue;
    if (lq[i] == kNegInf) return kInfiniteNats;
    s += std::exp(lp[i]) * (lp[i] - lq[i]);
  }
  return s.value();
}

inline void require_same_spec(const ConditionalModel& p, const ConditionalModel& q) {
  if (!(p.spec() == q.spec())) throw DomainError("models are defined on different sequence spaces");
}

inline double entropy_exact(const ConditionalModel& model, const ExactOptions& opts = {}) {
  return entropy_from_log_probs(log_prob_table(model, opts));
}

inline double entropy_rate_exact(const ConditionalModel& model, const ExactOptions& opts = {}) {
  return entropy_exact(model, opts) / static_cast<double>(model.spec().T());
}

/// CE(p || q) in nats per token.
inline double cross_entropy_exact(const ConditionalModel& p, const ConditionalModel& q,
                                  const ExactOptions& opts = {}) {
  require_same_spec(p, q);
  double ce = cross_entropy_from_log_probs(log_prob_table(p, opts), log_prob_table(q, opts));
  return ce == kInfiniteNats ? ce : ce / static_cast<double>(p.spec().T());
}

/// KL(p || q) in nats over the whole sequence.
inline double kl_exact(const ConditionalModel& p, const ConditionalModel& q, const ExactOptions& opts = {}) {
  require_same_spec(p, q);
  return kl_from_log_probs(log_prob_table(p, opts), log_prob_table(q, opts));
}

/// |p - q|_1 over sequences.
inline double l1_distance_exact(const ConditionalModel& p, const ConditionalModel& q,
                                const ExactOptions& opts = {}) {
  require_same_spec(p, q);
  auto a = prob_table(p, opts), b = prob_table(q, opts);
  CompensatedSum s;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s.value();
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance of `values` under exp(log_probs).
inline Moments moments_from_tables(std::span<const double> log_probs, std::span<const double> values) {
  CompensatedSum m;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (log_probs[i] != kNegInf) m += std::exp(log_probs[i]) * values[i];
  const double mean = m.value();
  CompensatedSum v;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (log_probs[i] != kNegInf) {
      const double d = values[i] - mean;
      v += std::exp(log_probs[i]) * d * d;
    }
  return {mean, v.value()};
}

/// (mu_D(f), sigma^2_D(f)).
inline Moments mean_var_exact(const ConditionalModel& dist, const FunctionalF& f, const ExactOptions& opts = {}) {
  if (!(dist.spec() == f.spec())) throw DomainError("functional and model disagree on the sequence space");
  return moments_from_tables(log_prob_table(dist, opts), f.values(opts));
}

/// log sum_w exp(alpha f(w) + log base(w)); terms with base(w) = 0 drop out.
inline double log_partition_from_tables(std::span<const double> log_base, std::span<const double> f,
                                        double alpha) {
  std::vector<double> terms;
  terms.reserve(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (log_base[i] == kNegInf) continue;
    if (!std::isfinite(f[i])) throw DomainError("tilt functional is not finite on the base support");
    terms.push_back(alpha * f[i] + log_base[i]);
  }
  return log_sum_exp(terms);
}

inline double log_partition_exact(const ConditionalModel& base, const FunctionalF& f, double alpha,
                                  const ExactOptions& opts = {}) {
  if (!(base.spec() == f.spec())) throw DomainError("functional and model disagree on the sequence space");
  return log_partition_from_tables(log_prob_table(base, opts), f.values(opts), alpha);
}

/// Joint table over (X, Y, Z), laid out as p[(x * ny + y) * nz + z].
struct JointZYX {
  std::size_t nx = 1, ny = 1, nz = 1;
  std::vector<double> p;

  JointZYX() = default;
  JointZYX(std::size_t nx_, std::size_t ny_, std::size_t nz_) : nx(nx_), ny(ny_), nz(nz_), p(nx_ * ny_ * nz_, 0.0) {}
  double& at(std::size_t x, std::size_t y, std::size_t z) { return p[(x * ny + y) * nz + z]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return p[(x * ny + y) * nz + z]; }
};

/// I(Z; X | Y) = sum p(x,y,z) log[p(x,y,z) p(y) / (p(x,y) p(y,z))].
inline double conditional_mi_exact(const JointZYX& j) {
  std::vector<double> py(j.ny, 0.0), pxy(j.nx * j.ny, 0.0), pyz(j.ny * j.nz, 0.0);
  for (std::size_t x = 0; x < j.nx; ++x)
    for (std::size_t y = 0; y < j.ny; ++y)
      for (std::size_t z = 0; z < j.nz; ++z) {
        const double v = j.at(x, y, z);
        py[y] += v;
        pxy[x * j.ny + y] += v;
        pyz[y * j.nz + z] += v;
      }
  CompensatedSum s;
  for (std::size_t x = 0; x < j.nx; ++x)
    for (std::size_t y = 0; y < j.ny; ++y)
      for (std::size_t z = 0; z < j.nz; ++z) {
        const double v = j.at(x, y, z);
        if (v <= 0.0) continue;
        s += v * std::log(v * py[y] / (pxy[x * j.ny + y] * pyz[y * j.nz + z]));
      }
  return s.value();
}

/// Joint of (deep past X = W_<t-tau, recent past Y = W_t-tau..t-1, Z) where
/// the context is drawn from `truth` and Z ~ model(. | context). Step t is
/// 1-based and must satisfy tau < t <= T.
inline JointZYX memory_joint(const ConditionalModel& truth, const ConditionalModel& model, std::size_t t,
                             std::size_t tau, const ExactOptions& opts = {}) {
  require_same_spec(truth, model);
  const std::size_t M = truth.spec().M(), T = truth.spec().T();
  if (tau < 1 || t <= tau || t > T) throw DomainError("memory joint needs 1 <= tau < t <= T");
  opts.budget.require(M, t, "memory_joint");
  const std::size_t deep = t - 1 - tau;
  JointZYX joint(*power_within(M, deep, opts.budget.max_states), *power_within(M, tau, opts.budget.max_states), M);
  struct Collect {
    JointZYX* joint;
    std::size_t depth, deep, M;
    std::vector<std::pair<std::size_t, Distribution>> rows;  // (flat xy, weighted row)
    bool operator()(const WalkNode<CursorBundle>& node) {
      if (node.log_weight == kNegInf) return false;
      if (node.prefix.size() < depth) return true;
      const std::size_t x = sequence_index(node.prefix.first(deep), M);
      const std::size_t y = sequence_index(node.prefix.subspan(deep), M);
      const double w = std::exp(node.log_weight);
      Distribution row = node.state[1].dist();
      for (double& v : row) v *= w;
      rows.emplace_back(x * joint->ny + y, std::move(row));
      return false;
    }
  };
  CursorBundle root{&truth, &model};
  auto parts = walk_partitioned<Collect>(root, M, t - 1, opts.workers,
                                         [&] { return Collect{&joint, t - 1, deep, M, {}}; });
  for (const auto& part : parts)
    for (const auto& [xy, row] : part.rows)
      for (std::size_t z = 0; z < M; ++z) joint.p[xy * M + z] += row[z];
  return joint;
}

/// Expected entropy of the model's own conditional at each step t = 1..T
/// under self-generation: the noise-free drift curve.
inline std::vector<double> drift_curve_exact(const ConditionalModel& model, const ExactOptions& opts = {}) {
  const std::size_t M = model.spec().M(), T = model.spec().T();
  opts.budget.require(M, T, "drift_curve_exact");
  struct Acc {
    std::vector<CompensatedSum> by_step;
    bool operator()(const WalkNode<CursorBundle>& node) {
      if (node.log_weight == kNegInf) return false;
      by_step[node.prefix.size()] += std::exp(node.log_weight) * entropy(node.state.lead());
      return true;
    }
  };
  CursorBundle root{&model};
  auto parts = walk_partitioned<Acc>(root, M, T - 1, opts.workers, [&] { return Acc{std::vector<CompensatedSum>(T)}; });
  std::vector<double> curve(T);
  for (std::size_t s = 0; s < T; ++s) {
    CompensatedSum total;
    for (const auto& part : parts) total.merge(part.by_step[s]);
    curve[s] = total.value();
  }
  return curve;
}

}  // namespace entcal
