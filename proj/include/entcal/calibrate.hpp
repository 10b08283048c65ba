#pragma once

// One-parameter calibration by exponential tilting.
//
// Both objectives are CE(Pr || P_alpha) in nats per token. Their gradient
// and curvature come from the moment identities
//   global: d/da = (mu_{P_a}(f) - mu_Pr(f)) / T,   d2/da2 = var_{P_a}(f) / T
//   step:   d/da = mubar_{P_a} - mubar_Pr,          d2/da2 = (1/T) sum_t E_Pr Var_{P_a,t}(g)
// so every evaluation is a single pass over a precomputed table.

#include <memory>
#include <utility>

#include "entcal/exact.hpp"
#include "entcal/mixture.hpp"
#include "entcal/optimize.hpp"
#include "entcal/tilt.hpp"

namespace entcal {

/// Where the data expectation E_Pr comes from: an enumerable true model, or
/// a fixed sample of sequences drawn from it.
struct Reference {
  ModelPtr truth;
  std::shared_ptr<const std::vector<Sequence>> samples;

  static Reference exact(ModelPtr truth) { return {std::move(truth), nullptr}; }
  static Reference from_samples(std::vector<Sequence> samples) {
    return {nullptr, std::make_shared<const std::vector<Sequence>>(std::move(samples))};
  }
  bool is_exact() const noexcept { return truth != nullptr; }
  std::string mode() const { return is_exact() ? "exact" : "sample"; }

  void check(const SequenceSpec& spec, std::size_t min_samples = 2) const {
    if (is_exact()) {
      if (!(truth->spec() == spec)) throw DomainError("true model and base disagree on the sequence space");
      return;
    }
    if (!samples || samples->size() < min_samples)
      throw DataError("sample reference needs at least " + std::to_string(min_samples) + " sequences");
    for (const auto& w : *samples) spec.check_sequence(w);
  }
};

struct CalibrationResult {
  double alpha = 0.0;
  double objective = 0.0;   // CE(Pr || P_alpha*)
  double baseline = 0.0;    // CE(Pr || P)
  double gradient = 0.0;
  double curvature = 0.0;
  double gradient_stderr = 0.0;
  double alpha_stderr = 0.0;
  double mu_truth = 0.0;    // mu_Pr(f) or mubar_Pr
  double mu_base = 0.0;     // at alpha = 0
  double mu_tilted = 0.0;   // at alpha*
  double sigma2_plus = 0.0; // max tilted variance seen on [0, alpha*] (global) or max curvature*T (step)
  bool converged = false;
  bool constrained = false;
  std::string mode;
  std::string tilt;         // "global" or the step feature kind
  double tolerance = 0.0;
  std::string base_hash;
  json functional;
  std::vector<ObjectivePoint> trace;

  json to_json() const {
    json tr = json::array();
    for (const auto& p : trace)
      tr.push_back({{"alpha", p.alpha}, {"value", p.value}, {"gradient", p.gradient}, {"curvature", p.curvature},
                    {"gradient_stderr", p.gradient_stderr}});
    return {{"alpha", alpha},
            {"objective", objective},
            {"baseline", baseline},
            {"gradient", gradient},
            {"curvature", curvature},
            {"gradient_stderr", gradient_stderr},
            {"alpha_stderr", alpha_stderr},
            {"mu_truth", mu_truth},
            {"mu_base", mu_base},
            {"mu_tilted", mu_tilted},
            {"sigma2_plus", sigma2_plus},
            {"converged", converged},
            {"constrained", constrained},
            {"mode", mode},
            {"tilt", tilt},
            {"tolerance", tolerance},
            {"base_hash", base_hash},
            {"functional", functional},
            {"trace", tr}};
  }
};

/// Exact tables for the sequence-level tilt objective.
class GlobalObjective {
 public:
  GlobalObjective(const Reference& ref, const ConditionalModel& base, const FunctionalF& f,
                  const ExactOptions& opts = {})
      : T_(static_cast<double>(base.spec().T())), log_base_(log_prob_table(base, opts)), f_(f.values(opts)) {
    ref.check(base.spec());
    if (!(f.spec() == base.spec())) throw DomainError("functional and model disagree on the sequence space");
    for (std::size_t i = 0; i < f_.size(); ++i)
      if (log_base_[i] != kNegInf && !std::isfinite(f_[i]))
        throw DomainError("tilt functional is not finite on the base support");
    CompensatedSum mu, lb, sq;
    if (ref.is_exact()) {
      exact_ = true;
      auto lt = log_prob_table(*ref.truth, opts);
      for (std::size_t i = 0; i < lt.size(); ++i) {
        if (lt[i] == kNegInf) continue;
        if (log_base_[i] == kNegInf) support_ok_ = false;
        const double p = std::exp(lt[i]);
        mu += p * f_[i];
        if (support_ok_) lb += p * log_base_[i];
      }
      mu_truth_ = mu.value();
    } else {
      const auto& s = *ref.samples;
      const double n = static_cast<double>(s.size());
      const std::size_t M = base.spec().M();
      for (const auto& w : s) {
        const std::size_t i = sequence_index(w, M);
        if (log_base_[i] == kNegInf) support_ok_ = false;
        mu += f_[i] / n;
        if (support_ok_) lb += log_base_[i] / n;
      }
      mu_truth_ = mu.value();
      for (const auto& w : s) {
        const double d = f_[sequence_index(w, M)] - mu_truth_;
        sq += d * d;
      }
      mu_truth_stderr_ = std::sqrt(sq.value() / (n - 1.0) / n);
    }
    truth_log_base_ = lb.value();
  }

  bool exact() const noexcept { return exact_; }
  double mu_truth() const noexcept { return mu_truth_; }
  const std::vector<double>& log_base() const noexcept { return log_base_; }
  const std::vector<double>& f() const noexcept { return f_; }

  Moments tilted_moments(double alpha) const {
    const double lz = log_partition_from_tables(log_base_, f_, alpha);
    std::vector<double> lq(f_.size());
    for (std::size_t i = 0; i < f_.size(); ++i)
      lq[i] = log_base_[i] == kNegInf ? kNegInf : log_base_[i] + alpha * f_[i] - lz;
    return moments_from_tables(lq, f_);
  }

  ObjectivePoint operator()(double alpha) const {
    ObjectivePoint p;
    p.alpha = alpha;
    if (!support_ok_) {
      p.value = kInfiniteNats;
      return p;
    }
    const double lz = log_partition_from_tables(log_base_, f_, alpha);
    const Moments m = tilted_moments(alpha);
    p.value = (-(truth_log_base_ + alpha * mu_truth_) + lz) / T_;
    p.gradient = (m.mean - mu_truth_) / T_;
    p.curvature = m.variance / T_;
    p.gradient_stderr = mu_truth_stderr_ / T_;
    return p;
  }

 private:
  double T_;
  std::vector<double> log_base_, f_;
  bool exact_ = false;
  bool support_ok_ = true;
  double mu_truth_ = 0.0, mu_truth_stderr_ = 0.0;
  double truth_log_base_ = 0.0;
};

struct GlobalFit {
  std::shared_ptr<const GlobalTiltModel> model;
  CalibrationResult result;
};

inline void check_support(const ObjectivePoint& at_zero) {
  if (!std::isfinite(at_zero.value))
    throw DivergenceError("base model gives zero probability to data with positive probability");
}

/// alpha* = argmin_alpha CE(Pr || exp(alpha f) base / Z_alpha).
inline GlobalFit fit_alpha_global(const Reference& ref, ModelPtr base, const FunctionalF& f,
                                  SolverOptions solver = {}, const ExactOptions& opts = {}) {
  GlobalObjective obj(ref, *base, f, opts);
  solver.sample_mode = !obj.exact();
  const ObjectivePoint zero = obj(0.0);
  check_support(zero);
  SolverResult sr = minimize_convex([&](double a) { return obj(a); }, solver);

  CalibrationResult r;
  r.alpha = sr.best.alpha;
  r.objective = sr.best.value;
  r.baseline = zero.value;
  r.gradient = sr.best.gradient;
  r.curvature = sr.best.curvature;
  r.gradient_stderr = sr.best.gradient_stderr;
  r.alpha_stderr = sr.best.curvature > 0.0 ? sr.best.gradient_stderr / sr.best.curvature : 0.0;
  r.mu_truth = obj.mu_truth();
  const double T = static_cast<double>(base->spec().T());
  r.mu_base = zero.gradient * T + r.mu_truth;
  r.mu_tilted = sr.best.gradient * T + r.mu_truth;
  // The variance bound is only needed on [0, alpha*]; take the larger of the
  // optimizer path and a dense grid there.
  double s2 = 0.0;
  for (const auto& p : sr.trace)
    if (std::isfinite(p.curvature) && (p.alpha - 0.0) * (r.alpha - p.alpha) >= 0.0) s2 = std::max(s2, p.curvature * T);
  constexpr int kGrid = 2000;
  for (int k = 0; k <= kGrid; ++k) s2 = std::max(s2, obj.tilted_moments(r.alpha * k / kGrid).variance);
  r.sigma2_plus = s2;
  r.converged = sr.converged;
  r.constrained = sr.constrained;
  r.mode = ref.mode();
  r.tilt = "global";
  r.tolerance = solver.sample_mode ? solver.stderr_factor * r.gradient_stderr : solver.tolerance;
  r.base_hash = model_hash(*base);
  r.functional = functional_descriptor(f);
  r.trace = std::move(sr.trace);
  auto model = std::make_shared<const GlobalTiltModel>(std::move(base), f, r.alpha, opts);
  return {std::move(model), std::move(r)};
}

/// Variance guarantee: CE drop >= (mu_Pr(f) - mu_P(f))^2 / (2 sigma2_plus T).
inline double variance_drop_bound(double mu_truth, double mu_base, double sigma2_plus, std::size_t T) {
  const double d = mu_truth - mu_base;
  if (d == 0.0) return 0.0;
  return d * d / (2.0 * sigma2_plus * static_cast<double>(T));
}

/// log M + log(1/eps) / T, the range scale of -log of an eps-mixture.
inline double mixture_log_range(double eps, std::size_t T, std::size_t M) {
  return std::log(static_cast<double>(M)) + std::log(1.0 / eps) / static_cast<double>(T);
}

/// Entropy-rate gap guarantee: CE drop >= (1/2) (gap / (log M + log(1/eps)/T))^2.
inline double gap_drop_bound(double gap, double eps, std::size_t T, std::size_t M) {
  const double x = gap / mixture_log_range(eps, T, M);
  return 0.5 * x * x;
}

struct AmplificationBound {
  double epsilon = 0.0;
  std::size_t T = 0, M = 0;
  double mixture_kl_rate = 0.0;   // (1 + 1/T) eps
  double generation_gap = 0.0;    // sqrt(2 eps (T+1)) (log M + log(1/eps)/T)

  json to_json() const {
    return {{"epsilon", epsilon}, {"T", T}, {"M", M}, {"mixture_kl_rate", mixture_kl_rate},
            {"generation_gap", generation_gap}};
  }
};

inline AmplificationBound amplification_bound(double eps, std::size_t T, std::size_t M) {
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("epsilon must lie in (0,1)");
  if (T < 1) throw DomainError("T must be at least 1");
  if (M < 2) throw DomainError("M must be at least 2");
  const double t = static_cast<double>(T);
  return {eps, T, M, (1.0 + 1.0 / t) * eps, std::sqrt(2.0 * eps * (t + 1.0)) * mixture_log_range(eps, T, M)};
}

/// Entropy-rate calibration of the eps-mixture: f = log P^(eps), so the
/// tilted model is (P^(eps))^(1+alpha) / Z_alpha.
struct EntropyRateFit {
  GlobalFit fit;
  std::shared_ptr<const MixtureModel> mixture;
  double epsilon = 0.0;
  std::optional<double> measured_epsilon;  // KL(Pr || base) / T
  std::optional<double> mixture_kl_rate;   // KL(Pr || P^(eps)) / T
  std::optional<double> entrate_truth;
  double ce_mixture = 0.0, entrate_mixture = 0.0;
  double ce_tilted = 0.0, entrate_tilted = 0.0;
  double variance_bound = 0.0;
  double gap_bound = 0.0;

  json to_json() const {
    json j = {{"calibration", fit.result.to_json()},
              {"epsilon", epsilon},
              {"ce_mixture", ce_mixture},
              {"entrate_mixture", entrate_mixture},
              {"ce_tilted", ce_tilted},
              {"entrate_tilted", entrate_tilted},
              {"variance_bound", variance_bound},
              {"gap_bound", gap_bound}};
    if (measured_epsilon) j["measured_epsilon"] = *measured_epsilon;
    if (mixture_kl_rate) j["mixture_kl_rate"] = *mixture_kl_rate;
    if (entrate_truth) j["entrate_truth"] = *entrate_truth;
    return j;
  }
};

inline EntropyRateFit calibrate_entropy_rate(const Reference& ref, const ModelPtr& base, double eps,
                                             SolverOptions solver = {}, const ExactOptions& opts = {}) {
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("mixture weight epsilon must lie in (0,1)");
  EntropyRateFit out;
  out.epsilon = eps;
  out.mixture = std::make_shared<const MixtureModel>(base, eps);
  out.fit = fit_alpha_global(ref, out.mixture, FunctionalF::log_prob(out.mixture), solver, opts);
  const auto& r = out.fit.result;
  const auto& spec = base->spec();
  const double T = static_cast<double>(spec.T());
  out.ce_mixture = r.baseline;
  out.ce_tilted = r.objective;
  out.entrate_mixture = entropy_rate_exact(*out.mixture, opts);
  out.entrate_tilted = entropy_from_log_probs(out.fit.model->table().log_probs()) / T;
  out.variance_bound = variance_drop_bound(r.mu_truth, r.mu_base, r.sigma2_plus, spec.T());
  out.gap_bound = gap_drop_bound(out.ce_mixture - out.entrate_mixture, eps, spec.T(), spec.M());
  if (ref.is_exact()) {
    out.measured_epsilon = kl_exact(*ref.truth, *base, opts) / T;
    out.mixture_kl_rate = kl_exact(*ref.truth, *out.mixture, opts) / T;
    out.entrate_truth = entropy_rate_exact(*ref.truth, opts);
  }
  return out;
}

/// Per-context entropies one step ahead: entry j is H(base(. | context, j)),
/// and all zeros when the context already has T-1 tokens.
inline Distribution lookahead_entropy_vector(const ConditionalModel& base, std::span<const Token> context) {
  const auto& spec = base.spec();
  spec.check_context(context);
  Distribution out(spec.M(), 0.0);
  LookaheadEntropyFeature feature(spec.T());
  auto state = feature.start();
  auto c = base.cursor_at(context);
  state->values(*c, out);
  return out;
}

/// Every (context, step) the step-tilt objective sums over, with the data
/// distribution of the next token, the base row and the feature row.
class StepObjective {
 public:
  StepObjective(const Reference& ref, const ConditionalModel& base, const StepFeature& feature,
                const ExactOptions& opts = {})
      : M_(base.spec().M()), T_(base.spec().T()) {
    ref.check(base.spec());
    if (ref.is_exact())
      build_exact(*ref.truth, base, feature, opts);
    else
      build_samples(*ref.samples, base, feature);
  }

  bool exact() const noexcept { return exact_; }
  std::size_t size() const noexcept { return weight_.size(); }

  /// mubar under the data: (1/T) sum_t E_Pr E_{Pr(.|w<t)} g.
  double mu_truth() const noexcept { return mu_truth_; }

  ObjectivePoint operator()(double alpha) const {
    ObjectivePoint p;
    p.alpha = alpha;
    Distribution lp(M_);
    CompensatedSum ce, grad, curv, mu_q;
    std::vector<double> per_group(exact_ ? 0 : groups_, 0.0);
    bool infinite = false;
    for (std::size_t n = 0; n < weight_.size(); ++n) {
      const std::span<const double> tgt(&target_[n * M_], M_), base(&base_[n * M_], M_), g(&g_[n * M_], M_);
      tilted_log_row(base, g, alpha, lp);
      double eq = 0.0, eq2 = 0.0, et = 0.0, nll = 0.0;
      for (std::size_t j = 0; j < M_; ++j) {
        if (lp[j] != kNegInf) {
          const double q = std::exp(lp[j]);
          eq += q * g[j];
          eq2 += q * g[j] * g[j];
        }
        if (tgt[j] > 0.0) {
          et += tgt[j] * g[j];
          if (lp[j] == kNegInf)
            infinite = true;
          else
            nll -= tgt[j] * lp[j];
        }
      }
      const double w = weight_[n];
      ce += w * nll;
      grad += w * (eq - et);
      curv += w * std::max(eq2 - eq * eq, 0.0);
      mu_q += w * eq;
      if (!exact_) per_group[group_[n]] += (eq - et);
    }
    const double T = static_cast<double>(T_);
    p.value = infinite ? kInfiniteNats : ce.value() / T;
    p.gradient = grad.value() / T;
    p.curvature = curv.value() / T;
    if (!exact_) {
      const double n = static_cast<double>(groups_);
      CompensatedSum s, s2;
      for (double x : per_group) s += x / T;
      const double mean = s.value() / n;
      for (double x : per_group) s2 += (x / T - mean) * (x / T - mean);
      p.gradient_stderr = std::sqrt(s2.value() / (n - 1.0) / n);
    }
    return p;
  }

  /// mubar with the last token drawn from the tilted conditionals.
  double mu_tilted(double alpha) const { return (*this)(alpha).gradient + mu_truth_; }

 private:
  void add_node(double w, std::size_t group, std::span<const double> tgt, std::span<const double> base,
                std::span<const double> g) {
    weight_.push_back(w);
    group_.push_back(group);
    target_.insert(target_.end(), tgt.begin(), tgt.end());
    base_.insert(base_.end(), base.begin(), base.end());
    g_.insert(g_.end(), g.begin(), g.end());
  }

  struct WalkState {
    CursorBundle cursors;  // truth, base
    std::unique_ptr<FeatureState> feature;
    WalkState clone() const { return {cursors.clone(), feature->clone()}; }
    void push(Token t) {
      cursors.push(t);
      feature->push(t);
    }
    const Distribution& lead() const { return cursors.lead(); }
  };

  void build_exact(const ConditionalModel& truth, const ConditionalModel& base, const StepFeature& feature,
                   const ExactOptions& opts) {
    exact_ = true;
    opts.budget.require(M_, T_, "step tilt objective");
    struct Collect {
      std::size_t M;
      std::vector<double> w, tgt, base, g;
      bool operator()(const WalkNode<WalkState>& node) {
        if (node.log_weight == kNegInf) return false;
        w.push_back(std::exp(node.log_weight));
        const auto& td = node.state.cursors[0].dist();
        const Cursor& bc = node.state.cursors[1];
        tgt.insert(tgt.end(), td.begin(), td.end());
        base.insert(base.end(), bc.dist().begin(), bc.dist().end());
        Distribution row(M);
        node.state.feature->values(bc, row);
        g.insert(g.end(), row.begin(), row.end());
        return true;
      }
    };
    WalkState root{CursorBundle{&truth, &base}, feature.start()};
    auto parts = walk_partitioned<Collect>(root, M_, T_ - 1, opts.workers, [&] { return Collect{M_, {}, {}, {}, {}}; });
    CompensatedSum mu;
    for (const auto& part : parts)
      for (std::size_t n = 0; n < part.w.size(); ++n) {
        const std::span<const double> tgt(&part.tgt[n * M_], M_), g(&part.g[n * M_], M_);
        add_node(part.w[n], 0, tgt, std::span<const double>(&part.base[n * M_], M_), g);
        double et = 0.0;
        for (std::size_t j = 0; j < M_; ++j) et += tgt[j] * g[j];
        mu += part.w[n] * et;
      }
    mu_truth_ = mu.value() / static_cast<double>(T_);
  }

  void build_samples(const std::vector<Sequence>& samples, const ConditionalModel& base, const StepFeature& feature) {
    exact_ = false;
    groups_ = samples.size();
    const double w = 1.0 / static_cast<double>(samples.size());
    CompensatedSum mu;
    Distribution tgt(M_), g(M_);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto c = base.start();
      auto f = feature.start();
      for (Token tok : samples[i]) {
        std::fill(tgt.begin(), tgt.end(), 0.0);
        tgt[tok] = 1.0;
        f->values(*c, g);
        add_node(w, i, tgt, c->dist(), g);
        mu += w * g[tok];
        c->push(tok);
        f->push(tok);
      }
    }
    mu_truth_ = mu.value() / static_cast<double>(T_);
  }

  std::size_t M_, T_;
  bool exact_ = true;
  std::size_t groups_ = 0;
  double mu_truth_ = 0.0;
  std::vector<double> weight_;
  std::vector<std::size_t> group_;
  std::vector<double> target_, base_, g_;
};

struct StepFit {
  std::shared_ptr<const StepTiltModel> model;
  CalibrationResult result;
};

/// alpha* for a per-step tilt with an arbitrary feature.
inline StepFit fit_step_tilt(const Reference& ref, ModelPtr base, FeaturePtr feature, SolverOptions solver = {},
                             const ExactOptions& opts = {}) {
  StepObjective obj(ref, *base, *feature, opts);
  solver.sample_mode = !obj.exact();
  const ObjectivePoint zero = obj(0.0);
  check_support(zero);
  SolverResult sr = minimize_convex([&](double a) { return obj(a); }, solver);
  CalibrationResult r;
  r.alpha = sr.best.alpha;
  r.objective = sr.best.value;
  r.baseline = zero.value;
  r.gradient = sr.best.gradient;
  r.curvature = sr.best.curvature;
  r.gradient_stderr = sr.best.gradient_stderr;
  r.alpha_stderr = sr.best.curvature > 0.0 ? sr.best.gradient_stderr / sr.best.curvature : 0.0;
  r.mu_truth = obj.mu_truth();
  r.mu_base = zero.gradient + r.mu_truth;
  r.mu_tilted = sr.best.gradient + r.mu_truth;
  double s2 = 0.0;
  for (const auto& p : sr.trace)
    if (std::isfinite(p.curvature)) s2 = std::max(s2, p.curvature * static_cast<double>(base->spec().T()));
  r.sigma2_plus = s2;
  r.converged = sr.converged;
  r.constrained = sr.constrained;
  r.mode = ref.mode();
  r.tilt = feature->kind();
  r.tolerance = solver.sample_mode ? solver.stderr_factor * r.gradient_stderr : solver.tolerance;
  r.base_hash = model_hash(*base);
  r.functional = {{"kind", feature->kind()}, {"parameters", feature->parameters()}};
  r.trace = std::move(sr.trace);
  auto model = std::make_shared<const StepTiltModel>(std::move(base), std::move(feature), r.alpha);
  return {std::move(model), std::move(r)};
}

/// Local entropy-rate calibration with the one-step lookahead entropy.
inline StepFit fit_alpha_local(const Reference& ref, ModelPtr base, SolverOptions solver = {},
                               const ExactOptions& opts = {}) {
  auto feature = std::make_shared<const LookaheadEntropyFeature>(base->spec().T());
  return fit_step_tilt(ref, std::move(base), std::move(feature), solver, opts);
}

inline StepTiltModel local_tilt(ModelPtr base, double alpha) {
  const std::size_t T = base->spec().T();
  return StepTiltModel(std::move(base), std::make_shared<const LookaheadEntropyFeature>(T), alpha);
}

/// Lookahead guarantee against the eps-mixture base:
/// CE drop >= (1/2) ((mubar_Pr - mubar_base) / (log M + log(1/eps)/T))^2.
inline double lookahead_drop_bound(double mu_truth, double mu_base, double eps, std::size_t T, std::size_t M) {
  return gap_drop_bound(mu_truth - mu_base, eps, T, M);
}

}  // namespace entcal
