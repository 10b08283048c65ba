#pragma once

// Upper bounds on the memory at gap tau,
//   I_tau = I(W^_t ; W_<t-tau | W_t-tau..t-1),
// through a limited-memory comparator P~ and a copy of the full model
// calibrated to it: on the calibrated steps,
//   avg_t I_tau,t <= avg_t CE_t(Pr || P~) - avg_t H(W^cal_t | W_<t).
// The calibration holds the comparator's log-loss equal under the data and
// under the model only summed over the tilted steps, which is why the
// default policy averages over t = tau+1..T.

#include <optional>

#include "entcal/calibrate.hpp"
#include "entcal/limited_memory.hpp"

namespace entcal {

enum class ComparatorFit { ExactMarginal, EmpiricalNgram };

struct ComparatorOptions {
  ComparatorFit mode = ComparatorFit::ExactMarginal;
  double lambda = 0.1;           // add-lambda smoothing per count
  std::size_t min_samples = 100;
};

/// Exact mode marginalizes the true model onto the window; empirical mode
/// fits a smoothed tau-gram to the sample.
inline LimitedMemoryModel fit_limited_memory(const Reference& ref, const SequenceSpec& spec, std::size_t tau,
                                             const ComparatorOptions& copts = {}, const ExactOptions& opts = {}) {
  if (copts.mode == ComparatorFit::ExactMarginal) {
    if (!ref.is_exact()) throw DataError("exact-marginal comparator needs the true model");
    return marginalize_to_window(*ref.truth, tau, opts);
  }
  if (!ref.samples) throw DataError("empirical comparator needs a sample");
  return fit_ngram(spec, *ref.samples, tau, copts.lambda, copts.min_samples, opts.budget);
}

enum class StepPolicy { Average, Single };

/// Steps (1-based) the bound covers: tau+1..T, or the single step t.
inline std::vector<std::size_t> memory_steps(std::size_t T, std::size_t tau, StepPolicy policy, std::size_t t = 0) {
  if (tau < 1 || tau >= T) throw DomainError("memory gap tau must satisfy 1 <= tau < T");
  if (policy == StepPolicy::Single) {
    if (t <= tau || t > T) throw DomainError("single-step memory bound needs tau < t <= T");
    return {t};
  }
  std::vector<std::size_t> steps;
  for (std::size_t s = tau + 1; s <= T; ++s) steps.push_back(s);
  return steps;
}

/// Tilts `full` by comparator^alpha on `steps` and fits alpha.
inline StepFit calibrate_to_comparator(const Reference& ref, ModelPtr full, ModelPtr comparator,
                                       std::vector<std::size_t> steps, SolverOptions solver = {},
                                       const ExactOptions& opts = {},
                                       double p_min = ComparatorLogFeature::kDefaultFloor) {
  auto feature = std::make_shared<const ComparatorLogFeature>(std::move(comparator), std::move(steps), p_min);
  return fit_step_tilt(ref, std::move(full), std::move(feature), solver, opts);
}

struct MemoryStep {
  std::size_t t = 0;
  double ce = 0.0;        // E_Pr[-log P~(W_t | recent)]
  double entropy = 0.0;   // E_Pr H(W^cal_t | W_<t)
  double bound = 0.0;
  std::optional<double> exact_i;
};

struct MemoryEstimate {
  std::size_t tau = 0;
  std::string policy;
  std::string mode;
  std::vector<std::size_t> steps;
  double ce = 0.0;
  double entropy = 0.0;
  double bound = 0.0;
  double bound_stderr = 0.0;
  double alpha = 0.0;
  std::optional<double> exact_i;
  bool valid = true;   // ce >= entropy up to rounding
  double lambda = 0.0;
  std::string comparator_fit;
  std::vector<MemoryStep> per_step;
  CalibrationResult calibration;

  json to_json() const {
    json rows = json::array();
    for (const auto& s : per_step) {
      json r = {{"t", s.t}, {"ce", s.ce}, {"entropy", s.entropy}, {"bound", s.bound}};
      if (s.exact_i) r["exact_i"] = *s.exact_i;
      rows.push_back(r);
    }
    json j = {{"tau", tau},         {"policy", policy},       {"mode", mode},
              {"steps", steps},     {"ce", ce},               {"entropy", entropy},
              {"bound", bound},     {"bound_stderr", bound_stderr}, {"alpha", alpha},
              {"valid", valid},     {"lambda", lambda},       {"comparator_fit", comparator_fit},
              {"per_step", rows},   {"calibration", calibration.to_json()}};
    j["exact_i"] = exact_i ? json(*exact_i) : json(nullptr);
    return j;
  }
};

struct MemoryOptions {
  std::size_t tau = 1;
  StepPolicy policy = StepPolicy::Average;
  std::size_t t = 0;
  SolverOptions solver{};
  ExactOptions exact{};
  double p_min = ComparatorLogFeature::kDefaultFloor;
  bool attach_exact_mi = true;
};

/// CE and calibrated-entropy terms per step, exactly.
inline std::vector<MemoryStep> memory_terms_exact(const ConditionalModel& truth, const ConditionalModel& comparator,
                                                  const ConditionalModel& calibrated,
                                                  std::span<const std::size_t> steps, const ExactOptions& opts) {
  const std::size_t M = truth.spec().M(), T = truth.spec().T();
  opts.budget.require(M, T, "memory_terms_exact");
  struct Acc {
    std::vector<CompensatedSum> ce, h;
    std::vector<bool> infinite;
    bool operator()(const WalkNode<CursorBundle>& node) {
      if (node.log_weight == kNegInf) return false;
      const std::size_t s = node.prefix.size();
      const double w = std::exp(node.log_weight);
      const auto& pr = node.state[0].dist();
      const auto& pc = node.state[1].dist();
      double nll = 0.0;
      for (std::size_t j = 0; j < pr.size(); ++j) {
        if (pr[j] <= 0.0) continue;
        if (pc[j] <= 0.0)
          infinite[s] = true;
        else
          nll -= pr[j] * std::log(pc[j]);
      }
      ce[s] += w * nll;
      h[s] += w * entropy(node.state[2].dist());
      return true;
    }
  };
  CursorBundle root{&truth, &comparator, &calibrated};
  auto parts = walk_partitioned<Acc>(root, M, T - 1, opts.workers, [&] {
    return Acc{std::vector<CompensatedSum>(T), std::vector<CompensatedSum>(T), std::vector<bool>(T, false)};
  });
  std::vector<MemoryStep> out;
  for (std::size_t t : steps) {
    CompensatedSum ce, h;
    bool inf = false;
    for (const auto& p : parts) {
      ce.merge(p.ce[t - 1]);
      h.merge(p.h[t - 1]);
      inf = inf || p.infinite[t - 1];
    }
    MemoryStep st;
    st.t = t;
    st.ce = inf ? kInfiniteNats : ce.value();
    st.entropy = h.value();
    st.bound = st.ce - st.entropy;
    out.push_back(st);
  }
  return out;
}

/// Calibrates `full` to `comparator` and reports the memory bound with its
/// two terms. Exact references attach the exact I_tau of the calibrated model.
inline MemoryEstimate memory_bound(const Reference& ref, ModelPtr full, ModelPtr comparator,
                                   const MemoryOptions& mopts = {}) {
  const auto& spec = full->spec();
  if (!(comparator->spec() == spec)) throw DomainError("comparator and full model disagree on the sequence space");
  MemoryEstimate est;
  est.tau = mopts.tau;
  est.steps = memory_steps(spec.T(), mopts.tau, mopts.policy, mopts.t);
  est.policy = mopts.policy == StepPolicy::Average ? "average" : "single";
  est.mode = ref.mode();
  if (const auto* lm = dynamic_cast<const LimitedMemoryModel*>(comparator.get()); lm && lm->tau() > mopts.tau)
    throw DomainError("comparator window exceeds the memory gap tau");

  StepFit fit = calibrate_to_comparator(ref, full, comparator, est.steps, mopts.solver, mopts.exact, mopts.p_min);
  est.alpha = fit.result.alpha;
  const auto& cal = *fit.model;
  est.calibration = std::move(fit.result);
  const double k = static_cast<double>(est.steps.size());

  if (ref.is_exact()) {
    est.per_step = memory_terms_exact(*ref.truth, *comparator, cal, est.steps, mopts.exact);
    CompensatedSum ce, h, mi;
    for (auto& s : est.per_step) {
      ce += s.ce / k;
      h += s.entropy / k;
      if (mopts.attach_exact_mi) {
        s.exact_i = conditional_mi_exact(memory_joint(*ref.truth, cal, s.t, mopts.tau, mopts.exact));
        mi += *s.exact_i / k;
      }
    }
    est.ce = ce.value();
    est.entropy = h.value();
    if (mopts.attach_exact_mi) est.exact_i = mi.value();
  } else {
    // Per-sequence averages over the covered steps, so the stderr of the
    // bound accounts for the correlation between its two terms.
    const auto& samples = *ref.samples;
    const double n = static_cast<double>(samples.size());
    std::vector<bool> active(spec.T(), false);
    for (std::size_t t : est.steps) active[t - 1] = true;
    std::vector<CompensatedSum> ce_t(spec.T()), h_t(spec.T());
    std::vector<double> per_seq(samples.size());
    bool inf = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto cc = comparator->start();
      auto ck = cal.start();
      double b = 0.0;
      for (std::size_t s = 0; s < spec.T(); ++s) {
        const Token tok = samples[i][s];
        if (active[s]) {
          const double pc = cc->dist()[tok];
          if (pc <= 0.0) inf = true;
          const double nll = pc > 0.0 ? -std::log(pc) : 0.0;
          const double h = entropy(ck->dist());
          ce_t[s] += nll / n;
          h_t[s] += h / n;
          b += (nll - h) / k;
        }
        cc->push(tok);
        ck->push(tok);
      }
      per_seq[i] = b;
    }
    CompensatedSum ce, h, mean, var;
    for (std::size_t t : est.steps) {
      MemoryStep st;
      st.t = t;
      st.ce = inf ? kInfiniteNats : ce_t[t - 1].value();
      st.entropy = h_t[t - 1].value();
      st.bound = st.ce - st.entropy;
      est.per_step.push_back(st);
      ce += st.ce / k;
      h += st.entropy / k;
    }
    for (double x : per_seq) mean += x / n;
    for (double x : per_seq) var += (x - mean.value()) * (x - mean.value());
    est.ce = ce.value();
    est.entropy = h.value();
    est.bound_stderr = std::sqrt(var.value() / (n - 1.0) / n);
  }
  est.bound = est.ce - est.entropy;
  est.valid = std::isfinite(est.ce) && est.ce >= est.entropy - 1e-12 * std::max(1.0, est.ce);
  return est;
}

}  // namespace entcal
