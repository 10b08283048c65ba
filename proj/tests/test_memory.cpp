#include <gtest/gtest.h>

#include "instances.hpp"
#include "oracles.hpp"

using namespace entcal;

namespace {

/// Comparator log-prob feature on 1-based steps, the way the oracle sees it.
std::function<Distribution(const Sequence&)> comparator_feature(const ConditionalModel& comp,
                                                                const std::vector<std::size_t>& steps) {
  return [&comp, steps](const Sequence& ctx) {
    const std::size_t M = comp.spec().M();
    Distribution g(M, 0.0);
    if (std::find(steps.begin(), steps.end(), ctx.size() + 1) == steps.end()) return g;
    const auto row = comp.next_dist(ctx);
    for (std::size_t j = 0; j < M; ++j) g[j] = std::log(std::max(row[j], 1e-300));
    return g;
  };
}

struct StepTerms {
  double ce = 0, h = 0, hy = 0, slack = 0, mi = 0;
};

/// Per-step pieces of the memory bound by enumeration: CE of the comparator
/// under truth, H(Z|X,Y) and H(Z|Y) of the calibrated model, the
/// E_Y KL(D(Z|Y) || P~(Z|Y)) term and I(Z;X|Y).
StepTerms step_terms(const ConditionalModel& truth, const ConditionalModel& comp, const ConditionalModel& cal,
                     std::size_t t, std::size_t tau) {
  const std::size_t M = truth.spec().M();
  StepTerms out;
  for (const auto& ctx : oracle::all_sequences(M, t - 1)) {
    const double p = oracle::prefix_prob(truth, ctx);
    if (p == 0) continue;
    const auto pr = truth.next_dist(ctx), pc = comp.next_dist(ctx), pk = cal.next_dist(ctx);
    for (std::size_t j = 0; j < M; ++j)
      if (pr[j] > 0) out.ce -= p * pr[j] * std::log(pc[j]);
    out.h += p * oracle::plogp_sum(pk);
  }
  const auto joint = oracle::memory_joint(truth, cal, t, tau);
  out.mi = oracle::conditional_mi(joint);
  for (std::size_t y = 0; y < joint[0].size(); ++y) {
    Distribution dzy(M, 0.0);
    for (const auto& x : joint)
      for (std::size_t z = 0; z < M; ++z) dzy[z] += x[y][z];
    double py = 0;
    for (double v : dzy) py += v;
    if (py == 0) continue;
    // The comparator row for context y is the same for every deep past.
    Sequence ctx(t - 1, 0);
    Sequence ys = sequence_at(y, M, tau);
    std::copy(ys.begin(), ys.end(), ctx.end() - static_cast<std::ptrdiff_t>(tau));
    const auto pc = comp.next_dist(ctx);
    std::vector<double> cond(M);
    for (std::size_t z = 0; z < M; ++z) cond[z] = dzy[z] / py;
    out.hy += py * oracle::plogp_sum(cond);
    out.slack += py * oracle::kl(cond, pc);
  }
  return out;
}

}  // namespace

TEST(LimitedMemoryFit, ExactModeRecoversTheTransitionTable) {
  RngStream rng(1);
  SequenceSpec spec(3, 5);
  auto truth = inst::markov(spec, 1, 0.5, rng);
  auto lm = fit_limited_memory(Reference::exact(truth), spec, 1);
  for (Token y = 0; y < 3; ++y) {
    const auto row = lm.next_dist(Sequence{2, y});
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(row[j], truth->transition()[y][j], 1e-13);
  }
}

TEST(LimitedMemoryFit, ModeNeedsTheRightReference) {
  SequenceSpec spec(2, 3);
  auto truth = std::make_shared<const MarkovModel>(MarkovModel::uniform(spec));
  ComparatorOptions emp;
  emp.mode = ComparatorFit::EmpiricalNgram;
  EXPECT_THROW(fit_limited_memory(Reference::exact(truth), spec, 1, emp), DataError);
  EXPECT_THROW(fit_limited_memory(Reference::from_samples({Sequence{0, 0, 0}, Sequence{1, 1, 1}}), spec, 1),
               DataError);
  // Too few sequences for the default minimum.
  EXPECT_THROW(fit_limited_memory(Reference::from_samples({Sequence{0, 0, 0}, Sequence{1, 1, 1}}), spec, 1, emp),
               DataError);
}

TEST(LimitedMemoryFit, EmpiricalRowsConvergeToPooledExactRows) {
  RngStream rng(2);
  SequenceSpec spec(2, 4);
  const std::size_t tau = 2;
  auto truth = inst::markov(spec, 2, 0.5, rng);
  std::vector<Sequence> data;
  RngStream s(3, "ngram");
  const std::size_t n = 1000000;
  data.reserve(n);
  for (std::size_t i = 0; i < n; ++i) data.push_back(sample_sequence(*truth, s));
  ComparatorOptions emp;
  emp.mode = ComparatorFit::EmpiricalNgram;
  auto lm = fit_limited_memory(Reference::from_samples(data), spec, tau, emp);

  // Steps 0 and 1 have their own tables; steps 2 and 3 share one, so its
  // expected row is the occupancy-weighted mix of the two exact rows.
  for (std::size_t s0 = 0; s0 < 4; ++s0) {
    const std::size_t len = std::min(s0, tau);
    for (const auto& y : oracle::all_sequences(2, len)) {
      Distribution want(2, 0.0);
      double weight = 0.0;
      for (std::size_t s = s0 < tau ? s0 : tau; s <= (s0 < tau ? s0 : 3); ++s) {
        double py = 0.0;
        for (const auto& ctx : oracle::all_sequences(2, s))
          if (std::equal(y.begin(), y.end(), ctx.end() - static_cast<std::ptrdiff_t>(len)))
            py += oracle::prefix_prob(*truth, ctx);
        const auto row = oracle::window_row(*truth, s, y);
        for (std::size_t j = 0; j < 2; ++j) want[j] += py * row[j];
        weight += py;
      }
      for (double& v : want) v /= weight;
      Sequence ctx(s0, 0);
      std::copy(y.begin(), y.end(), ctx.end() - static_cast<std::ptrdiff_t>(len));
      const auto got = lm.next_dist(ctx);
      const double count = static_cast<double>(n) * weight;
      for (std::size_t j = 0; j < 2; ++j)
        EXPECT_NEAR(got[j], want[j], 3 * std::sqrt(want[j] * (1 - want[j]) / count) + 1e-6)
            << "step " << s0 << " context size " << y.size();
    }
  }
}

TEST(ComparatorCalibration, TruthIsAlreadyCalibrated) {
  RngStream rng(4);
  SequenceSpec spec(2, 5);
  auto truth = inst::markov(spec, 2, 0.5, rng);
  auto comp = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, 1));
  auto fit = calibrate_to_comparator(Reference::exact(truth), truth, comp, memory_steps(5, 1, StepPolicy::Average));
  EXPECT_NEAR(fit.result.alpha, 0.0, 1e-8);
}

TEST(ComparatorCalibration, FullEqualToComparatorIsFlat) {
  RngStream rng(5);
  SequenceSpec spec(3, 4);
  auto truth = inst::markov(spec, 2, 0.5, rng);
  auto comp = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, 1));
  auto fit = calibrate_to_comparator(Reference::exact(truth), comp, comp, memory_steps(4, 1, StepPolicy::Average));
  EXPECT_NEAR(fit.result.alpha, 0.0, 1e-8);
  EXPECT_NEAR(fit.result.objective, fit.result.baseline, 1e-9);
  // Binary uniform: comparator^alpha is constant, so every alpha gives the
  // same model.
  SequenceSpec bin(2, 4);
  auto u = std::make_shared<const MarkovModel>(MarkovModel::uniform(bin));
  auto uc = std::make_shared<const LimitedMemoryModel>(LimitedMemoryModel::truncate(*u, 1));
  const std::vector<std::size_t> steps{2, 3, 4};
  for (double a : {-3.0, 0.5, 7.0}) {
    StepTiltModel tilted(u, std::make_shared<const ComparatorLogFeature>(uc, steps), a);
    for (const auto& w : oracle::all_sequences(2, 4)) EXPECT_NEAR(tilted.seq_log_prob(w), u->seq_log_prob(w), 1e-12);
  }
}

TEST(ComparatorCalibration, MatchesGridSearch) {
  RngStream rng(6);
  SequenceSpec spec(2, 4);
  auto truth = inst::markov(spec, 2, 0.5, rng);
  auto full = inst::perturbed(*truth, 0.8, rng);
  auto comp = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, 1));
  const auto steps = memory_steps(4, 1, StepPolicy::Average);
  auto fit = calibrate_to_comparator(Reference::exact(truth), full, comp, steps);
  const auto t = oracle::probs(*truth);
  const auto g = comparator_feature(*comp, steps);
  auto ce = [&](double a) { return oracle::ce_rate(t, oracle::step_tilt_probs(*full, g, a), 4); };
  const double grid = oracle::grid_argmin(ce, -4.0, 4.0, 1e-4);
  EXPECT_NEAR(fit.result.alpha, grid, 2e-4);
  EXPECT_NEAR(fit.result.objective, ce(fit.result.alpha), 1e-12);
  EXPECT_LE(fit.result.objective, fit.result.baseline + 1e-12);
  EXPECT_LE(std::abs(fit.result.gradient), 1e-10);
}

TEST(ComparatorCalibration, FloorKeepsZeroComparatorMassFinite) {
  SequenceSpec spec(2, 3);
  auto full = std::make_shared<const MarkovModel>(MarkovModel::uniform(spec));
  auto det = MarkovModel::deterministic(spec, 0);
  auto comp = std::make_shared<const LimitedMemoryModel>(LimitedMemoryModel::truncate(det, 1));
  StepTiltModel tilted(full, std::make_shared<const ComparatorLogFeature>(comp, std::vector<std::size_t>{2, 3}), 0.01);
  const auto row = tilted.next_dist(Sequence{1});
  EXPECT_TRUE(is_distribution(row, 1e-12));
  EXPECT_GT(row[1], 0.0);
  EXPECT_LT(row[1], row[0]);
}

TEST(MemoryBound, WindowModelHasNoMemory) {
  RngStream rng(7);
  SequenceSpec spec(2, 5);
  auto truth = inst::markov(spec, 3, 0.5, rng);
  auto full = std::make_shared<const LimitedMemoryModel>(LimitedMemoryModel::truncate(*truth, 1));
  auto comp = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, 1));
  MemoryOptions mo;
  mo.tau = 1;
  auto est = memory_bound(Reference::exact(truth), full, comp, mo);
  ASSERT_TRUE(est.exact_i);
  EXPECT_NEAR(*est.exact_i, 0.0, 1e-12);
  EXPECT_GE(est.bound, -1e-12);
}

TEST(MemoryBound, SecondOrderTruthByEnumeration) {
  RngStream rng(8);
  SequenceSpec spec(2, 5);
  auto truth = inst::markov(spec, 2, 0.3, rng);
  auto comp = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, 1));
  MemoryOptions mo;
  mo.tau = 1;
  auto est = memory_bound(Reference::exact(truth), truth, comp, mo);
  ASSERT_EQ(est.per_step.size(), 4u);
  auto cal = StepTiltModel(truth, std::make_shared<const ComparatorLogFeature>(comp, est.steps), est.alpha);
  double ce = 0, h = 0, mi = 0, slack = 0, hy = 0;
  for (const auto& s : est.per_step) {
    const auto o = step_terms(*truth, *comp, cal, s.t, 1);
    EXPECT_NEAR(s.ce, o.ce, 1e-12);
    EXPECT_NEAR(s.entropy, o.h, 1e-12);
    EXPECT_NEAR(*s.exact_i, o.mi, 1e-12);
    ce += o.ce / 4;
    h += o.h / 4;
    mi += o.mi / 4;
    slack += o.slack / 4;
    hy += o.hy / 4;
  }
  EXPECT_NEAR(est.bound, ce - h, 1e-12);
  EXPECT_NEAR(*est.exact_i, mi, 1e-12);
  EXPECT_GT(*est.exact_i, 1e-4);
  EXPECT_GE(est.bound, *est.exact_i - 1e-9);
  // Calibration makes the comparator's log-loss the same under data and
  // model, so the slack is exactly the averaged KL of the model's recent-past
  // marginal from the comparator.
  EXPECT_NEAR(est.bound - *est.exact_i, slack, 1e-9);
  EXPECT_LE(hy, ce + 1e-12);
}

TEST(MemoryBound, SingleStepPolicy) {
  RngStream rng(9);
  SequenceSpec spec(3, 4);
  auto truth = inst::markov(spec, 2, 0.3, rng);
  auto full = inst::perturbed(*truth, 0.5, rng);
  auto comp = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, 1));
  MemoryOptions mo;
  mo.tau = 1;
  mo.policy = StepPolicy::Single;
  mo.t = 3;
  auto est = memory_bound(Reference::exact(truth), full, comp, mo);
  EXPECT_EQ(est.steps, std::vector<std::size_t>{3});
  EXPECT_EQ(est.policy, "single");
  EXPECT_GE(est.bound, *est.exact_i - 1e-9);
  mo.t = 1;
  EXPECT_THROW(memory_bound(Reference::exact(truth), full, comp, mo), DomainError);
}

TEST(MemoryBound, ArgumentChecks) {
  SequenceSpec spec(2, 4);
  auto u = std::make_shared<const MarkovModel>(MarkovModel::uniform(spec));
  auto comp2 = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*u, 2));
  MemoryOptions mo;
  mo.tau = 1;
  EXPECT_THROW(memory_bound(Reference::exact(u), u, comp2, mo), DomainError);
  mo.tau = 4;
  EXPECT_THROW(memory_bound(Reference::exact(u), u, comp2, mo), DomainError);
}

TEST(MemoryBound, SampleModeTracksExactMode) {
  RngStream rng(10);
  SequenceSpec spec(2, 5);
  auto truth = inst::markov(spec, 2, 0.3, rng);
  auto full = inst::perturbed(*truth, 0.3, rng);
  auto comp = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, 1));
  std::vector<Sequence> data;
  RngStream s(11, "mem");
  for (int i = 0; i < 50000; ++i) data.push_back(sample_sequence(*truth, s));
  MemoryOptions mo;
  mo.tau = 1;
  auto exact = memory_bound(Reference::exact(truth), full, comp, mo);
  auto sample = memory_bound(Reference::from_samples(std::move(data)), full, comp, mo);
  EXPECT_EQ(sample.mode, "sample");
  EXPECT_FALSE(sample.exact_i);
  EXPECT_GT(sample.bound_stderr, 0.0);
  EXPECT_NEAR(sample.bound, exact.bound, 4 * sample.bound_stderr);
  auto j = sample.to_json();
  EXPECT_TRUE(j["exact_i"].is_null());
  EXPECT_EQ(j["per_step"].size(), 4u);
}

// Properties.

TEST(MemoryProperties, BoundCoversExactMemory) {
  RngStream rng(12);
  for (int rep = 0; rep < 30; ++rep) {
    SequenceSpec spec(2 + rng.below(2), 3 + rng.below(3));
    if (!power_within(spec.M(), spec.T(), 256)) continue;
    auto truth = inst::markov(spec, 1 + rng.below(3), 0.3, rng);
    auto full = rep % 2 ? ModelPtr(truth) : ModelPtr(inst::perturbed(*truth, 0.5, rng));
    const std::size_t tau = 1 + rng.below(spec.T() - 1);
    auto comp = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, tau));
    MemoryOptions mo;
    mo.tau = tau;
    auto est = memory_bound(Reference::exact(truth), full, comp, mo);
    EXPECT_GE(est.bound, *est.exact_i - 1e-9) << "rep " << rep;
    EXPECT_GE(*est.exact_i, -1e-12);
    EXPECT_TRUE(est.valid);
  }
}
