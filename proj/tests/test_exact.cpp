#include <gtest/gtest.h>

#include "instances.hpp"
#include "oracles.hpp"

using namespace entcal;

namespace {

ModelPtr uniform(std::size_t M, std::size_t T) {
  return std::make_shared<const MarkovModel>(MarkovModel::uniform(SequenceSpec(M, T)));
}

}  // namespace

TEST(Entropy, UniformAndDeterministic) {
  EXPECT_NEAR(entropy_exact(*uniform(3, 2)), 2 * std::log(3.0), 1e-14);
  EXPECT_NEAR(entropy_exact(*uniform(3, 2)), 2.19722, 1e-5);
  EXPECT_EQ(entropy_exact(MarkovModel::deterministic(SequenceSpec(3, 4), 1)), 0.0);
  EXPECT_NEAR(entropy_rate_exact(*uniform(3, 5)), 1.09861, 1e-5);
  EXPECT_EQ(entropy_rate_exact(MarkovModel::deterministic(SequenceSpec(3, 4), 2)), 0.0);
}

TEST(Entropy, MatchesDirectSummation) {
  RngStream rng(20);
  auto m = inst::markov(SequenceSpec(3, 4), 1, 0.5, rng);
  EXPECT_NEAR(entropy_exact(*m), oracle::entropy(*m), 1e-12);
}

TEST(Entropy, DriftRaisesTheEntropyRateOfANonUniformBase) {
  RngStream rng(21);
  SequenceSpec spec(3, 5);
  auto base = inst::markov(spec, 1, 0.5, rng);
  DriftModel d(base);
  const double got = entropy_rate_exact(d);
  EXPECT_NEAR(got, oracle::entropy(d) / 5.0, 1e-12);
  EXPECT_GT(got, entropy_rate_exact(*base));
}

TEST(CrossEntropy, SelfAndUniform) {
  RngStream rng(22);
  auto m = inst::markov(SequenceSpec(3, 4), 2, 0.5, rng);
  EXPECT_NEAR(cross_entropy_exact(*m, *m), entropy_rate_exact(*m), 1e-12);
  EXPECT_NEAR(cross_entropy_exact(*m, *uniform(3, 4)), std::log(3.0), 1e-12);
}

TEST(CrossEntropy, AgainstMixtureByEnumeration) {
  RngStream rng(23);
  auto m = inst::markov(SequenceSpec(2, 3), 1, 0.5, rng);
  MixtureModel mix(m, 0.1);
  EXPECT_NEAR(cross_entropy_exact(*m, mix), oracle::cross_entropy_rate(*m, mix), 1e-12);
}

TEST(CrossEntropy, MissingSupportIsInfinite) {
  SequenceSpec spec(2, 3);
  auto u = MarkovModel::uniform(spec);
  auto d = MarkovModel::deterministic(spec, 0);
  EXPECT_EQ(cross_entropy_exact(u, d), kInfiniteNats);
  EXPECT_EQ(kl_exact(u, d), kInfiniteNats);
  EXPECT_TRUE(std::isinf(kInfiniteNats));
}

TEST(KL, SelfIsZero) {
  RngStream rng(24);
  auto m = inst::markov(SequenceSpec(3, 4), 1, 0.5, rng);
  EXPECT_EQ(kl_exact(*m, *m), 0.0);
}

TEST(KL, TwoBernoullis) {
  SequenceSpec spec(2, 1);
  auto p = MarkovModel::iid(spec, {0.5, 0.5});
  auto q = MarkovModel::iid(spec, {0.75, 0.25});
  EXPECT_NEAR(kl_exact(p, q), 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25), 1e-15);
}

TEST(KL, MatchesDirectSummation) {
  RngStream rng(25);
  SequenceSpec spec(3, 4);
  auto p = inst::markov(spec, 2, 0.5, rng);
  auto q = inst::perturbed(*p, 0.5, rng);
  EXPECT_NEAR(kl_exact(*p, *q), oracle::kl(oracle::probs(*p), oracle::probs(*q)), 1e-12);
}

TEST(Moments, ConstantAndSelfNegLogProb) {
  RngStream rng(26);
  SequenceSpec spec(3, 4);
  auto m = inst::markov(spec, 1, 0.5, rng);
  auto c = mean_var_exact(*m, FunctionalF::table(spec, std::vector<double>(81, 2.5)));
  EXPECT_NEAR(c.mean, 2.5, 1e-14);
  EXPECT_NEAR(c.variance, 0.0, 1e-14);
  auto s = mean_var_exact(*m, FunctionalF::neg_log_prob(m));
  EXPECT_NEAR(s.mean, 4 * entropy_rate_exact(*m), 1e-12);
}

TEST(Moments, RandomTableMatchesDirectSummation) {
  RngStream rng(27);
  SequenceSpec spec(2, 3);
  auto m = inst::markov(spec, 1, 0.5, rng);
  auto f = inst::random_table(spec, 3.0, rng);
  auto got = mean_var_exact(*m, f);
  auto want = oracle::moments(oracle::probs(*m), f.table_values());
  EXPECT_NEAR(got.mean, want.mean, 1e-14);
  EXPECT_NEAR(got.variance, want.var, 1e-14);
}

TEST(Moments, DeclaredBoundIsChecked) {
  SequenceSpec spec(2, 2);
  auto f = FunctionalF::table(spec, {0.0, 1.0, -2.0, 0.5}).with_bound(1.5);
  EXPECT_THROW(mean_var_exact(MarkovModel::uniform(spec), f), DomainError);
  EXPECT_NO_THROW(mean_var_exact(MarkovModel::uniform(spec), f.with_bound(2.0)));
}

TEST(LogPartition, ZeroAndConstant) {
  RngStream rng(28);
  SequenceSpec spec(3, 3);
  auto m = inst::markov(spec, 1, 0.5, rng);
  auto f = inst::random_table(spec, 2.0, rng);
  EXPECT_NEAR(log_partition_exact(*m, f, 0.0), 0.0, 1e-14);
  auto c = FunctionalF::table(spec, std::vector<double>(27, -1.7));
  EXPECT_NEAR(log_partition_exact(*m, c, 0.8), 0.8 * -1.7, 1e-13);
}

TEST(LogPartition, DerivativeIdentitiesByFiniteDifferences) {
  RngStream rng(29);
  SequenceSpec spec(3, 4);
  auto m = inst::markov(spec, 2, 0.5, rng);
  auto f = inst::random_table(spec, 2.0, rng);
  const double a = 0.3, h = 1e-6;
  auto lz = [&](double x) { return log_partition_exact(*m, f, x); };
  const auto p = oracle::tilt(oracle::probs(*m), f.table_values(), a);
  const auto mv = oracle::moments(p, f.table_values());
  const double d1 = (lz(a + h) - lz(a - h)) / (2 * h);
  EXPECT_NEAR(d1, mv.mean, 1e-5 * std::abs(mv.mean));
  // The second difference needs a wider step to beat rounding.
  const double h2 = 1e-4;
  const double d2 = (lz(a + h2) - 2 * lz(a) + lz(a - h2)) / (h2 * h2);
  EXPECT_NEAR(d2, mv.var, 1e-5 * mv.var);
}

TEST(LogPartition, StableAtLargeAlpha) {
  SequenceSpec spec(2, 3);
  auto f = FunctionalF::table(spec, {0, 1, 2, 3, 4, 5, 6, 7});
  const double lz = log_partition_exact(MarkovModel::uniform(spec), f, 500.0);
  EXPECT_TRUE(std::isfinite(lz));
  EXPECT_NEAR(lz, 500.0 * 7 - std::log(8.0), 1e-9);
}

TEST(ConditionalMI, WindowModelCarriesNoDeepInformation) {
  RngStream rng(30);
  SequenceSpec spec(2, 5);
  auto truth = inst::markov(spec, 3, 0.5, rng);
  auto lm = LimitedMemoryModel::truncate(*truth, 1);
  for (std::size_t t = 3; t <= 5; ++t) EXPECT_NEAR(conditional_mi_exact(memory_joint(*truth, lm, t, 1)), 0.0, 1e-14);
}

TEST(ConditionalMI, PerfectChannel) {
  // X = a fair-ish first token, Y independent, Z = copy of X.
  const double px[2] = {0.3, 0.7}, py[3] = {0.2, 0.5, 0.3};
  JointZYX j(2, 3, 2);
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t y = 0; y < 3; ++y) j.at(x, y, x) = px[x] * py[y];
  EXPECT_NEAR(conditional_mi_exact(j), oracle::binary_entropy(0.3), 1e-14);
}

TEST(ConditionalMI, SecondOrderTruthByDoubleMarginalization) {
  RngStream rng(31);
  SequenceSpec spec(2, 4);
  auto truth = inst::markov(spec, 2, 0.5, rng);
  const auto j = memory_joint(*truth, *truth, 4, 1);
  const auto want = oracle::memory_joint(*truth, *truth, 4, 1);
  for (std::size_t x = 0; x < j.nx; ++x)
    for (std::size_t y = 0; y < j.ny; ++y)
      for (std::size_t z = 0; z < j.nz; ++z) EXPECT_NEAR(j.at(x, y, z), want[x][y][z], 1e-15);
  const double got = conditional_mi_exact(j);
  EXPECT_NEAR(got, oracle::conditional_mi(want), 1e-13);
  EXPECT_GT(got, 1e-4);
}

TEST(Budget, EnumerationFailsFast) {
  ExactOptions opts;
  opts.budget.max_states = 1024;
  auto u = uniform(4, 5);
  EXPECT_NO_THROW(entropy_exact(*u, opts));
  auto big = uniform(4, 6);
  EXPECT_THROW(entropy_exact(*big, opts), ResourceError);
  EXPECT_THROW(kl_exact(*big, *big, opts), ResourceError);
  EXPECT_THROW(log_partition_exact(*big, FunctionalF::neg_log_prob(big), 1.0, opts), ResourceError);
  EXPECT_THROW(memory_joint(*big, *big, 6, 1, opts), ResourceError);
}

TEST(Workers, ResultsIndependentOfWorkerCount) {
  RngStream rng(32);
  SequenceSpec spec(3, 6);
  auto p = inst::markov(spec, 2, 0.5, rng);
  auto q = inst::perturbed(*p, 0.3, rng);
  ExactOptions one, four;
  four.workers = 4;
  EXPECT_EQ(entropy_exact(*p, one), entropy_exact(*p, four));
  EXPECT_EQ(kl_exact(*p, *q, one), kl_exact(*p, *q, four));
  EXPECT_EQ(drift_curve_exact(*p, one), drift_curve_exact(*p, four));
  EXPECT_EQ(memory_joint(*p, *q, 5, 2, one).p, memory_joint(*p, *q, 5, 2, four).p);
}

TEST(DriftCurve, StepEntropiesSumToTheEntropy) {
  RngStream rng(33);
  SequenceSpec spec(3, 5);
  auto m = inst::markov(spec, 2, 0.5, rng);
  DriftModel d(m);
  const auto curve = drift_curve_exact(d);
  ASSERT_EQ(curve.size(), 5u);
  double s = 0;
  for (double h : curve) s += h;
  EXPECT_NEAR(s, entropy_exact(d), 1e-12);
}

// Properties over random instances.

TEST(ExactProperties, RegretIdentity) {
  RngStream rng(34);
  for (int rep = 0; rep < 50; ++rep) {
    auto spec = inst::random_spec(rng);
    auto p = inst::markov(spec, rng.below(3), 0.5, rng);
    auto q = inst::perturbed(*p, 0.5, rng);
    const double T = static_cast<double>(spec.T());
    EXPECT_NEAR(cross_entropy_exact(*p, *q), entropy_rate_exact(*p) + kl_exact(*p, *q) / T, 1e-9);
  }
}

TEST(ExactProperties, GibbsInequality) {
  RngStream rng(35);
  for (int rep = 0; rep < 100; ++rep) {
    auto spec = inst::random_spec(rng, 512);
    auto p = inst::markov(spec, rng.below(3), 0.3 + rng.uniform(), rng);
    auto q = inst::markov(spec, rng.below(3), 0.3 + rng.uniform(), rng);
    EXPECT_GE(kl_exact(*p, *q), 0.0);
  }
}

TEST(ExactProperties, PinskerForBoundedFunctionals) {
  RngStream rng(36);
  for (int rep = 0; rep < 200; ++rep) {
    auto spec = inst::random_spec(rng, 512);
    auto p = inst::markov(spec, rng.below(3), 0.5, rng);
    auto q = inst::perturbed(*p, rng.uniform(), rng);
    const double B = 0.5 + 3 * rng.uniform();
    auto f = inst::random_table(spec, B, rng);
    const double gap = std::abs(mean_var_exact(*p, f).mean - mean_var_exact(*q, f).mean);
    EXPECT_LE(gap, B * std::sqrt(2 * kl_exact(*p, *q)) + 1e-12);
  }
}

TEST(ExactProperties, L1BelowPinsker) {
  RngStream rng(37);
  for (int rep = 0; rep < 100; ++rep) {
    auto spec = inst::random_spec(rng, 512);
    auto p = inst::markov(spec, rng.below(3), 0.5, rng);
    auto q = inst::perturbed(*p, rng.uniform(), rng);
    EXPECT_LE(l1_distance_exact(*p, *q), std::sqrt(2 * kl_exact(*p, *q)) + 1e-12);
  }
}

TEST(ExactProperties, MixtureLogLossIsCapped) {
  RngStream rng(38);
  for (int rep = 0; rep < 50; ++rep) {
    auto spec = inst::random_spec(rng, 512);
    auto base = inst::markov(spec, rng.below(3), 0.1, rng);
    const double eps = std::exp(-8 * rng.uniform());
    MixtureModel mix(base, eps);
    const double cap = static_cast<double>(spec.T()) * std::log(static_cast<double>(spec.M())) + std::log(1 / eps);
    for (double lp : log_prob_table(mix)) EXPECT_LE(-lp, cap + 1e-12);
  }
}

TEST(ExactProperties, LogPartitionDerivativesOnRandomInstances) {
  RngStream rng(39);
  for (int rep = 0; rep < 20; ++rep) {
    auto spec = inst::random_spec(rng, 512);
    auto m = inst::markov(spec, rng.below(3), 0.5, rng);
    auto f = inst::random_table(spec, 1.0 + rng.uniform(), rng);
    const double a = 2 * rng.uniform() - 1, h = 1e-6;
    const auto mv = oracle::moments(oracle::tilt(oracle::probs(*m), f.table_values(), a), f.table_values());
    const double d1 = (log_partition_exact(*m, f, a + h) - log_partition_exact(*m, f, a - h)) / (2 * h);
    EXPECT_NEAR(d1, mv.mean, 1e-5 * std::max(1.0, std::abs(mv.mean)));
  }
}
