#include <gtest/gtest.h>

#include "instances.hpp"
#include "oracles.hpp"

using namespace entcal;

namespace {

std::vector<ModelPtr> zoo(SequenceSpec spec, RngStream& rng) {
  auto m1 = inst::markov(spec, 1, 0.5, rng);
  auto m2 = inst::markov(spec, 2, 0.5, rng);
  auto lm = std::make_shared<const LimitedMemoryModel>(LimitedMemoryModel::truncate(*m2, 1));
  return {
      m1,
      m2,
      inst::markov(spec, 0, 0.5, rng),
      std::make_shared<const MixtureModel>(m1, 0.2),
      std::make_shared<const PerTokenMixture>(m1, 0.2),
      std::make_shared<const DriftModel>(m2),
      lm,
      std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*m2, 1)),
      std::make_shared<const TabularModel>(TabularModel::materialize(*m2)),
      std::make_shared<const GlobalTiltModel>(m1, FunctionalF::neg_log_prob(m2), 0.7),
      std::make_shared<const StepTiltModel>(local_tilt(m2, -1.3)),
      std::make_shared<const StepTiltModel>(
          m2, std::make_shared<const ComparatorLogFeature>(lm, std::vector<std::size_t>{2, 3}), 0.4),
  };
}

}  // namespace

TEST(Models, UniformMarkovGivesUniformRows) {
  SequenceSpec spec(4, 3);
  auto u = MarkovModel::uniform(spec);
  for (const Sequence& ctx : {Sequence{}, Sequence{3}, Sequence{1, 2}})
    for (double p : u.next_dist(ctx)) EXPECT_EQ(p, 0.25);
}

TEST(Models, ZeroWeightMixtureEqualsBase) {
  RngStream rng(1);
  SequenceSpec spec(3, 4);
  auto base = inst::markov(spec, 1, 0.5, rng);
  MixtureModel mix(base, 0.0);
  for (const auto& ctx : oracle::all_sequences(3, 2)) EXPECT_EQ(mix.next_dist(ctx), base->next_dist(ctx));
}

TEST(Models, MixtureConditionalMatchesEnumeration) {
  SequenceSpec spec(2, 2);
  auto base = std::make_shared<const MarkovModel>(MarkovModel::deterministic(spec, 0));
  MixtureModel mix(base, 0.5);
  // Sequence probabilities: 0.5 * [w = 00] + 0.5 / 4.
  const double p00 = 0.5 + 0.125, p01 = 0.125;
  const auto d = mix.next_dist(Sequence{0});
  EXPECT_NEAR(d[0], p00 / (p00 + p01), 1e-15);
  EXPECT_NEAR(d[1], p01 / (p00 + p01), 1e-15);
  // Prefix-ratio form (0.5*1 + 0.5*0.25) / (0.5*1 + 0.5*0.5).
  EXPECT_NEAR(d[0], 0.625 / 0.75, 1e-15);
  const auto d1 = mix.next_dist(Sequence{1});
  EXPECT_NEAR(d1[0], 0.5, 1e-15);
}

TEST(Models, SeqLogProbOfUniform) {
  SequenceSpec spec(3, 5);
  auto u = MarkovModel::uniform(spec);
  EXPECT_NEAR(u.seq_log_prob(Sequence{0, 1, 2, 1, 0}), -5 * std::log(3.0), 1e-12);
}

TEST(Models, DriftWithoutSwitchingIsBase) {
  RngStream rng(2);
  SequenceSpec spec(3, 4);
  auto base = inst::markov(spec, 1, 0.3, rng);
  DriftModel d(base, 0.0);
  for (const auto& w : oracle::all_sequences(3, 4)) EXPECT_EQ(d.seq_log_prob(w), base->seq_log_prob(w));
}

TEST(Models, DriftScoringMatchesSwitchTimeSum) {
  RngStream rng(3);
  SequenceSpec spec(3, 3);
  auto base = inst::markov(spec, 1, 0.3, rng);
  DriftModel always(base, 1.0);
  const Sequence w{0, 1, 2};
  EXPECT_NEAR(always.seq_log_prob(w), std::log(oracle::drift_prob_by_switch_time(*base, 1.0, w)), 1e-12);
  for (double p : {0.1, 1.0 / 3.0, 0.7}) {
    DriftModel d(base, p);
    for (const auto& v : oracle::all_sequences(3, 3))
      EXPECT_NEAR(std::exp(d.seq_log_prob(v)), oracle::drift_prob_by_switch_time(*base, p, v), 1e-14);
  }
}

TEST(Models, DriftDefaultSwitchProbabilityIsInverseLength) {
  SequenceSpec spec(2, 8);
  DriftModel d(std::make_shared<const MarkovModel>(MarkovModel::uniform(spec)));
  EXPECT_DOUBLE_EQ(d.switch_prob(), 0.125);
}

TEST(Models, LatentDriftSamplerHasTheMarginalLaw) {
  SequenceSpec spec(2, 3);
  RngStream rng(4);
  auto base = inst::markov(spec, 1, 0.3, rng);
  DriftModel d(base, 0.3);
  const int n = 200000;
  std::vector<double> counts(8, 0.0);
  RngStream s(5, "latent");
  for (int i = 0; i < n; ++i) counts[sequence_index(sample_drift_latent(d, s), 2)] += 1.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const double p = std::exp(d.seq_log_prob(sequence_at(i, 2, 3)));
    EXPECT_NEAR(counts[i] / n, p, 4 * std::sqrt(p * (1 - p) / n));
  }
}

TEST(Models, DeterministicSampling) {
  SequenceSpec spec(3, 6);
  auto m = MarkovModel::deterministic(spec, 0);
  RngStream rng(6);
  EXPECT_EQ(sample_sequence(m, rng), Sequence(6, 0));
}

TEST(Models, SamplingPreservesPrefix) {
  RngStream rng(7);
  SequenceSpec spec(3, 5);
  auto m = inst::markov(spec, 1, 1.0, rng);
  const Sequence prefix{2, 1, 0, 2};
  auto w = sample_sequence(*m, rng, prefix);
  ASSERT_EQ(w.size(), 5u);
  EXPECT_TRUE(std::equal(prefix.begin(), prefix.end(), w.begin()));
  EXPECT_THROW(sample_sequence(*m, rng, Sequence{0, 0, 0, 0, 0}), LengthError);
}

TEST(Models, SamplingIsReproducible) {
  RngStream rng(8);
  SequenceSpec spec(4, 6);
  auto m = inst::markov(spec, 2, 1.0, rng);
  RngStream a(99, "s"), b(99, "s");
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_sequence(*m, a), sample_sequence(*m, b));
}

TEST(Models, UniformUnigramFrequencies) {
  SequenceSpec spec(4, 5);
  auto u = MarkovModel::uniform(spec);
  RngStream rng(9, "unigram");
  const int n = 100000;
  std::vector<double> counts(4, 0.0);
  for (int i = 0; i < n; ++i)
    for (Token t : sample_sequence(u, rng)) counts[t] += 1.0;
  const double N = n * 5.0;
  const double se = std::sqrt(0.25 * 0.75 / N);
  for (double c : counts) EXPECT_NEAR(c / N, 0.25, 3 * se);
}

TEST(Models, InverseCdfUsesAscendingIds) {
  const Distribution d{0.2, 0.0, 0.5, 0.3};
  EXPECT_EQ(sample_token(d, 0.0), 0u);
  EXPECT_EQ(sample_token(d, 0.19999), 0u);
  EXPECT_EQ(sample_token(d, 0.2), 2u);
  EXPECT_EQ(sample_token(d, 0.69999), 2u);
  EXPECT_EQ(sample_token(d, 0.7), 3u);
  EXPECT_EQ(sample_token(d, 0.9999999999), 3u);
}

TEST(Models, WindowMarginalOfFirstOrderChainIsItsTable) {
  RngStream rng(10);
  SequenceSpec spec(3, 5);
  auto m = inst::markov(spec, 1, 0.5, rng);
  auto lm = marginalize_to_window(*m, 1);
  for (Token y = 0; y < 3; ++y)
    for (std::size_t s = 1; s < 5; ++s) {
      Sequence ctx(s, 0);
      ctx.back() = y;
      const auto got = lm.next_dist(ctx);
      for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got[j], m->transition()[y][j], 1e-13);
    }
}

TEST(Models, WindowMarginalOfSecondOrderChain) {
  RngStream rng(11);
  SequenceSpec spec(2, 4);
  auto m = inst::markov(spec, 2, 0.5, rng);
  auto lm = marginalize_to_window(*m, 1);
  for (std::size_t s = 0; s < 4; ++s)
    for (const auto& ctx : oracle::all_sequences(2, s)) {
      const Sequence y = s == 0 ? Sequence{} : Sequence{ctx.back()};
      const auto want = oracle::window_row(*m, s, y);
      const auto got = lm.next_dist(ctx);
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(got[j], want[j], 1e-13);
    }
}

TEST(Models, WindowMarginalOfIidIsUnigram) {
  SequenceSpec spec(3, 4);
  auto m = MarkovModel::iid(spec, {0.5, 0.3, 0.2});
  for (std::size_t tau : {1u, 2u, 3u}) {
    auto lm = marginalize_to_window(m, tau);
    for (const auto& ctx : oracle::all_sequences(3, 3)) {
      const auto d = lm.next_dist(ctx);
      EXPECT_NEAR(d[0], 0.5, 1e-14);
      EXPECT_NEAR(d[1], 0.3, 1e-14);
      EXPECT_NEAR(d[2], 0.2, 1e-14);
    }
  }
}

TEST(Models, WindowMarginalRespectsBudget) {
  SequenceSpec spec(4, 12);
  auto m = MarkovModel::uniform(spec);
  ExactOptions opts;
  opts.budget.max_states = 1000;
  EXPECT_THROW(marginalize_to_window(m, 2, opts), ResourceError);
}

TEST(Models, ContextAndTokenErrors) {
  SequenceSpec spec(3, 3);
  auto m = MarkovModel::uniform(spec);
  EXPECT_THROW(m.next_dist(Sequence{0, 1, 2}), LengthError);
  EXPECT_THROW(m.next_dist(Sequence{3}), DomainError);
  EXPECT_THROW(m.seq_log_prob(Sequence{0, 1}), LengthError);
  EXPECT_THROW(Vocab(1), DomainError);
  EXPECT_THROW(SequenceSpec(2, 0), DomainError);
  EXPECT_THROW(MixtureModel(std::make_shared<const MarkovModel>(m), 1.5), DomainError);
  EXPECT_THROW(MarkovModel(spec, 1, {MarkovModel::Table{{0.5, 0.5, 0.1}}}, MarkovModel::Table(3, {1, 0, 0})),
               DomainError);
}

// Properties over every model kind.

TEST(ModelProperties, RowsAreDistributionsOnRandomContexts) {
  RngStream rng(12);
  SequenceSpec spec(3, 5);
  for (const auto& m : zoo(spec, rng)) {
    RngStream ctx_rng(13, m->kind());
    for (int i = 0; i < 1000; ++i) {
      Sequence ctx(ctx_rng.below(5));
      for (auto& t : ctx) t = static_cast<Token>(ctx_rng.below(3));
      const auto d = m->next_dist(ctx);
      ASSERT_EQ(d.size(), 3u);
      EXPECT_TRUE(is_distribution(d, 1e-12)) << m->kind();
    }
  }
}

TEST(ModelProperties, ChainRuleSumsToOne) {
  RngStream rng(14);
  SequenceSpec spec(3, 5);
  for (const auto& m : zoo(spec, rng)) {
    double total = 0.0;
    for (const auto& w : oracle::all_sequences(3, 5)) {
      const double lp = m->seq_log_prob(w);
      double by_steps = 0.0;
      Sequence ctx;
      for (Token t : w) {
        by_steps += std::log(m->next_dist(ctx)[t]);
        ctx.push_back(t);
      }
      if (lp != kNegInf) {
        EXPECT_NEAR(lp, by_steps, 1e-10) << m->kind();
      }
      total += std::exp(lp);
    }
    EXPECT_NEAR(total, 1.0, 1e-9) << m->kind();
  }
}

TEST(ModelProperties, MixtureIsSequenceLevel) {
  RngStream rng(15);
  for (int rep = 0; rep < 10; ++rep) {
    auto spec = inst::random_spec(rng, 1024);
    auto base = inst::markov(spec, 1, 0.3, rng);
    const double g = rng.uniform();
    MixtureModel mix(base, g);
    const double uni = std::pow(static_cast<double>(spec.M()), -static_cast<double>(spec.T()));
    for (const auto& w : oracle::all_sequences(spec.M(), spec.T()))
      EXPECT_NEAR(std::exp(mix.seq_log_prob(w)), (1 - g) * std::exp(base->seq_log_prob(w)) + g * uni, 1e-14);
  }
}

TEST(ModelProperties, PerTokenMixtureDiffersFromSequenceMixture) {
  SequenceSpec spec(2, 3);
  auto base = std::make_shared<const MarkovModel>(MarkovModel::deterministic(spec, 0));
  MixtureModel seq(base, 0.5);
  PerTokenMixture tok(base, 0.5);
  EXPECT_NE(seq.seq_log_prob(Sequence{0, 0, 0}), tok.seq_log_prob(Sequence{0, 0, 0}));
  EXPECT_NEAR(std::exp(tok.seq_log_prob(Sequence{0, 0, 0})), 0.75 * 0.75 * 0.75, 1e-15);
}

TEST(ModelProperties, WindowModelsIgnoreDeepPast) {
  RngStream rng(16);
  SequenceSpec spec(3, 6);
  auto m = inst::markov(spec, 3, 0.5, rng);
  for (std::size_t tau : {1u, 2u, 3u}) {
    auto a = LimitedMemoryModel::truncate(*m, tau);
    auto b = marginalize_to_window(*m, tau);
    RngStream r(17, "pairs");
    for (int i = 0; i < 200; ++i) {
      const std::size_t len = tau + r.below(6 - tau);
      Sequence c1(len), c2(len);
      for (std::size_t k = 0; k < len; ++k) {
        c1[k] = static_cast<Token>(r.below(3));
        c2[k] = k + tau >= len ? c1[k] : static_cast<Token>(r.below(3));
      }
      EXPECT_EQ(a.next_dist(c1), a.next_dist(c2));
      if (len == c1.size() && len >= tau) {
        // Exact marginals are per-step, so compare at equal length only.
        EXPECT_EQ(b.next_dist(c1), b.next_dist(c2));
      }
    }
  }
}

TEST(ModelProperties, TruncationRestartsOnTheWindow) {
  RngStream rng(18);
  SequenceSpec spec(2, 5);
  auto m = inst::markov(spec, 2, 0.5, rng);
  auto lm = LimitedMemoryModel::truncate(*m, 1);
  const Sequence ctx{1, 0, 1};
  EXPECT_EQ(lm.next_dist(ctx), m->next_dist(Sequence{1}));
}

TEST(ModelProperties, NgramSmoothingOfUnseenContextIsUniform) {
  SequenceSpec spec(3, 3);
  std::vector<Sequence> samples(5, Sequence{0, 0, 0});
  auto lm = fit_ngram(spec, samples, 1, 1.0);
  for (double p : lm.next_dist(Sequence{2})) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  EXPECT_THROW(fit_ngram(spec, samples, 1, 1.0, 10), DataError);
}
