#pragma once

// Monte-Carlo counterparts of the exact quantities, and the generation drift
// curve. Sample i always comes from substream i of the caller's stream and
// samples are reduced in fixed-size chunks merged in order, so results are
// bit-identical for any worker count.

#include <optional>
#include <sstream>

#include "entcal/enumerate.hpp"
#include "entcal/functional.hpp"

namespace entcal {

/// Welford accumulator with Chan's merge.
class RunningStats {
 public:
  void add(double x) noexcept {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  void merge(const RunningStats& o) noexcept {
    if (o.n_ == 0) return;
    if (n_ == 0) {
      *this = o;
      return;
    }
    const double n = static_cast<double>(n_ + o.n_);
    const double d = o.mean_ - mean_;
    mean_ += d * static_cast<double>(o.n_) / n;
    m2_ += o.m2_ + d * d * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
    n_ += o.n_;
  }
  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double std_error() const noexcept { return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string stream;
  bool infinite = false;
  std::optional<Sequence> offending;

  json to_json() const {
    json j = {{"value", infinite ? json("inf") : json(value)},
              {"stderr", std_error},
              {"n", n},
              {"seed", seed},
              {"stream", stream},
              {"infinite", infinite}};
    if (offending) j["offending"] = *offending;
    return j;
  }
};

struct McOptions {
  std::size_t workers = 1;
  std::size_t chunk = 4096;  // fixed reduction granularity
};

namespace detail {

inline void require_samples(std::size_t n) {
  if (n < 2) throw DomainError("Monte-Carlo estimates need at least 2 samples");
}

/// Mean of per-sample values x_i = value(i, rng_i). A NaN-free +inf marks the
/// sample as unsupported; the first such sample (by index) is reported.
template <class Value>
McEstimate mc_mean(std::size_t n, const RngStream& rng, const McOptions& mo, Value&& value) {
  require_samples(n);
  const std::size_t chunks = (n + mo.chunk - 1) / mo.chunk;
  std::vector<RunningStats> stats(chunks);
  std::vector<std::optional<std::pair<std::size_t, Sequence>>> bad(chunks);
  parallel_for(chunks, mo.workers, [&](std::size_t c) {
    const std::size_t end = std::min(n, (c + 1) * mo.chunk);
    for (std::size_t i = c * mo.chunk; i < end; ++i) {
      RngStream r = rng.substream(i);
      Sequence w;
      const double x = value(r, w);
      if (std::isinf(x)) {
        if (!bad[c]) bad[c] = std::make_pair(i, w);
        continue;
      }
      stats[c].add(x);
    }
  });
  McEstimate e;
  e.n = n;
  e.seed = rng.seed();
  e.stream = rng.name();
  RunningStats all;
  for (const auto& s : stats) all.merge(s);
  for (const auto& b : bad)
    if (b) {
      e.infinite = true;
      e.offending = b->second;
      e.value = kInfiniteNats;
      return e;
    }
  e.value = all.mean();
  e.std_error = all.std_error();
  return e;
}

}  // namespace detail

/// (1/T) E_{w ~ p}[-log q(w)] from n draws of p.
inline McEstimate cross_entropy_mc(const ConditionalModel& p, const ConditionalModel& q, std::size_t n,
                                   const RngStream& rng, const McOptions& mo = {}) {
  if (!(p.spec() == q.spec())) throw DomainError("models are defined on different sequence spaces");
  const double T = static_cast<double>(p.spec().T());
  return detail::mc_mean(n, rng, mo, [&](RngStream& r, Sequence& w) {
    w = sample_sequence(p, r);
    const double lq = q.seq_log_prob(w);
    return lq == kNegInf ? kInfiniteNats : -lq / T;
  });
}

inline McEstimate entropy_rate_mc(const ConditionalModel& p, std::size_t n, const RngStream& rng,
                                  const McOptions& mo = {}) {
  return cross_entropy_mc(p, p, n, rng, mo);
}

/// KL(p || q) over the whole sequence.
inline McEstimate kl_mc(const ConditionalModel& p, const ConditionalModel& q, std::size_t n, const RngStream& rng,
                        const McOptions& mo = {}) {
  if (!(p.spec() == q.spec())) throw DomainError("models are defined on different sequence spaces");
  return detail::mc_mean(n, rng, mo, [&](RngStream& r, Sequence& w) {
    w = sample_sequence(p, r);
    const double lq = q.seq_log_prob(w);
    return lq == kNegInf ? kInfiniteNats : p.seq_log_prob(w) - lq;
  });
}

/// mu_D(f) from n draws of D.
inline McEstimate mean_mc(const ConditionalModel& d, const FunctionalF& f, std::size_t n, const RngStream& rng,
                          const McOptions& mo = {}) {
  return detail::mc_mean(n, rng, mo, [&](RngStream& r, Sequence& w) {
    w = sample_sequence(d, r);
    return f(w);
  });
}

/// Where generations get their seed prefixes.
class PrefixSource {
 public:
  static PrefixSource none() { return PrefixSource(); }
  /// Prefixes of `length` tokens drawn from `truth`.
  static PrefixSource from_model(ModelPtr truth, std::size_t length) {
    PrefixSource s;
    s.truth_ = std::move(truth);
    s.length_ = length;
    return s;
  }
  /// Generation g takes the first `length` tokens of corpus[g mod size].
  static PrefixSource from_corpus(std::vector<Sequence> corpus, std::size_t length) {
    if (corpus.empty()) throw DataError("prefix corpus is empty");
    for (const auto& w : corpus)
      if (w.size() < length) throw DataError("corpus sequence shorter than the prefix length");
    PrefixSource s;
    s.corpus_ = std::make_shared<const std::vector<Sequence>>(std::move(corpus));
    s.length_ = length;
    return s;
  }

  std::size_t length() const noexcept { return length_; }
  std::string policy() const {
    if (truth_) return "true_model:" + std::to_string(length_);
    if (corpus_) return "corpus:" + std::to_string(length_);
    return "none";
  }

  Sequence draw(std::size_t g, RngStream& rng) const {
    if (truth_) {
      Sequence w = sample_sequence(*truth_, rng);
      w.resize(length_);
      return w;
    }
    if (corpus_) {
      const auto& src = (*corpus_)[g % corpus_->size()];
      return Sequence(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(length_));
    }
    return {};
  }

 private:
  ModelPtr truth_;
  std::shared_ptr<const std::vector<Sequence>> corpus_;
  std::size_t length_ = 0;
};

struct DriftPoint {
  std::size_t t = 0;
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  std::optional<double> empirical;  // plug-in entropy of the realized t-th tokens
};

struct DriftCurve {
  std::vector<DriftPoint> points;
  std::string prefix_policy;
  std::size_t t_max = 0;
  std::uint64_t seed = 0;
  std::string stream;
  std::string model_hash;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    const bool emp = !points.empty() && points.front().empirical.has_value();
    os << "t,mean,stderr,n" << (emp ? ",empirical" : "") << "\n";
    for (const auto& p : points) {
      os << p.t << "," << p.mean << "," << p.std_error << "," << p.n;
      if (emp) os << "," << *p.empirical;
      os << "\n";
    }
    return os.str();
  }
  json to_json() const {
    json pts = json::array();
    for (const auto& p : points) {
      json j = {{"t", p.t}, {"mean", p.mean}, {"stderr", p.std_error}, {"n", p.n}};
      if (p.empirical) j["empirical"] = *p.empirical;
      pts.push_back(j);
    }
    return {{"points", pts}, {"prefix_policy", prefix_policy}, {"t_max", t_max},
            {"seed", seed},  {"stream", stream},                {"model_hash", model_hash}};
  }
};

struct DriftOptions {
  std::size_t t_max = 0;  // 0 means T
  bool empirical = false;
  McOptions mc{};
};

/// For every step t, the mean over generations of the exact entropy of the
/// model's conditional at the generated (or seeded) prefix.
inline DriftCurve drift_curve(const ConditionalModel& model, std::size_t n_gen, const PrefixSource& prefixes,
                              const RngStream& rng, const DriftOptions& dopts = {}) {
  detail::require_samples(n_gen);
  const std::size_t M = model.spec().M(), T = model.spec().T();
  if (prefixes.length() >= T) throw LengthError("seed prefix must be shorter than T");
  const std::size_t t_max = dopts.t_max == 0 ? T : dopts.t_max;
  if (t_max > T) throw DomainError("t_max exceeds T");
  const std::size_t chunk = dopts.mc.chunk;
  const std::size_t chunks = (n_gen + chunk - 1) / chunk;
  std::vector<std::vector<RunningStats>> stats(chunks, std::vector<RunningStats>(t_max));
  std::vector<std::vector<double>> counts(chunks, std::vector<double>(dopts.empirical ? t_max * M : 0, 0.0));
  detail::parallel_for(chunks, dopts.mc.workers, [&](std::size_t c) {
    const std::size_t end = std::min(n_gen, (c + 1) * chunk);
    for (std::size_t g = c * chunk; g < end; ++g) {
      RngStream r = rng.substream(g);
      RngStream pr = r.substream("prefix");
      Sequence prefix = prefixes.draw(g, pr);
      auto cur = model.start();
      for (std::size_t s = 0; s < t_max; ++s) {
        const auto& d = cur->dist();
        stats[c][s].add(entropy(d));
        const Token tok = s < prefix.size() ? prefix[s] : sample_token(d, r.uniform());
        if (dopts.empirical) counts[c][s * M + tok] += 1.0;
        cur->push(tok);
      }
    }
  });
  DriftCurve curve;
  curve.prefix_policy = prefixes.policy();
  curve.t_max = t_max;
  curve.seed = rng.seed();
  curve.stream = rng.name();
  curve.model_hash = model_hash(model);
  for (std::size_t s = 0; s < t_max; ++s) {
    RunningStats all;
    for (std::size_t c = 0; c < chunks; ++c) all.merge(stats[c][s]);
    DriftPoint p{s + 1, all.mean(), all.std_error(), all.count(), std::nullopt};
    if (dopts.empirical) {
      Distribution h(M, 0.0);
      for (std::size_t c = 0; c < chunks; ++c)
        for (std::size_t j = 0; j < M; ++j) h[j] += counts[c][s * M + j];
      normalize(h);
      p.empirical = entropy(h);
    }
    curve.points.push_back(p);
  }
  return curve;
}

struct EntRateGap {
  McEstimate ce;             // CE(Pr || model) if a true model is given
  double early = 0.0;        // curve at t = 1 when no true model is given
  double late = 0.0;         // curve at t_max
  double late_stderr = 0.0;
  double gap = 0.0;
  double gap_stderr = 0.0;
  DriftCurve curve;

  json to_json() const {
    return {{"ce", ce.to_json()}, {"early", early},   {"late", late}, {"late_stderr", late_stderr},
            {"gap", gap},         {"gap_stderr", gap_stderr}, {"curve", curve.to_json()}};
  }
};

/// Late-step generation entropy minus the model's cross entropy on data.
/// Without a true model the t = 1 point of the curve stands in for the CE.
inline EntRateGap ent_rate_gap(const ConditionalModel& model, const ConditionalModel* truth, std::size_t n_gen,
                               std::size_t n_ce, const RngStream& rng, const DriftOptions& dopts = {}) {
  EntRateGap g;
  g.curve = drift_curve(model, n_gen, PrefixSource::none(), rng.substream("drift"), dopts);
  const auto& last = g.curve.points.back();
  g.late = last.mean;
  g.late_stderr = last.std_error;
  if (truth) {
    g.ce = cross_entropy_mc(*truth, model, n_ce, rng.substream("ce"), dopts.mc);
    g.early = g.ce.value;
    g.gap = g.late - g.ce.value;
    g.gap_stderr = std::hypot(g.late_stderr, g.ce.std_error);
  } else {
    const auto& first = g.curve.points.front();
    g.early = first.mean;
    g.gap = g.late - first.mean;
    g.gap_stderr = std::hypot(g.late_stderr, first.std_error);
  }
  return g;
}

}  // namespace entcal
