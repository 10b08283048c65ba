#pragma once

// Config-driven runs behind the command-line tool: config validation and
// hashing, model construction from descriptions, one function per pipeline,
// the randomized verification suite and the run directory writer.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "entcal/calibrate.hpp"
#include "entcal/estimate.hpp"
#include "entcal/memory.hpp"
#include "entcal/serialize.hpp"

namespace entcal {

inline constexpr const char* kToolVersion = "0.1.0";

/// Invalid configuration. `key()` is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& expected)
      : std::runtime_error("config key '" + key + "': " + expected), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

namespace detail {

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Reads typed keys out of one JSON object, fills defaults into `out()` and
/// rejects keys nobody asked for.
class KeyReader {
 public:
  KeyReader(const json& src, std::string prefix) : src_(src), prefix_(std::move(prefix)) {
    if (!src_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  bool has(const std::string& key) const { return src_.contains(key); }

  std::uint64_t uint(const std::string& key, std::optional<std::uint64_t> fallback, std::uint64_t min = 0) {
    const std::string shape = "expected an unsigned integer >= " + std::to_string(min);
    const json* v = take(key);
    if (!v) {
      if (!fallback) throw ConfigError(name(key), "missing; " + shape);
      out_[key] = *fallback;
      return *fallback;
    }
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
      throw ConfigError(name(key), shape);
    const auto x = v->get<std::uint64_t>();
    if (x < min) throw ConfigError(name(key), shape);
    out_[key] = x;
    return x;
  }

  double number(const std::string& key, std::optional<double> fallback, double lo, double hi, bool open_lo = false,
                bool open_hi = false) {
    const std::string shape = std::string("expected a number in ") + (open_lo ? "(" : "[") + fmt(lo) + ", " +
                              fmt(hi) + (open_hi ? ")" : "]");
    const json* v = take(key);
    if (!v) {
      if (!fallback) throw ConfigError(name(key), "missing; " + shape);
      out_[key] = *fallback;
      return *fallback;
    }
    if (!v->is_number()) throw ConfigError(name(key), shape);
    const double x = v->get<double>();
    if (!(open_lo ? x > lo : x >= lo) || !(open_hi ? x < hi : x <= hi)) throw ConfigError(name(key), shape);
    out_[key] = *v;
    return x;
  }

  std::string choice(const std::string& key, std::optional<std::string> fallback,
                     const std::vector<std::string>& choices) {
    std::string shape = "expected one of";
    for (const auto& c : choices) shape += " '" + c + "'";
    const json* v = take(key);
    if (!v) {
      if (!fallback) throw ConfigError(name(key), "missing; " + shape);
      out_[key] = *fallback;
      return *fallback;
    }
    if (!v->is_string()) throw ConfigError(name(key), shape);
    const auto s = v->get<std::string>();
    if (std::find(choices.begin(), choices.end(), s) == choices.end()) throw ConfigError(name(key), shape);
    out_[key] = s;
    return s;
  }

  std::optional<std::string> path(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_string() || v->get<std::string>().empty()) throw ConfigError(name(key), "expected a file path");
    out_[key] = *v;
    return v->get<std::string>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = take(key);
    if (!v) {
      out_[key] = fallback;
      return fallback;
    }
    if (!v->is_boolean()) throw ConfigError(name(key), "expected true or false");
    out_[key] = *v;
    return v->get<bool>();
  }

  /// A single unsigned integer or a list of them.
  std::vector<std::size_t> uint_list(const std::string& key, std::vector<std::size_t> fallback, std::size_t min) {
    const std::string shape = "expected an unsigned integer >= " + std::to_string(min) + " or a list of them";
    const json* v = take(key);
    if (!v) {
      out_[key] = fallback;
      return fallback;
    }
    const json list = v->is_array() ? *v : json::array({*v});
    if (list.empty()) throw ConfigError(name(key), shape);
    std::vector<std::size_t> xs;
    for (const auto& e : list) {
      if (!e.is_number_unsigned() || e.get<std::size_t>() < min) throw ConfigError(name(key), shape);
      xs.push_back(e.get<std::size_t>());
    }
    out_[key] = xs;
    return xs;
  }

  const json* object(const std::string& key) {
    const json* v = take(key);
    if (v && !v->is_object()) throw ConfigError(name(key), "expected a model description object");
    return v;
  }
  void store(const std::string& key, json value) { out_[key] = std::move(value); }

  void finish() const {
    for (const auto& [k, v] : src_.items())
      if (!seen_.count(k)) throw ConfigError(name(k), "unknown key; expected only documented keys");
  }
  const json& out() const noexcept { return out_; }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = src_.find(key);
    return it == src_.end() ? nullptr : &*it;
  }
  static std::string fmt(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  }

  const json& src_;
  std::string prefix_;
  std::set<std::string> seen_;
  json out_ = json::object();
};

inline json read_model_description(const json& src, const std::string& key, bool allow_derived, std::size_t M) {
  KeyReader r(src, key);
  if (r.has("file")) {
    r.path("file");
    r.finish();
    return r.out();
  }
  const std::vector<std::string> kinds =
      allow_derived ? std::vector<std::string>{"derived", "markov", "uniform", "deterministic"}
                    : std::vector<std::string>{"markov", "uniform", "deterministic"};
  const std::string kind = r.choice("kind", allow_derived ? "derived" : "markov", kinds);
  if (kind == "markov") {
    const auto order = r.uint("order", 1, 0);
    r.number("concentration", 0.5, 0.0, 1e6, true);
    if (r.boolean("stationary", false) && order != 1)
      throw ConfigError(r.name("stationary"), "stationary start needs order 1");
  } else if (kind == "deterministic") {
    if (r.uint("token", 0) >= M) throw ConfigError(r.name("token"), "expected a token id below M");
  }
  r.number("noise", 0.0, 0.0, 1.0);
  if (r.has("drift") && src.at("drift").is_boolean()) {
    r.boolean("drift", false);
  } else {
    r.number("drift", 0.0, 0.0, 1.0);
  }
  r.number("mixture", 0.0, 0.0, 1.0, false, true);
  r.finish();
  return r.out();
}

}  // namespace detail

inline const std::vector<std::string>& pipeline_names() {
  static const std::vector<std::string> names{"calibrate-global", "calibrate-local", "drift", "memory",
                                              "bounds",           "verify",          "gen",   "inspect"};
  return names;
}

/// Validated experiment configuration. `effective` holds every key with its
/// default filled in; `hash()` covers everything that affects outputs.
struct ExperimentConfig {
  json effective;
  std::filesystem::path base_dir;  // relative paths resolve against this

  SequenceSpec spec{2, 1};
  std::string pipeline;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out = "out";
  std::string format = "csv";
  std::size_t max_states = 1'000'000;
  std::optional<json> truth, model;
  std::optional<std::string> data, corpus;
  std::string reference = "exact";
  std::size_t n_samples = 10000;
  std::string functional = "entropy_rate";
  double epsilon = 0.01;
  std::size_t n_gen = 512, n_ce = 10000, t_max = 0, prefix_length = 0;
  bool empirical = false;
  std::vector<std::size_t> tau{1};
  std::string t_policy = "average";
  std::size_t t = 0;
  std::string comparator = "exact_marginal";
  double lambda = 0.1;
  std::size_t min_samples = 100;
  std::size_t instances = 50;
  std::size_t n = 100;
  std::string source = "model";

  static ExperimentConfig parse(const json& raw, std::filesystem::path base_dir = {}) {
    detail::KeyReader r(raw, "");
    ExperimentConfig c;
    c.base_dir = std::move(base_dir);
    const auto M = r.uint("M", std::nullopt, 2);
    const auto T = r.uint("T", std::nullopt, 1);
    c.spec = SequenceSpec(M, T);
    c.pipeline = r.choice("pipeline", "verify", pipeline_names());
    c.seed = r.uint("seed", 0);
    c.workers = r.uint("workers", 1, 1);
    c.out = r.path("out").value_or("out");
    r.store("out", c.out);
    c.format = r.choice("format", "csv", {"csv", "json"});
    c.max_states = r.uint("max_states", 1'000'000, 1);
    if (const json* t = r.object("truth")) {
      c.truth = detail::read_model_description(*t, "truth", false, M);
      r.store("truth", *c.truth);
    }
    if (const json* m = r.object("model")) {
      c.model = detail::read_model_description(*m, "model", true, M);
      r.store("model", *c.model);
    }
    c.data = r.path("data");
    c.corpus = r.path("corpus");
    c.reference = r.choice("reference", "exact", {"exact", "sample"});
    c.n_samples = r.uint("n_samples", 10000, 2);
    c.functional = r.choice("functional", "entropy_rate", {"entropy_rate", "neg_log_prob"});
    c.epsilon = r.number("epsilon", 0.01, 0.0, 1.0, true, true);
    c.n_gen = r.uint("n_gen", 512, 2);
    c.n_ce = r.uint("n_ce", 10000, 2);
    c.t_max = r.uint("t_max", 0);
    if (c.t_max > T) throw ConfigError("t_max", "expected 0 (meaning T) or a step <= T");
    c.prefix_length = r.uint("prefix_length", 0);
    if (c.prefix_length >= T) throw ConfigError("prefix_length", "expected a length below T");
    c.empirical = r.boolean("empirical", false);
    c.tau = r.uint_list("tau", {1}, 1);
    c.t_policy = r.choice("t_policy", "average", {"average", "single"});
    c.t = r.uint("t", 0);
    c.comparator = r.choice("comparator", "exact_marginal", {"exact_marginal", "empirical_ngram"});
    c.lambda = r.number("lambda", 0.1, 0.0, 1e6, true);
    c.min_samples = r.uint("min_samples", 100, 1);
    c.instances = r.uint("instances", 50, 1);
    c.n = r.uint("n", 100, 1);
    c.source = r.choice("source", "model", {"model", "truth"});
    r.finish();
    c.effective = r.out();
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("--config", "cannot open '" + path.string() + "'");
    json raw;
    try {
      raw = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ConfigError("<root>", std::string("expected a JSON object (") + e.what() + ")");
    }
    return parse(raw, path.parent_path());
  }

  /// Effective config without the keys that only steer where and how fast a
  /// run happens.
  json canonical() const {
    json c = effective;
    c.erase("workers");
    c.erase("out");
    return c;
  }
  std::string hash() const { return detail::hex64(detail::fnv1a64(canonical().dump())); }

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }
  ExactOptions exact_options() const { return {EnumerationBudget{max_states}, workers}; }
};

/// Applies CLI overrides to a raw config and re-validates. Returns the
/// overridden keys with their new values.
inline json apply_overrides(json& raw, const std::map<std::string, json>& overrides) {
  json applied = json::object();
  for (const auto& [k, v] : overrides) {
    raw[k] = v;
    applied[k] = v;
  }
  return applied;
}

// ---- model construction ----

struct Inputs {
  ModelPtr truth;
  ModelPtr model;  // falls back to the truth
};

inline ModelPtr build_described(const ExperimentConfig& c, const json& d, const std::string& key, ModelPtr truth,
                                RngStream rng) {
  const auto& spec = c.spec;
  const auto opts = c.exact_options();
  if (d.contains("file")) {
    const auto path = c.resolve(d.at("file").get<std::string>());
    ModelPtr m;
    try {
      m = load_model(path.string(), opts);
    } catch (const DataError& e) {
      throw ConfigError(key + ".file", e.what());
    }
    if (!(m->spec() == spec))
      throw ConfigError(key + ".file", "model file has M=" + std::to_string(m->spec().M()) +
                                           ", T=" + std::to_string(m->spec().T()) + " but the config does not");
    return m;
  }
  const auto kind = d.at("kind").get<std::string>();
  ModelPtr m;
  if (kind == "markov") {
    m = std::make_shared<const MarkovModel>(random_markov(spec, d.at("order").get<std::size_t>(), d.at("concentration").get<double>(), rng,
                                                          d.at("stationary").get<bool>()));
  } else if (kind == "uniform") {
    m = std::make_shared<const MarkovModel>(MarkovModel::uniform(spec));
  } else if (kind == "deterministic") {
    m = std::make_shared<const MarkovModel>(MarkovModel::deterministic(spec, d.at("token").get<Token>()));
  } else {
    if (!truth) throw ConfigError(key + ".kind", "a derived model needs a 'truth' description");
    m = truth;
  }
  if (const double noise = d.at("noise").get<double>(); noise > 0.0) {
    const auto* mk = dynamic_cast<const MarkovModel*>(m.get());
    if (!mk) throw ConfigError(key + ".noise", "row noise needs a Markov base");
    m = std::make_shared<const MarkovModel>(perturb_markov(*mk, noise, rng));
  }
  const json& drift = d.at("drift");
  if (drift.is_boolean() ? drift.get<bool>() : drift.get<double>() > 0.0) {
    m = drift.is_boolean() ? std::make_shared<const DriftModel>(m)
                           : std::make_shared<const DriftModel>(m, drift.get<double>());
  }
  if (const double g = d.at("mixture").get<double>(); g > 0.0) m = std::make_shared<const MixtureModel>(m, g);
  return m;
}

/// Truth and model for one run; `rng` distinguishes verification instances.
inline Inputs build_inputs(const ExperimentConfig& c, const RngStream& rng) {
  Inputs in;
  if (c.truth) in.truth = build_described(c, *c.truth, "truth", nullptr, rng.substream("truth"));
  in.model = c.model ? build_described(c, *c.model, "model", in.truth, rng.substream("model")) : in.truth;
  return in;
}

inline std::vector<Sequence> read_sequence_file(const ExperimentConfig& c, const std::string& key,
                                                const std::string& path) {
  std::ifstream is(c.resolve(path));
  if (!is) throw ConfigError(key, "cannot open '" + c.resolve(path).string() + "'");
  try {
    return read_sequences(is, &c.spec);
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

/// n sequences from `model`, sequence i drawn from substream i.
inline std::vector<Sequence> draw_sequences(const ConditionalModel& model, std::size_t n, const RngStream& rng) {
  std::vector<Sequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream r = rng.substream(i);
    out.push_back(sample_sequence(model, r));
  }
  return out;
}

/// The sample behind sample-mode references and empirical comparators: the
/// data file if given, otherwise draws from the truth.
inline std::vector<Sequence> reference_sample(const ExperimentConfig& c, const Inputs& in) {
  if (c.data) return read_sequence_file(c, "data", *c.data);
  if (!in.truth) throw ConfigError("data", "a sample needs a data file or a 'truth' description");
  return draw_sequences(*in.truth, c.n_samples, RngStream(c.seed, "reference"));
}

inline Reference make_reference(const ExperimentConfig& c, const Inputs& in) {
  if (c.reference == "exact") {
    if (!in.truth) throw ConfigError("truth", "exact reference needs a 'truth' description");
    return Reference::exact(in.truth);
  }
  auto ref = Reference::from_samples(reference_sample(c, in));
  try {
    ref.check(c.spec);
  } catch (const std::exception& e) {
    throw ConfigError(c.data ? "data" : "n_samples", e.what());
  }
  return ref;
}

inline ModelPtr require_model(const Inputs& in) {
  if (!in.model) throw ConfigError("model", "this pipeline needs a 'model' or 'truth' description");
  return in.model;
}

// ---- output ----

/// Owns one run directory. Every file gets the config hash and seed: JSON
/// documents under "provenance", tables and sequence files in a leading
/// '#' line.
class RunWriter {
 public:
  RunWriter(std::filesystem::path dir, std::string config_hash, std::uint64_t seed, std::string format)
      : dir_(std::move(dir)), hash_(std::move(config_hash)), seed_(seed), format_(std::move(format)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }
  json provenance() const { return {{"config_hash", hash_}, {"seed", seed_}, {"version", kToolVersion}}; }

  void document(const std::string& name, json doc) {
    if (!doc.is_object()) doc = json{{"data", std::move(doc)}};
    doc["provenance"] = provenance();
    write(name, doc.dump(2) + "\n");
  }

  /// A table as name.csv or name.json, following --format.
  void table(const std::string& name, const std::vector<std::string>& columns, const std::vector<json>& rows) {
    if (format_ == "json") {
      json out = {{"columns", columns}, {"rows", json::array()}};
      for (const auto& r : rows) {
        json obj = json::object();
        for (std::size_t i = 0; i < columns.size(); ++i) obj[columns[i]] = r.at(i);
        out["rows"].push_back(obj);
      }
      document(name + ".json", out);
      return;
    }
    std::ostringstream os;
    os << comment_line();
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << cell(r[i]);
      os << "\n";
    }
    write(name + ".csv", os.str());
  }

  void sequences(const std::string& name, std::span<const Sequence> seqs) {
    std::ostringstream os;
    os << comment_line();
    write_sequences(os, seqs);
    write(name, os.str());
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream os(dir_ / name, std::ios::binary);
    if (!os) throw DataError("cannot write " + (dir_ / name).string());
    os << content;
    files_.push_back({{"name", name}, {"fnv1a64", detail::hex64(detail::fnv1a64(content))}});
  }

  const json& files() const noexcept { return files_; }

 private:
  std::string comment_line() const {
    return "# config_hash=" + hash_ + " seed=" + std::to_string(seed_) + " version=" + kToolVersion + "\n";
  }
  static std::string cell(const json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
      std::ostringstream os;
      os.precision(17);
      os << x;
      return os.str();
    }
    return v.dump();
  }

  std::filesystem::path dir_;
  std::string hash_;
  std::uint64_t seed_;
  std::string format_;
  json files_ = json::array();
};

/// <out>/<UTC timestamp>-<hash prefix>, with a numeric suffix on collision.
inline std::filesystem::path make_run_dir(const std::filesystem::path& out, const std::string& hash) {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &utc);
  const std::string base = std::string(stamp) + "-" + hash.substr(0, 8);
  auto dir = out / base;
  for (int i = 1; std::filesystem::exists(dir); ++i) dir = out / (base + "-" + std::to_string(i));
  return dir;
}

inline json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

// ---- pipelines ----

inline SolverOptions solver_for(const Reference& ref) {
  SolverOptions s;
  s.sample_mode = !ref.is_exact();
  return s;
}

inline void write_trace(RunWriter& w, const CalibrationResult& r) {
  std::vector<json> rows;
  for (const auto& p : r.trace) rows.push_back(json::array({p.alpha, p.value, p.gradient, p.curvature}));
  w.table("trace", {"alpha", "objective", "gradient", "curvature"}, rows);
}

inline int run_calibrate_global(const ExperimentConfig& c, RunWriter& w) {
  const Inputs in = build_inputs(c, RngStream(c.seed));
  const auto base = require_model(in);
  const Reference ref = make_reference(c, in);
  const auto opts = c.exact_options();
  w.document("base_model.json", to_document(*base));
  if (c.functional == "entropy_rate") {
    const auto fit = calibrate_entropy_rate(ref, base, c.epsilon, solver_for(ref), opts);
    json doc = fit.to_json();
    doc["amplification"] = amplification_bound(c.epsilon, c.spec.T(), c.spec.M()).to_json();
    w.document("calibration.json", doc);
    w.document("calibrated_model.json", to_document(*fit.fit.model));
    write_trace(w, fit.fit.result);
  } else {
    const auto fit = fit_alpha_global(ref, base, FunctionalF::neg_log_prob(base), solver_for(ref), opts);
    const auto& r = fit.result;
    json doc = r.to_json();
    doc["variance_bound"] = variance_drop_bound(r.mu_truth, r.mu_base, r.sigma2_plus, c.spec.T());
    w.document("calibration.json", doc);
    w.document("calibrated_model.json", to_document(*fit.model));
    write_trace(w, r);
  }
  return 0;
}

inline DriftOptions drift_options(const ExperimentConfig& c) {
  DriftOptions d;
  d.t_max = c.t_max;
  d.empirical = c.empirical;
  d.mc.workers = c.workers;
  return d;
}

inline int run_calibrate_local(const ExperimentConfig& c, RunWriter& w) {
  const Inputs in = build_inputs(c, RngStream(c.seed));
  const auto base = require_model(in);
  const Reference ref = make_reference(c, in);
  const auto opts = c.exact_options();
  const StepFit fit = fit_alpha_local(ref, base, solver_for(ref), opts);
  w.document("base_model.json", to_document(*base));
  w.document("calibrated_model.json", to_document(*fit.model));
  write_trace(w, fit.result);

  // Same stream for both curves, so the comparison uses common random numbers.
  const RngStream stream(c.seed, "drift");
  const auto dopts = drift_options(c);
  const auto before = drift_curve(*base, c.n_gen, PrefixSource::none(), stream, dopts);
  const auto after = drift_curve(*fit.model, c.n_gen, PrefixSource::none(), stream, dopts);
  std::vector<json> rows;
  for (std::size_t i = 0; i < before.points.size(); ++i) {
    const auto& b = before.points[i];
    const auto& a = after.points[i];
    rows.push_back(json::array({b.t, b.mean, b.std_error, a.mean, a.std_error, b.n}));
  }
  w.table("drift", {"t", "before_mean", "before_stderr", "after_mean", "after_stderr", "n"}, rows);

  json doc = fit.result.to_json();
  doc["drift_before"] = before.to_json();
  doc["drift_after"] = after.to_json();
  if (ref.is_exact()) {
    // Endpoint gap: last-step generation entropy minus per-token CE.
    const auto eb = drift_curve_exact(*base, opts), ea = drift_curve_exact(*fit.model, opts);
    doc["endpoint_gap_before"] = finite_or_null(eb.back() - fit.result.baseline);
    doc["endpoint_gap_after"] = finite_or_null(ea.back() - fit.result.objective);
  }
  w.document("calibration.json", doc);
  return 0;
}

inline int run_drift(const ExperimentConfig& c, RunWriter& w) {
  const Inputs in = build_inputs(c, RngStream(c.seed));
  const auto model = require_model(in);
  PrefixSource prefixes = PrefixSource::none();
  if (c.prefix_length > 0) {
    if (c.corpus)
      prefixes = PrefixSource::from_corpus(read_sequence_file(c, "corpus", *c.corpus), c.prefix_length);
    else if (in.truth)
      prefixes = PrefixSource::from_model(in.truth, c.prefix_length);
    else
      throw ConfigError("prefix_length", "seed prefixes need a 'corpus' file or a 'truth' description");
  }
  const auto dopts = drift_options(c);
  const auto curve = drift_curve(*model, c.n_gen, prefixes, RngStream(c.seed, "drift"), dopts);
  std::vector<std::string> cols{"t", "mean", "stderr", "n"};
  if (c.empirical) cols.push_back("empirical");
  std::vector<json> rows;
  for (const auto& p : curve.points) {
    json r = json::array({p.t, p.mean, p.std_error, p.n});
    if (p.empirical) r.push_back(*p.empirical);
    rows.push_back(r);
  }
  w.table("drift", cols, rows);
  w.document("drift_curve.json", curve.to_json());
  const auto gap = ent_rate_gap(*model, in.truth.get(), c.n_gen, c.n_ce, RngStream(c.seed, "gap"), dopts);
  json g = gap.to_json();
  g.erase("curve");
  w.document("gap.json", g);
  return 0;
}

inline int run_memory(const ExperimentConfig& c, RunWriter& w) {
  const Inputs in = build_inputs(c, RngStream(c.seed));
  const auto full = require_model(in);
  const Reference ref = make_reference(c, in);
  const auto opts = c.exact_options();
  ComparatorOptions copts;
  copts.lambda = c.lambda;
  copts.min_samples = c.min_samples;
  Reference comparator_ref = ref;
  if (c.comparator == "empirical_ngram") {
    copts.mode = ComparatorFit::EmpiricalNgram;
    if (ref.is_exact()) comparator_ref = Reference::from_samples(reference_sample(c, in));
  } else if (!ref.is_exact()) {
    throw ConfigError("comparator", "'exact_marginal' needs reference 'exact'; use 'empirical_ngram'");
  }
  std::vector<json> rows, details;
  for (std::size_t tau : c.tau) {
    if (tau >= c.spec.T()) throw ConfigError("tau", "expected every gap below T");
    auto comparator = std::make_shared<const LimitedMemoryModel>(
        fit_limited_memory(comparator_ref, c.spec, tau, copts, opts));
    MemoryOptions mo;
    mo.tau = tau;
    mo.policy = c.t_policy == "single" ? StepPolicy::Single : StepPolicy::Average;
    mo.t = c.t;
    mo.solver = solver_for(ref);
    mo.exact = opts;
    mo.attach_exact_mi = ref.is_exact();
    MemoryEstimate est;
    try {
      est = memory_bound(ref, full, comparator, mo);
    } catch (const DomainError& e) {
      throw ConfigError(c.t_policy == "single" ? "t" : "tau", e.what());
    }
    est.lambda = copts.mode == ComparatorFit::EmpiricalNgram ? c.lambda : 0.0;
    est.comparator_fit = c.comparator;
    w.document("comparator_tau" + std::to_string(tau) + ".json", to_document(*comparator));
    rows.push_back(json::array({tau, finite_or_null(est.ce), est.entropy, finite_or_null(est.bound),
                                est.bound_stderr, est.alpha, est.exact_i ? json(*est.exact_i) : json(nullptr),
                                est.valid}));
    details.push_back(est.to_json());
  }
  w.table("memory", {"tau", "ce", "entropy", "bound", "bound_stderr", "alpha", "exact_i", "valid"}, rows);
  w.document("memory_details.json", json{{"estimates", details}});
  return 0;
}

inline int run_bounds(const ExperimentConfig& c, RunWriter& w) {
  const auto T = c.spec.T(), M = c.spec.M();
  const auto stated = amplification_bound(c.epsilon, T, M);
  std::vector<json> rows{json::array({"config", c.epsilon, stated.mixture_kl_rate, stated.generation_gap,
                                      nullptr, nullptr})};
  json doc = {{"config", stated.to_json()}};
  const Inputs in = build_inputs(c, RngStream(c.seed));
  if (in.truth && in.model) {
    const auto opts = c.exact_options();
    const double eps = kl_exact(*in.truth, *in.model, opts) / static_cast<double>(T);
    json measured = {{"epsilon", finite_or_null(eps)}};
    if (eps > 0.0 && eps < 1.0) {
      const auto b = amplification_bound(eps, T, M);
      MixtureModel mix(in.model, eps);
      const double kl_rate = kl_exact(*in.truth, mix, opts) / static_cast<double>(T);
      const double gap = cross_entropy_exact(*in.truth, mix, opts) - entropy_rate_exact(mix, opts);
      measured = b.to_json();
      measured["measured_mixture_kl_rate"] = kl_rate;
      measured["measured_generation_gap"] = gap;
      rows.push_back(json::array({"measured", eps, b.mixture_kl_rate, b.generation_gap, kl_rate, gap}));
    }
    doc["measured"] = measured;
  }
  w.table("bounds", {"source", "epsilon", "mixture_kl_rate_bound", "generation_gap_bound",
                     "mixture_kl_rate", "generation_gap"},
          rows);
  w.document("bounds.json", doc);
  return 0;
}

inline int run_gen(const ExperimentConfig& c, RunWriter& w) {
  const Inputs in = build_inputs(c, RngStream(c.seed));
  const ModelPtr src = c.source == "truth" ? in.truth : in.model;
  if (!src) throw ConfigError("source", "no '" + c.source + "' description to sample from");
  w.sequences("sequences.txt", draw_sequences(*src, c.n, RngStream(c.seed, "gen")));
  return 0;
}

/// Summary of the truth and model, printed instead of written.
inline json inspect_models(const ExperimentConfig& c) {
  const Inputs in = build_inputs(c, RngStream(c.seed));
  const auto opts = c.exact_options();
  auto describe = [&](const ModelPtr& m) {
    json j = {{"kind", m->kind()}, {"M", m->spec().M()}, {"T", m->spec().T()}, {"hash", model_hash(*m)}};
    try {
      j["entropy_rate"] = entropy_rate_exact(*m, opts);
      j["drift_curve"] = drift_curve_exact(*m, opts);
    } catch (const ResourceError&) {
      j["entropy_rate"] = nullptr;
    }
    return j;
  };
  json out = {{"config_hash", c.hash()}};
  if (in.truth) out["truth"] = describe(in.truth);
  if (in.model && in.model != in.truth) out["model"] = describe(in.model);
  if (in.truth && in.model && in.model != in.truth) {
    try {
      out["cross_entropy"] = finite_or_null(cross_entropy_exact(*in.truth, *in.model, opts));
      out["kl"] = finite_or_null(kl_exact(*in.truth, *in.model, opts));
    } catch (const ResourceError&) {
    }
  }
  return out;
}

// ---- verification ----

struct CheckResult {
  std::string check;
  std::string instance;
  std::string relation;  // "<=", ">=" or "=="
  double lhs = 0.0, rhs = 0.0, tolerance = 0.0;
  bool pass = false;
  double margin = 0.0;   // >= 0 on pass
  std::string note;

  json to_json() const {
    json j = {{"check", check}, {"instance", instance}, {"relation", relation}, {"lhs", finite_or_null(lhs)},
              {"rhs", finite_or_null(rhs)}, {"tolerance", tolerance}, {"pass", pass},
              {"margin", finite_or_null(margin)}};
    if (!note.empty()) j["note"] = note;
    return j;
  }
};

class VerifyReport {
 public:
  void set_instance(std::string id) { instance_ = std::move(id); }

  /// lhs <= rhs (+tol), lhs >= rhs (-tol), or |lhs - rhs| <= tol.
  bool check(const std::string& name, double lhs, const std::string& rel, double rhs, double tol = 0.0,
             std::string note = {}) {
    CheckResult r{name, instance_, rel, lhs, rhs, tol, false, 0.0, std::move(note)};
    if (rel == "<=") {
      r.margin = rhs - lhs;
      r.pass = lhs <= rhs + tol;
    } else if (rel == ">=") {
      r.margin = lhs - rhs;
      r.pass = lhs >= rhs - tol;
    } else {
      r.margin = tol - std::abs(lhs - rhs);
      r.pass = std::abs(lhs - rhs) <= tol;
    }
    if (std::isnan(lhs) || std::isnan(rhs)) r.pass = false;
    results_.push_back(r);
    if (!r.pass) ++failures_;
    return r.pass;
  }
  void skip(const std::string& name, std::string why) { skipped_.push_back({{"check", name}, {"instance", instance_}, {"reason", std::move(why)}}); }
  void attach_replay(json replay) { replays_[instance_] = std::move(replay); }

  std::size_t failures() const noexcept { return failures_; }
  const std::vector<CheckResult>& results() const noexcept { return results_; }

  /// Per-check counts and the smallest margin.
  std::vector<json> summary_rows() const {
    std::map<std::string, std::tuple<std::size_t, std::size_t, double>> agg;
    std::vector<std::string> order;
    for (const auto& r : results_) {
      auto [it, fresh] = agg.try_emplace(r.check, 0, 0, kInfiniteNats);
      if (fresh) order.push_back(r.check);
      auto& [pass, fail, min_margin] = it->second;
      (r.pass ? pass : fail) += 1;
      min_margin = std::min(min_margin, r.margin);
    }
    std::vector<json> rows;
    for (const auto& name : order) {
      const auto& [pass, fail, min_margin] = agg.at(name);
      rows.push_back(json::array({name, pass, fail, finite_or_null(min_margin)}));
    }
    return rows;
  }

  json to_json() const {
    json checks = json::array(), failures = json::array();
    for (const auto& r : results_) {
      checks.push_back(r.to_json());
      if (!r.pass) {
        json f = r.to_json();
        if (auto it = replays_.find(r.instance); it != replays_.end()) f["replay"] = it->second;
        failures.push_back(f);
      }
    }
    return {{"passed", failures_ == 0}, {"n_checks", results_.size()}, {"n_failures", failures_},
            {"checks", checks},         {"failures", failures},        {"skipped", skipped_}};
  }

 private:
  std::string instance_;
  std::vector<CheckResult> results_;
  std::vector<json> skipped_;
  std::map<std::string, json> replays_;
  std::size_t failures_ = 0;
};

/// Drift model with switch probability 1/T on a pinned M=3, T=8 chain with
/// low-entropy rows: late-step generation entropy should reach 0.9 log M
/// while KL(Pr || drift)/T stays below -log(1 - 1/T).
inline void sharpness_probe(VerifyReport& report) {
  const SequenceSpec spec(3, 8);
  RngStream rng(7, "probe");
  auto truth = std::make_shared<const MarkovModel>(random_markov(spec, 1, 0.2, rng));
  const DriftModel drift(truth);
  const double T = 8.0, logM = std::log(3.0);
  report.set_instance("sharpness");
  const auto curve = drift_curve_exact(drift);
  report.check("sharpness_generation_entropy", curve.back(), ">=", 0.9 * logM, 0.0,
               "last-step entropy of generations against 0.9 log M");
  report.check("sharpness_kl_rate", kl_exact(*truth, drift) / T, "<=", -std::log1p(-1.0 / T), 0.0,
               "KL(Pr || drift)/T against -log(1 - 1/T)");
}

/// Runs every inequality on `instances` random (truth, model) pairs built
/// from the config's descriptions. Failures carry both model documents.
inline VerifyReport verify_suite(const ExperimentConfig& c) {
  VerifyReport report;
  const auto& spec = c.spec;
  const std::size_t T = spec.T(), M = spec.M();
  const double Td = static_cast<double>(T);
  const auto opts = c.exact_options();
  opts.budget.require(M, T, "verify_suite");
  ExperimentConfig ic = c;
  if (!ic.truth) ic.truth = detail::read_model_description(json::object(), "truth", false, M);

  for (std::size_t i = 0; i < c.instances; ++i) {
    const RngStream irng = RngStream(c.seed, "verify").substream(i);
    const Inputs in = build_inputs(ic, irng);
    const ModelPtr truth = in.truth, model = in.model;
    report.set_instance(std::to_string(i));

    const double h = entropy_rate_exact(*truth, opts);
    const double kl = kl_exact(*truth, *model, opts);
    const double ce = cross_entropy_exact(*truth, *model, opts);
    if (std::isfinite(kl)) {
      report.check("regret_identity", ce, "==", h + kl / Td, 1e-9);
    } else {
      report.skip("regret_identity", "model misses part of the truth's support");
    }
    report.check("kl_nonnegative", kl, ">=", 0.0);
    report.check("self_cross_entropy", cross_entropy_exact(*truth, *truth, opts), "==", h, 1e-9);

    RngStream frng = irng.substream("functional");
    const double B = 0.5 + 2.0 * frng.uniform();
    std::vector<double> values(power_within(M, T, opts.budget.max_states).value());
    for (auto& v : values) v = B * (2.0 * frng.uniform() - 1.0);
    const auto f = FunctionalF::table(spec, values);
    const double gap_f = std::abs(mean_var_exact(*truth, f, opts).mean - mean_var_exact(*model, f, opts).mean);
    report.check("pinsker", gap_f, "<=", B * std::sqrt(2.0 * kl));
    report.check("l1_pinsker", l1_distance_exact(*truth, *model, opts), "<=", std::sqrt(2.0 * kl));

    auto mixture = std::make_shared<const MixtureModel>(model, c.epsilon);
    const auto lp = log_prob_table(*mixture, opts);
    report.check("mixture_log_cap", -*std::min_element(lp.begin(), lp.end()), "<=",
                 mixture_log_range(c.epsilon, T, M) * Td, 1e-12);

    const double eps = kl / Td;
    if (eps > 0.0 && eps < 1.0) {
      const auto bound = amplification_bound(eps, T, M);
      const MixtureModel mix(model, eps);
      const double mix_rate = kl_exact(*truth, mix, opts) / Td;
      report.check("amplification_mixture_kl", mix_rate, "<=", bound.mixture_kl_rate);
      // What mixing alone guarantees: P^(eps) >= (1 - eps) P.
      report.check("amplification_mixture_kl_mixing_cap", mix_rate, "<=", eps - std::log1p(-eps) / Td, 1e-12);
      report.check("amplification_generation_gap",
                   std::abs(cross_entropy_exact(*truth, mix, opts) - entropy_rate_exact(mix, opts)), "<=",
                   bound.generation_gap);
    } else {
      report.skip("amplification", eps == 0.0 ? "model equals truth" : "KL/T outside (0,1)");
    }

    const Reference ref = Reference::exact(truth);
    if (std::isfinite(kl)) {
      const auto g = fit_alpha_global(ref, model, FunctionalF::neg_log_prob(model), {}, opts);
      const auto& r = g.result;
      report.check("global_moment_match", r.mu_tilted, "==", r.mu_truth, 1e-8);
      report.check("global_variance_improvement", r.baseline - r.objective, ">=",
                   variance_drop_bound(r.mu_truth, r.mu_base, r.sigma2_plus, T), 1e-12);
    } else {
      report.skip("global_variance", "model misses part of the truth's support");
    }

    const auto er = calibrate_entropy_rate(ref, model, c.epsilon, {}, opts);
    report.check("entrate_identity", er.ce_tilted, "==", er.entrate_tilted, 1e-8);
    report.check("entrate_closeness", std::abs(h - er.entrate_tilted), "<=",
                 (1.0 + 1.0 / Td) * er.mixture_kl_rate.value());
    report.check("entrate_improvement", er.ce_mixture - er.ce_tilted, ">=", er.gap_bound, 1e-12);

    const auto loc = fit_alpha_local(ref, mixture, {}, opts);
    report.check("lookahead_moment_match", loc.result.mu_tilted, "==", loc.result.mu_truth, 1e-8);
    report.check("lookahead_no_worse", loc.result.objective, "<=", loc.result.baseline, 1e-12);
    report.check("lookahead_improvement", loc.result.baseline - loc.result.objective, ">=",
                 lookahead_drop_bound(loc.result.mu_truth, loc.result.mu_base, c.epsilon, T, M), 1e-12);

    if (T >= 2 && std::isfinite(kl)) {
      auto comparator = std::make_shared<const LimitedMemoryModel>(marginalize_to_window(*truth, 1, opts));
      MemoryOptions mo;
      mo.exact = opts;
      const auto est = memory_bound(ref, model, comparator, mo);
      report.check("memory_bound", est.bound, ">=", est.exact_i.value(), 1e-9);
    }

    bool failed = false;
    for (auto it = report.results().rbegin(); it != report.results().rend() && it->instance == std::to_string(i);
         ++it)
      failed = failed || !it->pass;
    if (failed) report.attach_replay({{"truth", to_document(*truth)}, {"model", to_document(*model)}});
  }
  sharpness_probe(report);
  return report;
}

inline int run_verify(const ExperimentConfig& c, RunWriter& w) {
  const auto report = verify_suite(c);
  w.document("verify.json", report.to_json());
  w.table("verify_summary", {"check", "passed", "failed", "min_margin"}, report.summary_rows());
  return report.failures() == 0 ? 0 : 4;
}

/// Runs `c.pipeline` into a fresh run directory and writes the manifest and
/// timing files. Returns the exit status.
inline int run_pipeline(const ExperimentConfig& c, const json& overrides, std::filesystem::path* run_dir = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  const std::string hash = c.hash();
  const auto dir = make_run_dir(c.resolve(c.out), hash);
  if (run_dir) *run_dir = dir;
  RunWriter w(dir, hash, c.seed, c.format);
  int status = 0;
  if (c.pipeline == "calibrate-global") status = run_calibrate_global(c, w);
  else if (c.pipeline == "calibrate-local") status = run_calibrate_local(c, w);
  else if (c.pipeline == "drift") status = run_drift(c, w);
  else if (c.pipeline == "memory") status = run_memory(c, w);
  else if (c.pipeline == "bounds") status = run_bounds(c, w);
  else if (c.pipeline == "verify") status = run_verify(c, w);
  else if (c.pipeline == "gen") status = run_gen(c, w);
  else throw ConfigError("pipeline", "'" + c.pipeline + "' does not write a run directory");

  json manifest = {{"tool", "entcal"},
                   {"version", kToolVersion},
                   {"model_format_version", kFormatVersion},
                   {"pipeline", c.pipeline},
                   {"config", c.canonical()},
                   {"config_hash", hash},
                   {"seed", c.seed},
                   {"streams", {"truth", "model", "reference", "drift", "gap", "gen", "verify"}},
                   {"overrides", overrides},
                   {"files", w.files()},
                   {"exit_status", status}};
  w.write("manifest.json", manifest.dump(2) + "\n");

  std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &utc);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const json timing = {{"finished_utc", stamp}, {"wall_seconds", wall}, {"workers", c.workers},
                       {"run_dir", dir.string()}, {"config_hash", hash}};
  std::ofstream(dir / "timing.json") << timing.dump(2) << "\n";
  return status;
}

}  // namespace entcal
