#pragma once

// Reading model documents back. Writing lives with each model kind
// (parameters()) and to_document().

#include <fstream>
#include <sstream>

#include "entcal/drift.hpp"
#include "entcal/limited_memory.hpp"
#include "entcal/markov.hpp"
#include "entcal/mixture.hpp"
#include "entcal/tabular.hpp"
#include "entcal/tilt.hpp"

namespace entcal {

inline ModelPtr from_document(const json& doc, const ExactOptions& opts = {});

inline FunctionalF functional_from_descriptor(const json& d, const SequenceSpec& spec, const ExactOptions& opts = {}) {
  const std::string kind = d.at("kind").get<std::string>();
  FunctionalF f = [&] {
    if (kind == "neg_log_prob") return FunctionalF::neg_log_prob(from_document(d.at("model"), opts));
    if (kind == "log_prob") return FunctionalF::log_prob(from_document(d.at("model"), opts));
    if (kind == "table") return FunctionalF::table(spec, d.at("values").get<std::vector<double>>());
    throw DataError("functional kind '" + kind + "' cannot be read back");
  }();
  if (const double c = d.value("offset", 0.0); c != 0.0) f = f.shifted(c);
  if (d.contains("bound")) f = f.with_bound(d.at("bound").get<double>());
  return f;
}

inline FeaturePtr feature_from_descriptor(const json& d, const SequenceSpec& spec, const ExactOptions& opts = {}) {
  const std::string kind = d.at("kind").get<std::string>();
  const json& p = d.at("parameters");
  if (kind == "lookahead_entropy") return std::make_shared<const LookaheadEntropyFeature>(spec.T());
  if (kind == "comparator_log")
    return std::make_shared<const ComparatorLogFeature>(from_document(p.at("comparator"), opts),
                                                        p.at("steps").get<std::vector<std::size_t>>(),
                                                        p.at("p_min").get<double>());
  throw DataError("unknown step feature kind '" + kind + "'");
}

/// Builds a model from {format_version, kind, M, T, parameters}.
inline ModelPtr from_document(const json& doc, const ExactOptions& opts) {
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kFormatVersion)
      throw DataError("unsupported model format_version " + std::to_string(version));
    const SequenceSpec spec(doc.at("M").get<std::size_t>(), doc.at("T").get<std::size_t>());
    const std::string kind = doc.at("kind").get<std::string>();
    const json& p = doc.at("parameters");
    auto check = [&](const ModelPtr& m) {
      if (!(m->spec() == spec)) throw DataError("nested model document has a different M or T");
      return m;
    };
    if (kind == "markov") return std::make_shared<const MarkovModel>(MarkovModel::from_parameters(spec, p));
    if (kind == "tabular") return std::make_shared<const TabularModel>(TabularModel::from_parameters(spec, p));
    if (kind == "limited_memory")
      return std::make_shared<const LimitedMemoryModel>(LimitedMemoryModel::from_parameters(spec, p));
    if (kind == "mixture")
      return std::make_shared<const MixtureModel>(check(from_document(p.at("base"), opts)), p.at("gamma").get<double>());
    if (kind == "per_token_mixture")
      return std::make_shared<const PerTokenMixture>(check(from_document(p.at("base"), opts)),
                                                     p.at("gamma").get<double>());
    if (kind == "drift")
      return std::make_shared<const DriftModel>(check(from_document(p.at("base"), opts)),
                                                p.at("switch_prob").get<double>());
    if (kind == "step_tilt")
      return std::make_shared<const StepTiltModel>(check(from_document(p.at("base"), opts)),
                                                   feature_from_descriptor(p.at("feature"), spec, opts),
                                                   p.at("alpha").get<double>());
    if (kind == "global_tilt")
      return std::make_shared<const GlobalTiltModel>(check(from_document(p.at("base"), opts)),
                                                     functional_from_descriptor(p.at("functional"), spec, opts),
                                                     p.at("alpha").get<double>(), opts);
    throw DataError("unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model document: ") + e.what());
  }
}

inline void save_model(const ConditionalModel& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write model file " + path);
  os << to_document(m).dump(1) << "\n";
}

inline ModelPtr load_model(const std::string& path, const ExactOptions& opts = {}) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open model file " + path);
  json doc;
  try {
    is >> doc;
  } catch (const json::exception& e) {
    throw DataError("model file " + path + " is not valid JSON: " + e.what());
  }
  return from_document(doc, opts);
}

/// One sequence per line, tokens separated by spaces. Lines starting with
/// '#' are comments.
inline std::vector<Sequence> read_sequences(std::istream& is, const SequenceSpec* spec = nullptr) {
  std::vector<Sequence> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') continue;
    std::istringstream ls(line);
    Sequence w;
    long long tok;
    while (ls >> tok) {
      if (tok < 0) throw DataError("negative token id in sequence file");
      w.push_back(static_cast<Token>(tok));
    }
    if (!ls.eof()) throw DataError("non-numeric token in sequence file");
    if (w.empty()) continue;
    if (spec) spec->check_tokens(w);
    out.push_back(std::move(w));
  }
  return out;
}

inline void write_sequences(std::ostream& os, std::span<const Sequence> seqs) {
  for (const auto& w : seqs) {
    for (std::size_t i = 0; i < w.size(); ++i) os << (i ? " " : "") << w[i];
    os << "\n";
  }
}

}  // namespace entcal
