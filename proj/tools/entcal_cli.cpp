// entcal: runs one experiment pipeline from a JSON config.
//
//   entcal <subcommand> --config PATH [--seed U64] [--workers N] [--out DIR] [--format csv|json]
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 resource/budget
// error, 4 verification failure.

#include <CLI11.hpp>

#include "entcal/experiment.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
  std::optional<std::string> format;
};

entcal::json read_raw_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw entcal::ConfigError("--config", "cannot open '" + path + "'");
  try {
    return entcal::json::parse(is);
  } catch (const entcal::json::parse_error& e) {
    throw entcal::ConfigError("<root>", std::string("expected a JSON object (") + e.what() + ")");
  }
}

int run(const std::string& pipeline, const Flags& flags) {
  namespace fs = std::filesystem;
  entcal::json raw = read_raw_config(flags.config);
  if (!raw.is_object()) throw entcal::ConfigError("<root>", "expected a JSON object");

  entcal::json overrides = entcal::json::object();
  auto set = [&](const std::string& key, const entcal::json& value, const entcal::json& recorded) {
    if (!raw.contains(key) || raw[key] != value) overrides[key] = recorded;
    raw[key] = value;
  };
  if (raw.contains("pipeline") && raw["pipeline"] != pipeline) overrides["pipeline"] = pipeline;
  raw["pipeline"] = pipeline;
  if (flags.seed) set("seed", *flags.seed, *flags.seed);
  if (flags.workers) set("workers", *flags.workers, *flags.workers);
  if (flags.format) set("format", *flags.format, *flags.format);
  // --out is relative to the working directory, config paths to the config file.
  if (flags.out) set("out", fs::absolute(*flags.out).string(), *flags.out);

  const auto cfg = entcal::ExperimentConfig::parse(raw, fs::path(flags.config).parent_path());
  if (pipeline == "inspect") {
    std::cout << entcal::inspect_models(cfg).dump(2) << "\n";
    return 0;
  }
  fs::path dir;
  const int status = entcal::run_pipeline(cfg, overrides, &dir);
  std::cout << dir.string() << "\n";
  if (status == 4) std::cerr << "entcal: verification failed; see " << (dir / "verify.json").string() << "\n";
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-rate calibration experiments"};
  app.require_subcommand(1);
  Flags flags;
  std::string chosen;
  for (const auto& name : entcal::pipeline_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", flags.config, "JSON config file")->required();
    sub->add_option("--seed", flags.seed, "Master seed (overrides the config)");
    sub->add_option("--workers", flags.workers, "Worker threads (overrides the config)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", flags.out, "Base output directory (overrides the config)");
    sub->add_option("--format", flags.format, "Table format (overrides the config)")
        ->check(CLI::IsMember({"csv", "json"}));
    sub->callback([&chosen, name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return run(chosen, flags);
  } catch (const entcal::ConfigError& e) {
    std::cerr << "entcal: config error: " << e.what() << "\n";
    return 2;
  } catch (const entcal::ResourceError& e) {
    std::cerr << "entcal: resource error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "entcal: error: " << e.what() << "\n";
    return 1;
  }
}
