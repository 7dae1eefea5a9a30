// madood: command-line driver for the two-stage OOD pipeline.
//
// Exit codes: 0 success, 1 internal failure, 2 user/input error.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "madood/pipeline.hpp"

namespace {

struct GlobalFlags {
  std::string config_path;
  std::optional<long long> seed;
  std::optional<std::string> work_dir;
  std::optional<std::string> data_dir;
  std::optional<std::string> policy;
  std::optional<double> band;
  bool one_sided = false;
};

// Precedence: built-in defaults < config file < command-line flags.
madood::RunConfig resolve(const GlobalFlags& flags) {
  madood::RunConfig config = flags.config_path.empty() ? madood::RunConfig{} : madood::load_config(flags.config_path);
  if (flags.seed) config.set("seed", std::to_string(*flags.seed));
  if (flags.work_dir) config.set("paths.work_dir", *flags.work_dir);
  if (flags.data_dir) config.set("paths.data_dir", *flags.data_dir);
  if (flags.policy) config.set("decision.policy", *flags.policy);
  if (flags.band) config.set("boundary.band", madood::format_double(*flags.band));
  if (flags.one_sided) config.set("boundary.one_sided", "true");
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage out-of-distribution malware family classifier"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags flags;
  app.add_option("--config", flags.config_path, "flat 'section.key = value' config file");
  app.add_option("--seed", flags.seed, "master seed (overrides config)");
  app.add_option("--work-dir", flags.work_dir, "artifact directory (overrides config)");
  app.add_option("--data-dir", flags.data_dir, "sample tree for featurize (overrides config)");
  app.add_option("--policy", flags.policy, "gate_priority | fusion_priority");
  app.add_option("--band", flags.band, "z-score acceptance band");
  app.add_flag("--one-sided", flags.one_sided, "accept z <= band instead of |z| <= band");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset into the work dir");
  auto* featurize = app.add_subcommand("featurize", "ingest and featurize a directory of binaries");
  auto* train = app.add_subcommand("train", "train the stage-1 classifier");
  auto* fit = app.add_subcommand("fit-boundaries", "fit per-family spherical boundaries");
  auto* fusion = app.add_subcommand("train-fusion", "train the stage-2 fusion network");
  auto* evaluate = app.add_subcommand("evaluate", "score the test split and write the metrics report");
  auto* pipeline = app.add_subcommand("pipeline", "train, fit-boundaries, train-fusion, evaluate");
  auto* score = app.add_subcommand("score", "score feature lines with trained artifacts");
  auto* dump = app.add_subcommand("dump-config", "print the resolved configuration");
  std::optional<std::string> input, line;
  score->add_option("--input", input, "feature file (header + id<TAB>values lines)");
  score->add_option("--line", line, "single 'id<TAB>v1,v2,...' line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const auto config = resolve(flags);
    auto& log = std::cerr;
    if (*synth) madood::run_synth(config, log);
    else if (*featurize) madood::run_featurize(config, log);
    else if (*train) madood::run_train(config, log);
    else if (*fit) madood::run_fit_boundaries(config, log);
    else if (*fusion) madood::run_train_fusion(config, log);
    else if (*evaluate) madood::run_evaluate(config, log);
    else if (*pipeline) madood::run_pipeline(config, log);
    else if (*score) madood::run_score(config, input, line, std::cout);
    else if (*dump) std::cout << madood::dump_config(config);
  } catch (const madood::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
