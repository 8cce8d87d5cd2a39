#include <CLI11.hpp>
#include <iostream>

#include "wkam/experiment.hpp"

namespace {

enum Exit { kPass = 0, kAssertion = 1, kConfig = 2, kPipeline = 3 };

int cmd_run(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed,
            std::optional<int> threads) {
  wkam::ExperimentConfig cfg;
  try {
    cfg = wkam::load_config(config_path);
    if (!out.empty()) cfg.output_dir = out;
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    cfg.validate();
  } catch (const wkam::ConfigError& e) {
    std::cerr << "config error [" << e.field << "]: " << e.what() << "\n";
    return kConfig;
  }
  try {
    const auto m = wkam::run_experiment(cfg);
    for (const auto& a : m.assertions)
      std::cout << (a.passed ? "PASS " : "FAIL ") << a.name << ": " << a.detail << "\n";
    std::cout << "manifest: " << (m.dir / "manifest.json").string() << "\n";
    return m.passed() ? kPass : kAssertion;
  } catch (const wkam::PipelineError& e) {
    std::cerr << "pipeline error [" << e.stage << "]: " << e.what() << "\n";
    return kPipeline;
  } catch (const wkam::ConfigError& e) {
    std::cerr << "config error [" << e.field << "]: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "pipeline error: " << e.what() << "\n";
    return kPipeline;
  }
}

int cmd_compare(const std::string& run, const std::string& golden, const std::string& tol_path) {
  wkam::ToleranceSchema tol;
  if (!tol_path.empty()) {
    try {
      tol = wkam::ToleranceSchema::from_json(wkam::io::json::parse(wkam::io::read_file(tol_path)));
    } catch (const std::exception& e) {
      std::cerr << "config error [tolerances]: " << e.what() << "\n";
      return kConfig;
    }
  }
  const auto rep = wkam::compare_golden(run, golden, tol);
  for (const auto& f : rep.failures) std::cout << "MISMATCH " << f << "\n";
  std::cout << (rep.passed ? "PASS" : "FAIL") << " compare " << run << " vs " << golden << "\n";
  return rep.passed ? kPass : kAssertion;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weak KAM experiments on the flat torus"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::uint64_t seed = 0;
  int threads = 0;
  auto* run = app.add_subcommand("run", "Run an experiment described by a TOML or JSON config");
  run->add_option("config", config_path, "experiment config")->required();
  run->add_option("--out", out, "output directory (default: $WKAM_OUTPUT_ROOT/<kind>-<seed>)");
  auto* seed_opt = run->add_option("--seed", seed, "override the config seed");
  auto* threads_opt = run->add_option("--threads", threads, "worker threads");

  std::string run_dir, golden_dir, tol_path;
  auto* compare = app.add_subcommand("compare", "Compare a run directory against a golden directory");
  compare->add_option("run", run_dir)->required();
  compare->add_option("golden", golden_dir)->required();
  compare->add_option("--tolerances", tol_path, "tolerance schema (JSON)");

  auto* list = app.add_subcommand("list-hamiltonians", "List the built-in Hamiltonian families");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }

  if (*run)
    return cmd_run(config_path, out, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt,
                   *threads_opt ? std::optional<int>(threads) : std::nullopt);
  if (*compare) return cmd_compare(run_dir, golden_dir, tol_path);
  if (*list) {
    for (const auto& h : wkam::hamiltonian_registry())
      std::cout << h.family << "\tdim " << h.dimensions << "\tparams: " << h.params << "\tc[H] = " << h.critical_value << "\n";
  }
  return kPass;
}
