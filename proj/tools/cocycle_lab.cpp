#include <CLI11.hpp>

#include <cocycle_lab/runner.hpp>
#include <iostream>

using namespace clab;

namespace {

int report_error(const std::exception& e, int code, const char* what) {
  std::cerr << "cocycle-lab: " << what << ": " << e.what() << "\n";
  return code;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    return report_error(e, 2, "config error");
  } catch (const NumericRefusal& e) {
    return report_error(e, 3, "numeric refusal");
  } catch (const std::exception& e) {
    return report_error(e, 1, "error");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical lab for linear cocycles over subshifts of finite type"};
  app.require_subcommand(1);

  std::string run_path, validate_path;
  int workers = 1;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "run an experiment config and write its outputs");
  run->add_option("config", run_path, "experiment config (JSON)")->required();
  run->add_option("--workers", workers, "worker threads (outputs do not depend on it)")->check(CLI::PositiveNumber);
  auto* seed_opt = run->add_option("--seed", seed, "override rng_seed");

  auto* validate = app.add_subcommand("validate", "parse a config and check its parameters");
  validate->add_option("config", validate_path, "experiment config (JSON)")->required();

  auto* list = app.add_subcommand("list-kinds", "print the experiment and cocycle kinds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (*list) {
    std::cout << "experiments:";
    for (auto& k : experiment_kinds()) std::cout << " " << k;
    std::cout << "\ncocycles:";
    for (auto& k : cocycle_kinds()) std::cout << " " << k;
    std::cout << "\n";
    return 0;
  }
  if (*validate) {
    return guarded([&] {
      auto cfg = load_config(validate_path);
      validate_experiment(cfg);
      std::cout << "ok: " << cfg.kind << "\n";
      return 0;
    });
  }
  return guarded([&] {
    auto cfg = load_config(run_path);
    if (*seed_opt) {
      cfg.rng_seed = seed;
      cfg.raw["rng_seed"] = seed;
    }
    auto out = run_experiment(cfg, workers);
    Json s;
    s["experiment"] = cfg.kind;
    s["output_dir"] = cfg.output_dir;
    s["files"] = Json::array();
    for (auto& [name, content] : out.files) s["files"].push_back(name);
    s["files"].push_back("manifest.json");
    s["summary"] = out.summary;
    std::cout << s.dump() << "\n";
    return 0;
  });
}
