// Command line front end for the experiment pipeline.

#include <CLI11.hpp>
#include <chrono>
#include <iostream>

#include "aquatwin/error.hpp"
#include "aquatwin/experiment.hpp"

namespace {

struct Args {
  std::string config;
  int workers = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Args& args) {
  cmd->add_option("--config", args.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--workers", args.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", args.out, "output directory, overrides output_dir in the config");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace aquatwin;
  CLI::App app{"aquatwin: water network digital twin with conformal-guided adaptive sampling"};
  app.require_subcommand(1);
  Args args;
  using Command = void (*)(const ExperimentConfig&, const CommandOptions&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"generate", "write synthetic demand scenarios", cmd_generate},
      {"train", "train one forecaster per junction", cmd_train},
      {"calibrate", "two-pass conformal calibration", cmd_calibrate},
      {"run", "closed-loop twin runs for every policy, budget and noise cell", cmd_run},
      {"evaluate", "metrics tables and charts from the run artifacts", cmd_evaluate},
      {"ablate", "ablation table at the ablation budget", cmd_ablate},
      {"sweep", "sensitivity to alpha and lookback", cmd_sweep},
  };
  for (const auto& [name, help, fn] : commands) add_common(app.add_subcommand(name, help), args);

  CLI11_PARSE(app, argc, argv);

  const auto* sub = app.get_subcommands().front();
  try {
    auto cfg = load_config(args.config);
    if (!args.out.empty()) cfg.output_dir = args.out;
    CommandOptions opt;
    opt.workers = args.workers;
    const auto start = std::chrono::steady_clock::now();
    opt.log = [start](const std::string& msg) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::clog << "[" << static_cast<long long>(s) << "s] " << msg << '\n';
    };
    for (const auto& [name, help, fn] : commands) {
      if (name == sub->get_name()) fn(cfg, opt);
    }
  } catch (const InvalidConfig& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << " (run the upstream command first)\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
