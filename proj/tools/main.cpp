#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "commands.hpp"

using namespace infattack;
using namespace infattack::cli;

namespace {

enum Exit { Ok = 0, Other = 1, Config = 2, Data = 3, Numerical = 4 };

struct Flags {
  std::string config;
  std::string out;
  long long seed = -1;
  int threads = 0;
};

void add_run_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "experiment config (JSON)")->required();
  sub->add_option("--out", f.out, "output directory (overrides config 'output')");
  sub->add_option("--seed", f.seed, "seed (overrides config 'seed')")->check(CLI::NonNegativeNumber);
  sub->add_option("--threads", f.threads, "worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);
}

RunOptions options_from(const Flags& f) {
  RunOptions opt;
  opt.config = load_config(f.config);
  if (f.seed >= 0) opt.config["seed"] = f.seed;
  if (!f.out.empty()) opt.config["output"] = f.out;
  opt.seed = opt.config["seed"].get<std::uint64_t>();
  opt.out = opt.config["output"].get<std::string>();
  opt.threads = f.threads > 0 ? f.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Influence-score manipulation experiments"};
  app.require_subcommand(1);

  Flags flags;
  const std::pair<const char*, void (*)(const RunOptions&)> runs[] = {
      {"train", cmd_train},
      {"influence", cmd_influence},
      {"attack-target", cmd_attack_target},
      {"attack-multi", cmd_attack_multi},
      {"attack-scale", cmd_attack_scale},
      {"fairness", cmd_fairness},
  };
  std::vector<std::pair<CLI::App*, void (*)(const RunOptions&)>> subs;
  for (auto [name, fn] : runs) {
    CLI::App* sub = app.add_subcommand(name);
    add_run_flags(sub, flags);
    subs.emplace_back(sub, fn);
  }
  CLI::App* report = app.add_subcommand("report", "aggregate reports into plot-ready CSV");
  std::vector<std::string> report_files;
  std::string report_out = "out";
  report->add_option("reports", report_files, "report JSON files")->required();
  report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Ok : Config;
  }

  try {
    if (report->parsed()) {
      cmd_report({report_files.begin(), report_files.end()}, report_out);
      return Ok;
    }
    for (auto [sub, fn] : subs) {
      if (sub->parsed()) fn(options_from(flags));
    }
    return Ok;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return Config;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return Data;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << " (achieved " << e.achieved() << ")\n";
    return Numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Other;
  }
}
