// spacedream: scenario harness and ground receiver.
//
//   spacedream run <scenario-file> [--work DIR] [--report FILE] [--kv] [--wallclock N]
//   spacedream receiver [--listen host:port] --out rx/
//   spacedream scenarios list [--dir DIR]

#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "receiver.hpp"
#include "spacedream/cli/run.hpp"

using namespace spacedream;

#ifndef SPACEDREAM_SCENARIO_DIR
#define SPACEDREAM_SCENARIO_DIR "scenarios"
#endif

namespace {

fs::path scenario_dir(const std::string& opt) {
  if (!opt.empty()) return opt;
  if (const char* env = std::getenv("SPACEDREAM_SCENARIOS")) return env;
  if (fs::is_directory("scenarios")) return "scenarios";
  return SPACEDREAM_SCENARIO_DIR;
}

/// Accepts a path or the bare name of a file in the scenario folder.
fs::path resolve_scenario(const std::string& arg, const fs::path& dir) {
  if (fs::exists(arg)) return arg;
  for (auto cand : {dir / arg, dir / (arg + ".scn")})
    if (fs::exists(cand)) return cand;
  throw cli::ScenarioError(cli::ScenarioErrc::Io, "no scenario '" + arg + "' (looked in " + dir.string() + ")");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale robot-arm mission with downlink: scenario runner and ground tools"};
  app.require_subcommand(1);

  std::string scenario, work, report_path, dir;
  bool kv = false;
  std::size_t wall = 0;
  auto* run = app.add_subcommand("run", "Run a scenario end to end on the simulated clock");
  run->add_option("scenario", scenario, "Scenario file or name")->required();
  run->add_option("--work", work, "Working folder (default: ./run-<name>)");
  run->add_option("--report", report_path, "Where to write the key=value report (default: <work>/report.txt)");
  run->add_flag("--kv", kv, "Print the key=value report instead of the summary table");
  run->add_option("--wallclock", wall, "Also measure 100 Hz loop jitter on the wall clock for N cycles");
  run->add_option("--dir", dir, "Scenario folder");

  std::string listen = "0.0.0.0:47100", out;
  double idle_exit = 0.0;
  auto* recv = app.add_subcommand("receiver", "Receive downlink packets over UDP");
  recv->add_option("--listen", listen, "host:port to bind");
  recv->add_option("--out", out, "Output folder (rx/)")->required();
  recv->add_option("--idle-exit", idle_exit, "Finish after this many seconds without packets");

  auto* scen = app.add_subcommand("scenarios", "Scenario catalogue");
  scen->require_subcommand(1);
  auto* list = scen->add_subcommand("list", "List the available scenarios");
  list->add_option("--dir", dir, "Scenario folder");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto path = resolve_scenario(scenario, scenario_dir(dir));
      auto sc = cli::load_scenario(path);
      cli::RunOptions opt;
      opt.work_dir = work.empty() ? fs::path("run-" + sc.name) : fs::path(work);
      opt.wallclock_cycles = wall;
      const auto t0 = std::chrono::steady_clock::now();
      auto rep = cli::run_scenario(sc, opt);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto text = cli::to_kv(rep);
      write_text_atomic(report_path.empty() ? opt.work_dir / "report.txt" : fs::path(report_path), text);
      if (kv) {
        std::cout << text;
      } else {
        std::cout << cli::summary_table(rep);
        std::cout << "  " << std::left << std::setw(34) << "runtime" << cli::detail::fmt(secs, 1) << " s\n";
      }
      return rep.passed() ? 0 : 1;
    }
    if (*recv) return tools::run_receiver(listen, out, idle_exit);
    if (*list) {
      auto d = scenario_dir(dir);
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(d))
        if (e.is_regular_file() && e.path().extension() == ".scn") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        try {
          auto sc = cli::load_scenario(f);
          std::cout << std::left << std::setw(20) << sc.name << sc.description << "\n";
        } catch (const cli::ScenarioError& e) {
          std::cout << std::left << std::setw(20) << f.stem().string() << "(invalid: " << e.what() << ")\n";
        }
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "spacedream: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
