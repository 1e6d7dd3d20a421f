#pragma once

// Command-line front end. Exit codes: 0 success, 1 bad configuration or
// input, 2 no feasible design. Diagnostics go to `err`; `out` receives only
// the path of the written report.

#include "offsetbf/io.hpp"
#include "offsetbf/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>

namespace offsetbf {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitInfeasible = 2 };

/// Maps a library error onto the exit-code contract.
inline int exit_code_for(const Error& e) {
  if (dynamic_cast<const InvalidConfig*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const InvalidModel*>(&e) || dynamic_cast<const InvalidArgument*>(&e))
    return kExitConfig;
  return kExitInfeasible;
}

namespace detail {

inline std::string csv_path_for(const std::string& json_path) {
  std::filesystem::path p(json_path);
  p.replace_extension(".csv");
  return p.string();
}

struct CliArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::string algorithms;
};

inline RunConfig load_config(const CliArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : config_from_json(io::read_json_file(a.config));
  // Relative scenario paths are taken relative to the config file.
  if (c.scenario_file && !a.config.empty()) {
    std::filesystem::path p(*c.scenario_file);
    if (p.is_relative()) c.scenario_file = (std::filesystem::path(a.config).parent_path() / p).string();
  }
  if (a.seed) c.seed = *a.seed;
  if (a.trials) c.n_trials = *a.trials;
  if (!a.algorithms.empty()) {
    c.algorithms.clear();
    std::stringstream ss(a.algorithms);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) c.algorithms.push_back(parse_algorithm(item));
    if (c.algorithms.empty()) throw InvalidConfig("--algorithms is empty");
    c.algorithm = c.algorithms.front();
  }
  c.validate();
  return c;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Offset-based robust beamforming: design, sweeps and Monte-Carlo checks"};
  app.require_subcommand(1);
  detail::CliArgs args;

  auto add_common = [&args](CLI::App* sub, const char* out_help) {
    sub->add_option("--config", args.config, "JSON run configuration");
    sub->add_option("--out", args.out, out_help)->required();
    sub->add_option("--seed", args.seed, "Base seed (overrides the config)");
    sub->add_option("--trials", args.trials, "Monte-Carlo trials per realization")->check(CLI::PositiveNumber);
    sub->add_option("--algorithms", args.algorithms, "Comma-separated algorithm ids");
  };
  CLI::App* design = app.add_subcommand("design", "Design beamformers and write a JSON report plus CSV");
  add_common(design, "Report path (.json); the CSV goes next to it");
  CLI::App* maxr = app.add_subcommand("maxr", "Maximize the common offset under the power budget");
  add_common(maxr, "Report path (.json); the CSV goes next to it");
  CLI::App* mc = app.add_subcommand("montecarlo", "Design, then estimate the outage empirically");
  add_common(mc, "Report path (.json)");
  CLI::App* sw = app.add_subcommand("sweep", "Power versus outage over an offset grid");
  add_common(sw, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream help, msg;
    const int code = app.exit(e, help, msg);
    err << msg.str() << help.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig c = detail::load_config(args);
    if (*sw) {
      const auto rows = run_sweep(c);
      io::write_text_file(args.out, io::sweep_csv(rows));
      out << args.out << '\n';
      return kExitOk;
    }
    if (*maxr && takes_offset(c.algorithm)) c.algorithm = Algorithm::maxr;
    const Scenario s = make_scenario(c, c.seed);
    const DesignOutcome d = run_design(s, c);
    Json report;
    if (*mc) {
      const OutageEstimate est = estimate_outage(d.beamformers, d.served, c.n_trials, derive_seed(c.seed, 1));
      report = montecarlo_json(d, est, c);
    } else {
      report = design_report_json(d, c);
      io::write_text_file(detail::csv_path_for(args.out), io::report_csv(d.report));
    }
    io::write_text_file(args.out, report.dump(2) + "\n");
    if (!d.report.rescheduled.empty()) {
      err << "rescheduled users:";
      for (int k : d.report.rescheduled) err << ' ' << k;
      err << '\n';
    }
    out << args.out << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace offsetbf
