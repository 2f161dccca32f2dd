// seqmenu: command-line front end for the solvers, baselines and checks.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "seqmenu/seqmenu.hpp"

namespace {

using namespace seqmenu;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<int> threads;
  std::string profile;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_out = true) {
  cmd->add_option("--config", f.config_path, "config file (key=value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "overrides the config seed");
  if (with_out) cmd->add_option("--out", f.out_dir, "output directory for records and checkpoints");
  cmd->add_option("--threads", f.threads, "worker threads (default: $SEQMENU_THREADS or 1)")->check(CLI::PositiveNumber);
  cmd->add_option("--profile", f.profile, "desk or paper per-state budget")->check(CLI::IsMember({"desk", "paper"}));
}

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig c = f.config_path.empty() ? ExperimentConfig{} : load_config(f.config_path);
  if (!f.profile.empty()) apply_profile(c, f.profile == "paper" ? RunProfile::Paper : RunProfile::Desk);
  if (f.seed) c.seed = *f.seed;
  c.validate();
  return c;
}

int resolve_threads(const CommonFlags& f) { return f.threads.value_or(default_threads()); }

int do_run(const CommonFlags& f, Method method) {
  const ExperimentConfig c = resolve_config(f);
  RunOptions opt;
  opt.threads = resolve_threads(f);
  opt.log = &std::cerr;
  std::cerr << to_string(method) << ": setting " << family_letter(c.setting) << ' ' << c.n << 'x' << c.m << ", "
            << to_string(c.menu_family) << " menus, seed " << c.seed << ", " << opt.threads << " thread(s)\n";
  const auto out = run(c, method, f.out_dir, opt);
  std::cout << run_record_header() << '\n';
  write_run_record(std::cout, out.record);
  if (!out.checkpoint.empty()) std::cerr << "policy written to " << out.checkpoint << '\n';
  return 0;
}

/// Record files named on the command line; directories contribute their runs.csv.
std::vector<RunRecord> gather_records(const std::vector<std::string>& inputs) {
  std::vector<RunRecord> all;
  for (const auto& in : inputs) {
    std::filesystem::path p(in);
    if (std::filesystem::is_directory(p)) p /= "runs.csv";
    auto part = read_run_records(p.string());
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Revenue-maximizing menus for sequential combinatorial auctions"};
  app.set_version_flag("--version", std::string(SEQMENU_VERSION));
  app.require_subcommand(1);

  CommonFlags flags;
  struct Solver {
    const char* name;
    const char* help;
    Method method;
  };
  const Solver solvers[] = {
      {"solve-dp", "tabular dynamic program over (agent, available set)", Method::Dp},
      {"solve-dp-sym", "dynamic program over (agent, items left) for iid items", Method::DpSym},
      {"train-fpi", "fitted policy iteration with neural actor and critic", Method::Fpi},
      {"baseline-item", "optimal sequential item-wise posted prices", Method::ItemWise},
      {"baseline-bundle", "optimal sequential grand-bundle prices", Method::BundleWise},
  };
  std::vector<std::pair<CLI::App*, Method>> solver_cmds;
  for (const auto& s : solvers) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, flags);
    solver_cmds.emplace_back(cmd, s.method);
  }

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a saved policy on the config's test set");
  add_common(eval_cmd, flags);
  std::string policy_path;
  eval_cmd->add_option("--policy", policy_path, "policy file written by a solver")->required()->check(CLI::ExistingFile);

  auto* table_cmd = app.add_subcommand("table", "comparison table from run records");
  std::vector<std::string> record_inputs;
  std::string table_out;
  table_cmd->add_option("records", record_inputs, "runs.csv files or directories containing one")->required();
  table_cmd->add_option("--out", table_out, "directory for table.csv");

  auto* check_cmd = app.add_subcommand("selfcheck", "fast oracle suite; nonzero exit on any failure");
  std::string fault;
  check_cmd->add_option("--inject-fault", fault, "deliberately break a check (gradient)")
      ->check(CLI::IsMember({"gradient"}));
  std::string check_out;
  check_cmd->add_option("--out", check_out, "directory for selfcheck.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto [cmd, method] : solver_cmds)
      if (cmd->parsed()) return do_run(flags, method);

    if (eval_cmd->parsed()) {
      const ExperimentConfig c = resolve_config(flags);
      const auto est = evaluate_checkpoint(c, policy_path, resolve_threads(flags));
      const auto write = [&](std::ostream& os) {
        os << "policy,revenue,std_error,episodes\n"
           << detail::csv_field(policy_path) << ',' << detail::num(est.mean) << ',' << detail::num(est.std_error) << ','
           << est.episodes << '\n';
      };
      write(std::cout);
      if (!flags.out_dir.empty()) {
        std::filesystem::create_directories(flags.out_dir);
        std::ofstream os(std::filesystem::path(flags.out_dir) / "evaluation.csv");
        write(os);
      }
      return 0;
    }

    if (table_cmd->parsed()) {
      const auto table = make_table(gather_records(record_inputs));
      for (const auto& w : table.warnings) std::cerr << "warning: " << w << '\n';
      write_table_text(std::cout, table);
      if (!table_out.empty()) {
        std::filesystem::create_directories(table_out);
        std::ofstream os(std::filesystem::path(table_out) / "table.csv");
        write_table_csv(os, table);
      }
      return 0;
    }

    if (check_cmd->parsed()) {
      OracleFaults faults;
      faults.corrupt_gradient = fault == "gradient";
      const auto checks = selfcheck(faults);
      write_check_report(std::cout, checks);
      if (!check_out.empty()) {
        std::filesystem::create_directories(check_out);
        std::ofstream os(std::filesystem::path(check_out) / "selfcheck.csv");
        write_check_report(os, checks);
      }
      for (const auto& c : checks)
        if (!c.pass) return 1;
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
