#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "seqmenu/baselines.hpp"
#include "seqmenu/config.hpp"
#include "seqmenu/dp_solver.hpp"
#include "seqmenu/fpi.hpp"
#include "seqmenu/oracles.hpp"

#ifndef SEQMENU_VERSION
#define SEQMENU_VERSION "0.1.0"
#endif

namespace seqmenu {

enum class Method { Dp, DpSym, Fpi, ItemWise, BundleWise };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Dp: return "dp";
    case Method::DpSym: return "dp-sym";
    case Method::Fpi: return "fpi";
    case Method::ItemWise: return "item-wise";
    case Method::BundleWise: return "bundle-wise";
  }
  return "dp";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::Dp, Method::DpSym, Method::Fpi, Method::ItemWise, Method::BundleWise})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

/// Throws ConfigError naming the violated constraint if `method` cannot run on `c`.
inline void check_method(const ExperimentConfig& c, Method method) {
  c.validate();
  const auto model = c.model();
  switch (method) {
    case Method::Dp:
      if (c.menu_family == MenuFamily::EntryFee)
        throw ConfigError("dp solves full or size_capped menus; entry_fee menus are trained with fpi");
      break;
    case Method::DpSym:
      if (c.menu_family == MenuFamily::EntryFee) throw ConfigError("dp-sym does not support entry_fee menus");
      if (!model.item_symmetric()) throw ConfigError("dp-sym needs iid items (settings A, C or D)");
      break;
    case Method::ItemWise:
      if (!model.additive() && c.m > 12) throw ConfigError("item-wise pricing for non-additive settings needs m <= 12");
      break;
    case Method::BundleWise:
      if (model.family == Family::UnitDemand) throw ConfigError("bundle-wise is not reported for unit demand (n/a)");
      break;
    case Method::Fpi: break;
  }
}

// ---------------------------------------------------------------------------
// Run records.

struct RunRecord {
  std::string timestamp;  // UTC, ISO 8601
  char setting = 'A';
  int n = 0, m = 0, k = 0;
  std::string menu_family;
  std::string method;
  double revenue = 0.0;
  double std_error = 0.0;
  std::size_t episodes = 0;
  double wall_seconds = 0.0;
  std::string version = SEQMENU_VERSION;
  std::uint64_t seed = 0;
  std::string note;
  std::string config;  // key=value pairs joined by ';'
};

inline const char* run_record_header() {
  return "timestamp,setting,n,m,k,menu_family,method,revenue,std_error,episodes,wall_seconds,version,seed,note,config";
}

namespace detail {

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string one_line_config(const ExperimentConfig& c) {
  std::string s = to_text(c);
  if (!s.empty() && s.back() == '\n') s.pop_back();
  std::replace(s.begin(), s.end(), '\n', ';');
  return s;
}

inline std::string num(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

}  // namespace detail

inline void write_run_record(std::ostream& os, const RunRecord& r) {
  using detail::csv_field;
  os << r.timestamp << ',' << r.setting << ',' << r.n << ',' << r.m << ',' << r.k << ',' << r.menu_family << ','
     << r.method << ',' << detail::num(r.revenue) << ',' << detail::num(r.std_error) << ',' << r.episodes << ','
     << detail::num(r.wall_seconds) << ',' << csv_field(r.version) << ',' << r.seed << ',' << csv_field(r.note) << ','
     << csv_field(r.config) << '\n';
}

inline std::vector<RunRecord> read_run_records(std::istream& is, const std::string& source = "<stream>") {
  std::vector<RunRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("timestamp,", 0) == 0) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 15) throw FormatError(source + ":" + std::to_string(lineno) + ": expected 15 fields");
    try {
      RunRecord r;
      r.timestamp = f[0];
      r.setting = f[1].empty() ? '?' : f[1][0];
      r.n = std::stoi(f[2]);
      r.m = std::stoi(f[3]);
      r.k = std::stoi(f[4]);
      r.menu_family = f[5];
      r.method = f[6];
      r.revenue = std::stod(f[7]);
      r.std_error = std::stod(f[8]);
      r.episodes = std::stoull(f[9]);
      r.wall_seconds = std::stod(f[10]);
      r.version = f[11];
      r.seed = std::stoull(f[12]);
      r.note = f[13];
      r.config = f[14];
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": malformed record");
    }
  }
  return out;
}

inline std::vector<RunRecord> read_run_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  return read_run_records(is, path);
}

/// Appends to `path`, writing the header first if the file is new or empty.
inline void append_run_record(const std::string& path, const RunRecord& r) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  if (fresh) os << run_record_header() << '\n';
  write_run_record(os, r);
}

// ---------------------------------------------------------------------------
// Flat price files for the baselines that are not tabular.

inline void save_bundle_prices(const BundleWisePolicy& p, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << "agent,price,value\n";
  os.precision(17);
  for (std::size_t t = 0; t < p.stage_prices.size(); ++t)
    os << t + 1 << ',' << p.stage_prices[t] << ',' << p.stage_values[t] << '\n';
}

inline BundleWisePolicy load_bundle_prices(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  std::string line;
  std::getline(is, line);
  if (line != "agent,price,value") throw FormatError(path + ": not a bundle price file");
  BundleWisePolicy p;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 3 || std::stoul(f[0]) != p.stage_prices.size() + 1) throw FormatError(path + ": bad row");
    p.stage_prices.push_back(std::stod(f[1]));
    p.stage_values.push_back(std::stod(f[2]));
  }
  p.stage_values.push_back(0.0);
  return p;
}

/// Per-agent item prices of an additive item-wise policy.
inline void save_item_prices(const ItemWisePolicy& p, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << "agent,item,price\n";
  os.precision(17);
  const ItemSet all = ItemSet::full(p.model().m);
  for (int a = 1; a <= p.agents(); ++a) {
    const auto prices = p.item_prices({a, all});
    for (int j = 0; j < p.model().m; ++j) os << a << ',' << j << ',' << prices[j] << '\n';
  }
}

/// Posted item prices read back from save_item_prices; offers EntryFeeMenu{prices, 0}.
struct ItemPricePolicy {
  ValuationModel model;
  std::vector<std::vector<double>> prices;  // [agent - 1][item]

  Offer offer(const AuctionState& s) const {
    require(s.agent >= 1 && s.agent <= static_cast<int>(prices.size()), "state out of range: " + to_string(s));
    EntryFeeMenu menu{prices[s.agent - 1], 0.0};
    for (int j = 0; j < model.m; ++j)
      if (!s.available.contains(j)) menu.item_prices[j] = model.mask_price();
    return menu;
  }
};

inline ItemPricePolicy load_item_prices(const std::string& path, const ValuationModel& model) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  std::string line;
  std::getline(is, line);
  if (line != "agent,item,price") throw FormatError(path + ": not an item price file");
  ItemPricePolicy p;
  p.model = model;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 3) throw FormatError(path + ": bad row");
    const auto a = std::stoul(f[0]);
    const auto j = std::stoul(f[1]);
    if (a < 1 || j >= static_cast<std::size_t>(model.m)) throw FormatError(path + ": index out of range");
    if (p.prices.size() < a) p.prices.resize(a, std::vector<double>(model.m, model.mask_price()));
    p.prices[a - 1][j] = std::stod(f[2]);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Solving and evaluation.

struct RunOptions {
  int threads = 1;
  std::ostream* log = nullptr;  // progress lines; null for silence
};

struct RunOutput {
  RunRecord record;
  std::string checkpoint;  // path of the written policy, empty if none
};

/**
 * Solves or trains `method` on `config`, evaluates on the canonical test set,
 * writes the policy checkpoint into `out_dir` and appends the record to
 * out_dir/runs.csv. An empty `out_dir` skips all file output.
 */
inline RunOutput run(const ExperimentConfig& config, Method method, const std::string& out_dir,
                     const RunOptions& opt = {}) {
  check_method(config, method);
  const auto t0 = std::chrono::steady_clock::now();
  const std::string stem = std::string(1, family_letter(config.setting)) + "_" + std::to_string(config.n) + "x" +
                           std::to_string(config.m) + "_" + to_string(method);
  const auto path = [&](const std::string& suffix) {
    return out_dir.empty() ? std::string() : (std::filesystem::path(out_dir) / (stem + suffix)).string();
  };
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const TestSet test = canonical_test_set(config);
  const std::string echo = to_text(config);

  DpOptions dp_opt;
  dp_opt.threads = opt.threads;
  if (opt.log)
    dp_opt.progress = [&](int agent, std::size_t done, std::size_t total) {
      if (done == total) *opt.log << "  agent " << agent << ": " << total << " states solved" << std::endl;
    };

  RunOutput out;
  RevenueEstimate est;
  std::string note;
  switch (method) {
    case Method::Dp: {
      auto policy = solve_dp(config, dp_opt);
      est = evaluate_policy(policy, test, opt.threads);
      out.checkpoint = path(".sqdp");
      if (!out.checkpoint.empty()) save_policy(policy, out.checkpoint, echo);
      break;
    }
    case Method::DpSym: {
      auto policy = solve_dp_symmetric(config, dp_opt);
      est = evaluate_policy(policy, test, opt.threads);
      out.checkpoint = path(".sqdp");
      if (!out.checkpoint.empty()) save_policy(policy, out.checkpoint, echo);
      break;
    }
    case Method::Fpi: {
      FpiOptions fo;
      fo.threads = opt.threads;
      std::ofstream log_csv;
      if (!out_dir.empty()) {
        log_csv.open(path("_log.csv"));
        write_fpi_log_header(log_csv);
      }
      fo.on_iteration = [&](const FpiLogRow& row) {
        if (log_csv.is_open()) {
          write_fpi_log_row(log_csv, row);
          log_csv.flush();
        }
        if (opt.log)
          *opt.log << "  iteration " << row.iteration << ": test revenue " << row.test_revenue << " ("
                   << row.wall_seconds << " s)" << std::endl;
      };
      const auto res = train_fpi(config, fo);
      est = evaluate_policy(res.policy(), test, opt.threads);
      out.checkpoint = path(".sqfp");
      if (!out.checkpoint.empty()) save_fpi(*res.nets, out.checkpoint);
      if (config.menu_family == MenuFamily::EntryFee) note = "entry-fee menus";
      break;
    }
    case Method::ItemWise: {
      const auto policy = solve_item_wise(config, dp_opt);
      est = evaluate_policy(policy, test, opt.threads);
      if (policy.per_item()) {
        out.checkpoint = path("_prices.csv");
        if (!out.checkpoint.empty()) save_item_prices(policy, out.checkpoint);
        note = "per-item recursion";
      } else {
        out.checkpoint = path(".sqdp");
        if (!out.checkpoint.empty()) save_policy(policy.to_tabular(), out.checkpoint, echo);
        note = "state-coupled item prices (coordinate ascent)";
      }
      break;
    }
    case Method::BundleWise: {
      const auto policy = solve_bundle_wise(config);
      est = evaluate_policy(policy, test, opt.threads);
      out.checkpoint = path("_prices.csv");
      if (!out.checkpoint.empty()) save_bundle_prices(policy, out.checkpoint);
      break;
    }
  }

  RunRecord& r = out.record;
  r.timestamp = detail::utc_now();
  r.setting = family_letter(config.setting);
  r.n = config.n;
  r.m = config.m;
  r.k = config.setting == Family::KDemand ? config.k : 0;
  r.menu_family = to_string(config.menu_family);
  r.method = to_string(method);
  r.revenue = est.mean;
  r.std_error = est.std_error;
  r.episodes = est.episodes;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.seed = config.seed;
  r.note = note;
  r.config = detail::one_line_config(config);
  if (!out_dir.empty()) append_run_record((std::filesystem::path(out_dir) / "runs.csv").string(), r);
  return out;
}

/// Evaluates a saved policy of any kind on the config's canonical test set.
inline RevenueEstimate evaluate_checkpoint(const ExperimentConfig& config, const std::string& checkpoint,
                                           int threads = 1) {
  std::ifstream is(checkpoint, std::ios::binary);
  if (!is) throw FormatError("cannot open " + checkpoint);
  std::string head(32, '\0');
  is.read(head.data(), 32);
  head.resize(static_cast<std::size_t>(is.gcount()));
  is.close();
  const TestSet test = canonical_test_set(config);
  const auto check_shape = [&](int n, const ValuationModel& model) {
    if (n != config.n || model.m != config.m || model.family != config.setting)
      throw ConfigError(checkpoint + " was trained for a different setting or size than the config");
  };
  if (head.rfind("SQDP", 0) == 0) {
    const auto loaded = load_policy(checkpoint);
    if (loaded.kind == 0) check_shape(loaded.tabular.agents(), loaded.tabular.model());
    else check_shape(loaded.symmetric.agents(), loaded.symmetric.model());
    return evaluate_policy(loaded.policy(), test, threads);
  }
  if (head.rfind("SQFP", 0) == 0) {
    auto nets = std::make_shared<const FpiNetworks>(load_fpi(checkpoint));
    check_shape(nets->n, nets->model);
    const ActorPolicy policy(nets);
    detail::warm_along_test_set(policy, test, test.size());
    return evaluate_policy(policy, test, threads);
  }
  if (head.rfind("agent,price,value", 0) == 0) {
    const auto p = load_bundle_prices(checkpoint);
    if (static_cast<int>(p.stage_prices.size()) != config.n) throw ConfigError(checkpoint + ": agent count differs from config");
    return evaluate_policy(p, test, threads);
  }
  if (head.rfind("agent,item,price", 0) == 0) {
    const auto p = load_item_prices(checkpoint, config.model());
    if (static_cast<int>(p.prices.size()) != config.n) throw ConfigError(checkpoint + ": agent count differs from config");
    return evaluate_policy(p, test, threads);
  }
  throw FormatError(checkpoint + ": unrecognized policy file");
}

// ---------------------------------------------------------------------------
// Comparison tables.

struct ComparisonTable {
  std::vector<std::string> methods;                          // column order
  std::vector<std::string> row_keys;                         // e.g. "A 5x5"
  std::map<std::string, std::map<std::string, RunRecord>> cells;  // row -> method -> record
  std::vector<std::string> warnings;
};

inline std::string table_row_key(const RunRecord& r) {
  std::string key = std::string(1, r.setting) + " " + std::to_string(r.n) + "x" + std::to_string(r.m);
  if (r.setting == 'D') key += " k=" + std::to_string(r.k);
  return key;
}

/// One row per (setting, size), one column per method. Duplicates: latest timestamp wins.
inline ComparisonTable make_table(const std::vector<RunRecord>& records) {
  ComparisonTable t;
  t.methods = {"item-wise", "bundle-wise", "dp", "dp-sym", "fpi"};
  for (const auto& r : records) {
    if (std::find(t.methods.begin(), t.methods.end(), r.method) == t.methods.end()) t.methods.push_back(r.method);
    const std::string key = table_row_key(r);
    if (std::find(t.row_keys.begin(), t.row_keys.end(), key) == t.row_keys.end()) t.row_keys.push_back(key);
    auto& row = t.cells[key];
    auto it = row.find(r.method);
    if (it == row.end()) {
      row.emplace(r.method, r);
      continue;
    }
    const bool newer = r.timestamp >= it->second.timestamp;
    t.warnings.push_back("duplicate " + r.method + " result for " + key + ": keeping " +
                         (newer ? r.timestamp : it->second.timestamp) + ", dropping " +
                         (newer ? it->second.timestamp : r.timestamp));
    if (newer) it->second = r;
  }
  std::sort(t.row_keys.begin(), t.row_keys.end());
  return t;
}

inline constexpr const char* kMissingCell = "—";

inline void write_table_csv(std::ostream& os, const ComparisonTable& t) {
  os << "setting";
  for (const auto& m : t.methods) os << ',' << m;
  os << '\n';
  for (const auto& key : t.row_keys) {
    os << key;
    const auto& row = t.cells.at(key);
    for (const auto& m : t.methods) {
      const auto it = row.find(m);
      os << ',' << (it == row.end() ? std::string(kMissingCell) : detail::num(it->second.revenue));
    }
    os << '\n';
  }
}

inline void write_table_text(std::ostream& os, const ComparisonTable& t) {
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"setting"});
  for (const auto& m : t.methods) grid[0].push_back(m);
  for (const auto& key : t.row_keys) {
    std::vector<std::string> line{key};
    const auto& row = t.cells.at(key);
    for (const auto& m : t.methods) {
      const auto it = row.find(m);
      if (it == row.end()) {
        line.emplace_back(kMissingCell);
      } else {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(3) << it->second.revenue;
        line.push_back(cell.str());
      }
    }
    grid.push_back(std::move(line));
  }
  // Display width: the dash is one column but three bytes.
  const auto width = [](const std::string& s) { return s == kMissingCell ? std::size_t{1} : s.size(); };
  std::vector<std::size_t> w(grid[0].size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) w[i] = std::max(w[i], width(line[i]));
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      const std::size_t pad = w[i] - width(line[i]);
      if (i == 0) os << line[i] << std::string(pad, ' ');
      else os << "  " << std::string(pad, ' ') << line[i];
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Self-check.

/// The fast oracle suite. Each check reports pass/fail, a detail line and wall time.
inline std::vector<CheckResult> selfcheck(const OracleFaults& faults = {}) {
  std::vector<CheckResult> out;
  out.push_back(check_single_posted_price());
  out.push_back(check_two_bidder_root());
  out.push_back(check_td_lambda_identities());
  out.push_back(check_pi_loss_gradient(60, 1, faults));
  out.push_back(check_nn_backward(60, 1, faults));
  out.push_back(check_entry_fee_gradient(60, 1, faults));
  out.push_back(check_best_bundle(10000));
  out.push_back(check_best_prefix_bundle(10000));
  out.push_back(check_dsic_ir(20000, 5000));
  return out;
}

inline void write_check_report(std::ostream& os, const std::vector<CheckResult>& checks) {
  os << "check,result,seconds,detail\n";
  for (const auto& c : checks)
    os << detail::csv_field(c.name) << ',' << (c.pass ? "pass" : "FAIL") << ',' << detail::num(c.seconds) << ','
       << detail::csv_field(c.detail) << '\n';
}

}  // namespace seqmenu
