#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "seqmenu/errors.hpp"
#include "seqmenu/menu_learning.hpp"
#include "seqmenu/valuations.hpp"

namespace seqmenu {

enum class MenuFamily { Full, SizeCapped, EntryFee };

inline std::string to_string(MenuFamily f) {
  switch (f) {
    case MenuFamily::Full: return "full";
    case MenuFamily::SizeCapped: return "size_capped";
    case MenuFamily::EntryFee: return "entry_fee";
  }
  return "full";
}

inline MenuFamily menu_family_from_string(const std::string& s) {
  if (s == "full") return MenuFamily::Full;
  if (s == "size_capped" || s == "size-capped") return MenuFamily::SizeCapped;
  if (s == "entry_fee" || s == "entry-fee") return MenuFamily::EntryFee;
  throw ConfigError("unknown menu_family '" + s + "'");
}

/// Per-state menu training (the tabular policy-improvement step).
struct DpHyper {
  std::size_t ell = 4096;  // samples per gradient step
  double kappa = 100.0;    // softmax inverse temperature
  double eta = 0.05;       // learning rate
  int gamma_steps = 500;   // gradient steps per state
  // Per-coordinate steps; plain SGD stalls on rarely chosen options of large menus.
  PriceOptimizer optimizer = PriceOptimizer::Adam;
  bool collapse_agents = true;  // key subproblems by agents remaining

  PIHyper pi() const {
    PIHyper h;
    h.ell = ell;
    h.kappa = kappa;
    h.eta = eta;
    h.gamma_steps = gamma_steps;
    h.optimizer = optimizer;
    return h;
  }
};

struct FpiHyper {
  int num_iterations = 20;
  int num_environments = 1024;
  int critic_steps_pre = 100;   // on TD(lambda) targets
  int critic_steps_post = 500;  // after the model-based target refresh
  int actor_steps = 50;
  double gamma = 1.0;
  double lambda = 0.95;
  double eps0 = std::exp(-2.0);
  std::size_t batch = 256;  // critic minibatch and per-state valuation samples
  double eta_v = 1e-4;
  std::optional<double> eta_pi;  // 1e-4, or 1e-3 for setting F, when unset
  double eta_eps = std::exp(-0.25);
  double kappa = 100.0;
  int hidden_layers = 3;
  int hidden_units = 256;
  int d_emb = 16;
  std::size_t actor_states = 0;  // distinct states per actor step; 0 = all
  std::size_t refresh_samples = 0;  // samples per state in the target refresh; 0 = batch
  bool retain_buffer = false;
  std::size_t eval_count = 0;  // test profiles for the per-iteration curve; 0 = full test set
};

struct BaselineHyper {
  int grid = 1000;
  std::size_t samples = 100000;     // grand-bundle draws for the bundle-wise CDF
  std::size_t item_samples = 4096;  // per-state draws for non-additive item-wise pricing
  int sweeps = 5;
};

struct ExperimentConfig {
  int n = 5;
  int m = 5;
  Family setting = Family::AdditiveUniform;
  int k = 3;
  MenuFamily menu_family = MenuFamily::Full;
  std::uint64_t seed = 1;
  std::size_t test_count = 10000;
  std::uint64_t test_seed = 20240607;
  DpHyper dp;
  FpiHyper fpi;
  BaselineHyper baseline;

  ValuationModel model() const {
    ValuationModel vm{setting, m, setting == Family::KDemand ? k : 0};
    return vm;
  }

  double eta_pi() const {
    return fpi.eta_pi.value_or(setting == Family::Complementarity ? 1e-3 : 1e-4);
  }

  /// Bundle-size cap of the menu family; unit demand counts as 1-demand.
  std::optional<int> menu_cap() const {
    if (menu_family != MenuFamily::SizeCapped) return std::nullopt;
    return setting == Family::UnitDemand ? 1 : k;
  }

  void validate() const {
    if (n < 1) throw ConfigError("n must be >= 1");
    model().validate();
    if (menu_family == MenuFamily::Full && m > 12)
      throw ConfigError("the full menu family enumerates 2^m bundles and requires m <= 12; use entry_fee");
    if (menu_family == MenuFamily::SizeCapped && setting != Family::KDemand && setting != Family::UnitDemand)
      throw ConfigError("size_capped menus require a demand-capped setting (C or D)");
    if (menu_family == MenuFamily::EntryFee && !model().additive())
      throw ConfigError("entry_fee menus require additive valuations (settings A or B)");
    if (menu_family == MenuFamily::SizeCapped && m > 20)
      throw ConfigError("size_capped menus are limited to m <= 20");
    if (dp.ell < 1 || dp.gamma_steps < 0 || !(dp.kappa > 0) || !(dp.eta > 0))
      throw ConfigError("dp hyperparameters must be positive");
    if (fpi.num_environments < 1 || fpi.batch < 1 || !(fpi.kappa > 0) || fpi.hidden_layers < 1 ||
        fpi.hidden_units < 1 || fpi.d_emb < 1 || fpi.gamma != 1.0)
      throw ConfigError("invalid fpi hyperparameters (note gamma is fixed at 1)");
    if (baseline.grid < 2) throw ConfigError("baseline.grid must be >= 2");
    if (test_count < 1) throw ConfigError("test.count must be >= 1");
  }
};

enum class RunProfile { Desk, Paper };

/// Desk runs fit a desktop CPU; paper runs use the published per-state budget.
inline void apply_profile(ExperimentConfig& c, RunProfile p) {
  if (p == RunProfile::Paper) {
    c.dp.ell = std::size_t{1} << 15;
    c.dp.gamma_steps = 2000;
  } else {
    c.dp.ell = std::size_t{1} << 12;
    c.dp.gamma_steps = 500;
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  if (!is || !(is >> std::ws).eof()) throw ConfigError("bad value for '" + key + "': " + value);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad boolean for '" + key + "': " + value);
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

template <class T, class M>
Setter num(M member) {
  return [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
    std::invoke(member, c) = parse_number<T>(k, v);
  };
}

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> setters = {
      {"n", num<int>([](ExperimentConfig& c) -> int& { return c.n; })},
      {"m", num<int>([](ExperimentConfig& c) -> int& { return c.m; })},
      {"k", num<int>([](ExperimentConfig& c) -> int& { return c.k; })},
      {"seed", num<std::uint64_t>([](ExperimentConfig& c) -> std::uint64_t& { return c.seed; })},
      {"setting",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (v.size() != 1) throw ConfigError("bad value for '" + k + "': " + v);
         c.setting = family_from_letter(v[0]);
       }},
      {"menu_family",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.menu_family = menu_family_from_string(v);
       }},
      {"test.count", num<std::size_t>([](ExperimentConfig& c) -> std::size_t& { return c.test_count; })},
      {"test.seed", num<std::uint64_t>([](ExperimentConfig& c) -> std::uint64_t& { return c.test_seed; })},
      {"dp.ell", num<std::size_t>([](ExperimentConfig& c) -> std::size_t& { return c.dp.ell; })},
      {"dp.kappa", num<double>([](ExperimentConfig& c) -> double& { return c.dp.kappa; })},
      {"dp.eta", num<double>([](ExperimentConfig& c) -> double& { return c.dp.eta; })},
      {"dp.gamma_steps", num<int>([](ExperimentConfig& c) -> int& { return c.dp.gamma_steps; })},
      {"dp.optimizer",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (v == "sgd") c.dp.optimizer = PriceOptimizer::Sgd;
         else if (v == "adam") c.dp.optimizer = PriceOptimizer::Adam;
         else throw ConfigError("bad value for '" + k + "': " + v);
       }},
      {"dp.collapse_agents",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.dp.collapse_agents = parse_bool(k, v);
       }},
      {"fpi.num_iterations", num<int>([](ExperimentConfig& c) -> int& { return c.fpi.num_iterations; })},
      {"fpi.num_environments", num<int>([](ExperimentConfig& c) -> int& { return c.fpi.num_environments; })},
      {"fpi.critic_steps_pre", num<int>([](ExperimentConfig& c) -> int& { return c.fpi.critic_steps_pre; })},
      {"fpi.critic_steps_post", num<int>([](ExperimentConfig& c) -> int& { return c.fpi.critic_steps_post; })},
      {"fpi.actor_steps", num<int>([](ExperimentConfig& c) -> int& { return c.fpi.actor_steps; })},
      {"fpi.gamma", num<double>([](ExperimentConfig& c) -> double& { return c.fpi.gamma; })},
      {"fpi.lambda", num<double>([](ExperimentConfig& c) -> double& { return c.fpi.lambda; })},
      {"fpi.eps0", num<double>([](ExperimentConfig& c) -> double& { return c.fpi.eps0; })},
      {"fpi.batch", num<std::size_t>([](ExperimentConfig& c) -> std::size_t& { return c.fpi.batch; })},
      {"fpi.eta_v", num<double>([](ExperimentConfig& c) -> double& { return c.fpi.eta_v; })},
      {"fpi.eta_pi",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.fpi.eta_pi = parse_number<double>(k, v);
       }},
      {"fpi.eta_eps", num<double>([](ExperimentConfig& c) -> double& { return c.fpi.eta_eps; })},
      {"fpi.kappa", num<double>([](ExperimentConfig& c) -> double& { return c.fpi.kappa; })},
      {"fpi.hidden_layers", num<int>([](ExperimentConfig& c) -> int& { return c.fpi.hidden_layers; })},
      {"fpi.hidden_units", num<int>([](ExperimentConfig& c) -> int& { return c.fpi.hidden_units; })},
      {"fpi.d_emb", num<int>([](ExperimentConfig& c) -> int& { return c.fpi.d_emb; })},
      {"fpi.actor_states", num<std::size_t>([](ExperimentConfig& c) -> std::size_t& { return c.fpi.actor_states; })},
      {"fpi.refresh_samples",
       num<std::size_t>([](ExperimentConfig& c) -> std::size_t& { return c.fpi.refresh_samples; })},
      {"fpi.retain_buffer",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.fpi.retain_buffer = parse_bool(k, v);
       }},
      {"fpi.eval_count", num<std::size_t>([](ExperimentConfig& c) -> std::size_t& { return c.fpi.eval_count; })},
      {"baseline.grid", num<int>([](ExperimentConfig& c) -> int& { return c.baseline.grid; })},
      {"baseline.samples", num<std::size_t>([](ExperimentConfig& c) -> std::size_t& { return c.baseline.samples; })},
      {"baseline.item_samples",
       num<std::size_t>([](ExperimentConfig& c) -> std::size_t& { return c.baseline.item_samples; })},
      {"baseline.sweeps", num<int>([](ExperimentConfig& c) -> int& { return c.baseline.sweeps; })},
  };
  return setters;
}

}  // namespace detail

/// Applies one key=value assignment; unknown keys are errors.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto& setters = detail::config_setters();
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, key, value);
}

/**
 * Parses flat `key = value` text. Blank lines and lines starting with '#' are
 * skipped. Keys are applied in file order on top of `base`.
 */
inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    set_config_value(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), base);
}

/// Serializes every key, in a form parse_config reads back to an equal config.
inline std::string to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "n=" << c.n << "\nm=" << c.m << "\nsetting=" << family_letter(c.setting) << "\nk=" << c.k
     << "\nmenu_family=" << to_string(c.menu_family) << "\nseed=" << c.seed
     << "\ntest.count=" << c.test_count << "\ntest.seed=" << c.test_seed
     << "\ndp.ell=" << c.dp.ell << "\ndp.kappa=" << c.dp.kappa << "\ndp.eta=" << c.dp.eta
     << "\ndp.gamma_steps=" << c.dp.gamma_steps
     << "\ndp.optimizer=" << (c.dp.optimizer == PriceOptimizer::Adam ? "adam" : "sgd")
     << "\ndp.collapse_agents=" << (c.dp.collapse_agents ? "true" : "false")
     << "\nfpi.num_iterations=" << c.fpi.num_iterations << "\nfpi.num_environments=" << c.fpi.num_environments
     << "\nfpi.critic_steps_pre=" << c.fpi.critic_steps_pre << "\nfpi.critic_steps_post=" << c.fpi.critic_steps_post
     << "\nfpi.actor_steps=" << c.fpi.actor_steps << "\nfpi.gamma=" << c.fpi.gamma
     << "\nfpi.lambda=" << c.fpi.lambda << "\nfpi.eps0=" << c.fpi.eps0 << "\nfpi.batch=" << c.fpi.batch
     << "\nfpi.eta_v=" << c.fpi.eta_v;
  if (c.fpi.eta_pi) os << "\nfpi.eta_pi=" << *c.fpi.eta_pi;
  os << "\nfpi.eta_eps=" << c.fpi.eta_eps << "\nfpi.kappa=" << c.fpi.kappa
     << "\nfpi.hidden_layers=" << c.fpi.hidden_layers << "\nfpi.hidden_units=" << c.fpi.hidden_units
     << "\nfpi.d_emb=" << c.fpi.d_emb << "\nfpi.actor_states=" << c.fpi.actor_states
     << "\nfpi.refresh_samples=" << c.fpi.refresh_samples
     << "\nfpi.retain_buffer=" << (c.fpi.retain_buffer ? "true" : "false")
     << "\nfpi.eval_count=" << c.fpi.eval_count << "\nbaseline.grid=" << c.baseline.grid
     << "\nbaseline.samples=" << c.baseline.samples << "\nbaseline.item_samples=" << c.baseline.item_samples
     << "\nbaseline.sweeps=" << c.baseline.sweeps << '\n';
  return os.str();
}

inline TestSet canonical_test_set(const ExperimentConfig& c) {
  return make_test_set(c.model(), c.n, c.test_count, c.test_seed);
}

}  // namespace seqmenu
