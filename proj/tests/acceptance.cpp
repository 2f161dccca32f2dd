// Acceptance runs: one pass/fail line per criterion.
//   seqmenu_acceptance --criterion N [--threads T]
// Benchmark configs are read from the repository's configs/ directory.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "seqmenu/seqmenu.hpp"

using namespace seqmenu;

namespace {

int g_threads = 1;

ExperimentConfig benchmark(const std::string& name) {
  return load_config((std::filesystem::path(SEQMENU_CONFIG_DIR) / (name + ".cfg")).string());
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    pass = pass && ok;
    if (detail.tellp() > 0) detail << "; ";
    detail << what << (ok ? "" : " [FAIL]");
  }
};

std::string f4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

RunRecord solve(const ExperimentConfig& c, Method m) {
  std::cerr << "running " << to_string(m) << " on " << family_letter(c.setting) << ' ' << c.n << 'x' << c.m << " ("
            << to_string(c.menu_family) << ")" << std::endl;
  RunOptions opt;
  opt.threads = g_threads;
  opt.log = &std::cerr;
  const auto r = run(c, m, "", opt).record;
  std::cerr << "  revenue " << f4(r.revenue) << " +- " << f4(r.std_error) << " in " << r.wall_seconds << " s"
            << std::endl;
  return r;
}

/// |value - target| <= tol
void near(Outcome& o, const std::string& label, double value, double target, double tol) {
  o.expect(std::abs(value - target) <= tol, label + " " + f4(value) + " vs " + f4(target) + " +- " + f4(tol));
}

void at_least(Outcome& o, const std::string& label, double value, double floor) {
  o.expect(value >= floor, label + " " + f4(value) + " >= " + f4(floor));
}

void check(Outcome& o, const CheckResult& r) {
  o.expect(r.pass, r.name + ": " + r.detail);
}

Outcome criterion(int n) {
  Outcome o;
  switch (n) {
    case 1: {
      const auto c = benchmark("A_5x5");
      near(o, "item-wise", solve(c, Method::ItemWise).revenue, 3.00, 0.03);
      near(o, "bundle-wise", solve(c, Method::BundleWise).revenue, 2.58, 0.03);
      const double dp = solve(c, Method::Dp).revenue;
      at_least(o, "dp", dp, 3.10);
      near(o, "dp", dp, 3.13, 0.04);
      at_least(o, "fpi", solve(c, Method::Fpi).revenue, 3.05);
      break;
    }
    case 2: {
      const auto c = benchmark("B_5x5");
      near(o, "item-wise", solve(c, Method::ItemWise).revenue, 1.80, 0.03);
      near(o, "dp", solve(c, Method::Dp).revenue, 1.87, 0.04);
      break;
    }
    case 3: {
      const auto c = benchmark("C_5x5");
      near(o, "item-wise", solve(c, Method::ItemWise).revenue, 2.43, 0.03);
      near(o, "dp", solve(c, Method::Dp).revenue, 2.43, 0.03);
      near(o, "fpi", solve(c, Method::Fpi).revenue, 2.43, 0.03);
      break;
    }
    case 4: {
      const auto c = benchmark("D_5x5_k3");
      const auto options = enumerate_bundles(ItemSet::full(c.m), c.menu_cap()).size();
      o.expect(options == 26, "root menu options " + std::to_string(options) + " == 26");
      near(o, "dp", solve(c, Method::Dp).revenue, 3.11, 0.04);
      break;
    }
    case 5: {
      const auto c = benchmark("E_10x10");
      const double item = solve(c, Method::ItemWise).revenue;
      const double dp = solve(c, Method::Dp).revenue;
      at_least(o, "dp", dp, 6.70);
      at_least(o, "dp - item-wise", dp - item, 0.5);
      break;
    }
    case 6:
      check(o, check_single_posted_price());
      check(o, check_two_bidder_root());
      check(o, check_td_lambda_identities());
      break;
    case 7:
      check(o, check_pi_loss_gradient(60));
      check(o, check_nn_backward(60));
      check(o, check_entry_fee_gradient(60));
      break;
    case 8:
      check(o, check_best_bundle(10000));
      check(o, check_best_prefix_bundle(10000));
      break;
    case 9:
      check(o, check_dsic_ir(100000, 20000));
      break;
    case 10: {
      const auto c = benchmark("A_20x20_entry_fee");
      const auto item = solve(c, Method::ItemWise);
      near(o, "item-wise", item.revenue, 16.42, 0.1);
      const auto fpi = solve(c, Method::Fpi);
      at_least(o, "fpi", fpi.revenue, item.revenue);
      o.expect(fpi.wall_seconds < 3600.0, "fpi wall time " + f4(fpi.wall_seconds) + " s < 3600 s");
      break;
    }
    default:
      throw ConfigError("criterion must be 1..10");
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int which = 0;
  app.add_option("--criterion", which, "criterion number (1-10)")->required()->check(CLI::Range(1, 10));
  app.add_option("--threads", g_threads, "worker threads; 0 = SEQMENU_THREADS or 1");
  CLI11_PARSE(app, argc, argv);
  if (g_threads <= 0) g_threads = default_threads();

  const auto t0 = std::chrono::steady_clock::now();
  try {
    const Outcome o = criterion(which);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << which << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail.str() << ") ["
              << f4(secs) << " s]" << std::endl;
    return o.pass ? 0 : 1;
  } catch (const std::exception& e) {
    std::cout << "criterion " << which << ": FAIL (error: " << e.what() << ")" << std::endl;
    return 1;
  }
}
