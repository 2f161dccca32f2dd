#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "seqmenu/harness.hpp"

using namespace seqmenu;

namespace {

RunRecord record(char setting, const std::string& method, double revenue, const std::string& ts) {
  RunRecord r;
  r.timestamp = ts;
  r.setting = setting;
  r.n = 5;
  r.m = 5;
  r.menu_family = "full";
  r.method = method;
  r.revenue = revenue;
  r.std_error = 0.01;
  r.episodes = 10000;
  r.seed = 1;
  r.config = "n=5;m=5";
  return r;
}

ExperimentConfig small(Family f, int n, int m) {
  ExperimentConfig c;
  c.setting = f;
  c.n = n;
  c.m = m;
  c.test_count = 1000;
  c.baseline.samples = 20000;
  return c;
}

class TempDir {
public:
  explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& f) const { return (path_ / f).string(); }

private:
  std::filesystem::path path_;
};

}  // namespace

TEST(Method, Names) {
  for (Method m : {Method::Dp, Method::DpSym, Method::Fpi, Method::ItemWise, Method::BundleWise})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("ppo"), ConfigError);
}

TEST(Method, Constraints) {
  auto c = small(Family::UnitDemand, 5, 5);
  EXPECT_THROW(check_method(c, Method::BundleWise), ConfigError);
  EXPECT_NO_THROW(check_method(c, Method::DpSym));
  c.setting = Family::AdditiveAsymmetric;
  EXPECT_THROW(check_method(c, Method::DpSym), ConfigError);
  c.menu_family = MenuFamily::EntryFee;
  EXPECT_THROW(check_method(c, Method::Dp), ConfigError);
  EXPECT_NO_THROW(check_method(c, Method::Fpi));
}

TEST(RunRecord, CsvRoundTrip) {
  auto r = record('D', "dp", 3.0956, "2026-01-02T03:04:05Z");
  r.k = 3;
  r.note = "has, a comma and \"quotes\"";
  std::stringstream ss;
  ss << run_record_header() << '\n';
  write_run_record(ss, r);
  const auto back = read_run_records(ss);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].setting, 'D');
  EXPECT_EQ(back[0].k, 3);
  EXPECT_EQ(back[0].method, "dp");
  EXPECT_DOUBLE_EQ(back[0].revenue, 3.0956);
  EXPECT_EQ(back[0].note, r.note);
  EXPECT_EQ(back[0].config, r.config);
  EXPECT_EQ(back[0].timestamp, r.timestamp);
}

TEST(RunRecord, RejectsBadInput) {
  std::stringstream wrong("not,a,header\n");
  EXPECT_THROW(read_run_records(wrong), FormatError);
  std::stringstream short_row(std::string(run_record_header()) + "\n1,2,3\n");
  EXPECT_THROW(read_run_records(short_row), FormatError);
}

TEST(Table, OneRowPerSetting) {
  std::vector<RunRecord> recs;
  for (const char* m : {"item-wise", "bundle-wise", "dp", "dp-sym", "fpi"}) recs.push_back(record('A', m, 3.0, "t1"));
  const auto t = make_table(recs);
  EXPECT_EQ(t.row_keys, std::vector<std::string>{"A 5x5"});
  EXPECT_EQ(t.methods.size(), 5u);
  EXPECT_TRUE(t.warnings.empty());
}

TEST(Table, MissingCellIsDash) {
  const auto t = make_table({record('C', "item-wise", 2.42, "t1"), record('C', "dp", 2.44, "t1")});
  std::ostringstream csv;
  write_table_csv(csv, t);
  EXPECT_EQ(csv.str(), "setting,item-wise,bundle-wise,dp,dp-sym,fpi\nC 5x5,2.42,—,2.44,—,—\n");
  std::ostringstream text;
  write_table_text(text, t);
  EXPECT_NE(text.str().find("2.420"), std::string::npos);
  EXPECT_NE(text.str().find("—"), std::string::npos);
}

TEST(Table, DuplicateKeepsLatestAndWarns) {
  const auto t = make_table({record('A', "dp", 3.10, "2026-01-02T00:00:00Z"), record('A', "dp", 3.13, "2026-01-03T00:00:00Z"),
                             record('A', "dp", 3.00, "2026-01-01T00:00:00Z")});
  EXPECT_DOUBLE_EQ(t.cells.at("A 5x5").at("dp").revenue, 3.13);
  EXPECT_EQ(t.warnings.size(), 2u);
}

TEST(Table, PureFunctionOfRecords) {
  const std::vector<RunRecord> recs{record('B', "dp", 1.85, "t1"), record('A', "fpi", 3.11, "t2")};
  std::ostringstream a, b;
  write_table_csv(a, make_table(recs));
  write_table_csv(b, make_table(recs));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(make_table(recs).row_keys, (std::vector<std::string>{"A 5x5", "B 5x5"}));
}

TEST(Selfcheck, CleanBuildPasses) {
  const auto checks = selfcheck();
  ASSERT_FALSE(checks.empty());
  for (const auto& c : checks) {
    EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
    EXPECT_GE(c.seconds, 0.0);
  }
  std::ostringstream os;
  write_check_report(os, checks);
  EXPECT_EQ(os.str().rfind("check,result,seconds,detail\n", 0), 0u);
}

TEST(Selfcheck, CorruptedGradientIsCaught) {
  OracleFaults f;
  f.corrupt_gradient = true;
  EXPECT_FALSE(check_pi_loss_gradient(10, 1, f).pass);
  EXPECT_FALSE(check_nn_backward(10, 1, f).pass);
  EXPECT_FALSE(check_entry_fee_gradient(10, 1, f).pass);
}

TEST(Run, BaselinesWriteCheckpointsThatReEvaluate) {
  TempDir dir("seqmenu_test_run");
  for (Method m : {Method::ItemWise, Method::BundleWise, Method::Dp, Method::DpSym}) {
    const auto c = small(Family::AdditiveUniform, 2, 2);
    const auto out = run(c, m, dir.str());
    ASSERT_FALSE(out.checkpoint.empty()) << to_string(m);
    EXPECT_EQ(out.record.method, to_string(m));
    EXPECT_EQ(out.record.episodes, 1000u);
    EXPECT_EQ(evaluate_checkpoint(c, out.checkpoint).mean, out.record.revenue) << to_string(m);
  }
  const auto recs = read_run_records(dir / "runs.csv");
  EXPECT_EQ(recs.size(), 4u);
  EXPECT_THROW(evaluate_checkpoint(small(Family::AdditiveUniform, 3, 2), dir / "A_2x2_dp.sqdp"), ConfigError);
}

TEST(Run, ReproducibleRevenue) {
  const auto c = small(Family::SubsetSqrt, 2, 3);
  const auto a = run(c, Method::Dp, "");
  const auto b = run(c, Method::Dp, "");
  EXPECT_EQ(a.record.revenue, b.record.revenue);
  EXPECT_EQ(a.record.config, b.record.config);
  EXPECT_TRUE(a.checkpoint.empty());
}

TEST(Run, RejectsUnsupportedPair) {
  EXPECT_THROW(run(small(Family::UnitDemand, 2, 2), Method::BundleWise, ""), ConfigError);
}

TEST(PriceFiles, RoundTrip) {
  TempDir dir("seqmenu_test_prices");
  const auto c = small(Family::AdditiveAsymmetric, 3, 3);
  const auto item = solve_item_wise(c);
  save_item_prices(item, dir / "items.csv");
  const auto back = load_item_prices(dir / "items.csv", c.model());
  const auto ts = canonical_test_set(c);
  EXPECT_EQ(evaluate_policy(back, ts).mean, evaluate_policy(item, ts).mean);

  const auto bundle = solve_bundle_wise(c);
  save_bundle_prices(bundle, dir / "bundle.csv");
  const auto b2 = load_bundle_prices(dir / "bundle.csv");
  EXPECT_EQ(b2.stage_prices, bundle.stage_prices);
  EXPECT_THROW(load_bundle_prices(dir / "items.csv"), FormatError);
}
