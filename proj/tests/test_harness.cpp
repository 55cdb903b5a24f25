#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "battopt/config.hpp"
#include "battopt/harness.hpp"
#include "test_support.hpp"

using namespace battopt;
using testing_support::single;
using testing_support::vec;

namespace {

TimeGrid hours(std::size_t steps) { return TimeGrid{steps, 1.0}; }

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(GenerateReference, SinusoidQuarterPoints) {
  const Vector r = generate_reference("sinusoid", hours(4), 1, 1.0);
  ASSERT_EQ(r.size(), 4);
  EXPECT_NEAR(r[0], 0.0, 1e-15);
  EXPECT_NEAR(r[1], 1.0, 1e-15);
  EXPECT_NEAR(r[2], 0.0, 1e-15);
  EXPECT_NEAR(r[3], -1.0, 1e-15);
}

TEST(GenerateReference, SeedDeterminesRandomWalk) {
  const Vector a = generate_reference("random_walk", hours(48), 5, 15.0);
  const Vector b = generate_reference("random_walk", hours(48), 5, 15.0);
  const Vector c = generate_reference("random_walk", hours(48), 6, 15.0);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(GenerateReference, RandomWalkStaysWithinAmplitude) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Vector r = generate_reference("random_walk", hours(200), seed, 15.0);
    EXPECT_LE(r.cwiseAbs().maxCoeff(), 15.0);
  }
}

TEST(GenerateReference, StepAlternatesQuarterBlocks) {
  const Vector r = generate_reference("step", hours(8), 1, 2.0);
  EXPECT_EQ(r, vec({2, 2, -2, -2, 2, 2, -2, -2}));
}

TEST(GenerateReference, RejectsBadInput) {
  EXPECT_THROW(generate_reference("sawtooth", hours(4), 1, 1.0), UnknownKind);
  EXPECT_THROW(generate_reference("sinusoid", hours(4), 1, 0.0), InvalidProblem);
}

TEST(Rmse, ClosedForms) {
  const Vector ref = vec({1, -2, 3});
  EXPECT_DOUBLE_EQ(rmse(ref, ref), 0.0);
  EXPECT_NEAR(rmse(ref, (ref.array() + 2.5).matrix()), 2.5, 1e-15);
  EXPECT_NEAR(rmse(vec({3, 0}), vec({0, 4})), 2.5 * std::sqrt(2.0), 1e-15);
  EXPECT_THROW(rmse(ref, vec({1})), LengthMismatch);
}

TEST(Rmse, IdenticalFleetScalesLinearly) {
  BatterySpec b;
  ScenarioSpec gen;
  gen.kind = "random_walk";
  gen.seed = 3;
  const double base =
      solve_rbd(make_scenario(b, 1, hours(24), gen).problem).rmse;
  ASSERT_GT(base, 0.1);
  for (std::size_t n : {2U, 4U}) {
    const double r = solve_rbd(make_scenario(b, n, hours(24), gen).problem).rmse;
    EXPECT_NEAR(r / base, static_cast<double>(n), 0.01 * static_cast<double>(n));
  }
}

TEST(MakeScenario, FleetReferenceIsScaled) {
  ScenarioSpec gen;
  const Scenario s = make_scenario(BatterySpec{}, 3, hours(4), gen);
  EXPECT_EQ(s.problem.size(), 3U);
  EXPECT_NEAR(s.problem.reference[1], 45.0, 1e-12);
  const Scenario fixed = make_scenario(BatterySpec{}, 2, hours(4), gen, 1e-7, 1.0);
  EXPECT_EQ(fixed.problem.eta, (std::vector<double>{1.0, 1.0}));
}

TEST(MakeScenario, FileReferenceRoundTrips) {
  const std::filesystem::path path = "reference_roundtrip.csv";
  {
    std::ofstream out(path);
    out << "step,pref_kw\n0,1.5\n1,-2.25\n2,0\n";
  }
  ScenarioSpec gen;
  gen.kind = "file";
  gen.file = path;
  const Scenario s = make_scenario(BatterySpec{}, 2, hours(3), gen);
  EXPECT_EQ(s.problem.reference, vec({3.0, -4.5, 0.0}));
  EXPECT_THROW(make_scenario(BatterySpec{}, 1, hours(4), gen), LengthMismatch);
  gen.file = "missing_reference.csv";
  EXPECT_THROW(make_scenario(BatterySpec{}, 1, hours(3), gen), IoError);
  std::filesystem::remove(path);
}

TEST(PlotData, SingleBatteryRunHasTwentyFourRowsAndEightColumns) {
  ScenarioSpec gen;
  const Scenario sc = make_scenario(BatterySpec{}, 1, hours(24), gen);
  const DispatchResult r = solve_rbd(sc.problem);
  std::ostringstream os;
  write_plotdata(os, r, sc.problem, 0);
  std::istringstream is(os.str());
  const CsvTable t = read_csv(is);
  EXPECT_EQ(t.header.size(), 8U);
  EXPECT_EQ(t.cells.size(), 24U);
  std::istringstream again(os.str());
  const PlotData d = read_plotdata(again);
  for (std::size_t k = 0; k < 24; ++k) {
    EXPECT_LE(d.e_relaxed[k], d.e_realized[k] + 1e-9) << "step " << k;
    EXPECT_LE(d.e_realized[k], d.e_simplified[k] + 1e-9) << "step " << k;
  }
}

TEST(PlotData, ZeroDispatchKeepsInitialEnergy) {
  const auto p = single(Vector::Zero(6));
  const DispatchResult r = solve_rbd(p);
  std::ostringstream os;
  write_plotdata(os, r, p, 0);
  std::istringstream is(os.str());
  const PlotData d = read_plotdata(is);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_NEAR(d.e_relaxed[k], 30.0, 1e-9);
    EXPECT_NEAR(d.e_realized[k], 30.0, 1e-9);
    EXPECT_NEAR(d.e_simplified[k], 30.0, 1e-9);
  }
}

TEST(PlotData, RoundTripKeepsNineDecimals) {
  std::mt19937_64 rng(5);
  const auto p = testing_support::random_problem(rng, 1, 10);
  const DispatchResult r = solve_rbd(p);
  std::ostringstream os;
  write_plotdata(os, r, p, 0);
  std::istringstream is(os.str());
  const PlotData d = read_plotdata(is);
  for (Eigen::Index k = 0; k < 10; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    EXPECT_NEAR(d.pb[kk], r.nets[0].pb[k], 1e-9);
    EXPECT_NEAR(d.pc[kk], r.schedules[0].pc[k], 1e-9);
    EXPECT_NEAR(d.e_simplified[kk], r.simplified[0].e[k], 1e-9);
  }
}

TEST(PlotData, EmitWritesOneFilePerBattery) {
  std::mt19937_64 rng(7);
  const auto p = testing_support::random_problem(rng, 3, 6);
  const DispatchResult r = solve_rbd(p);
  const auto paths = emit_plotdata(r, p, "plots/run.csv");
  ASSERT_EQ(paths.size(), 3U);
  EXPECT_EQ(paths[2], std::filesystem::path("plots/run_b2.csv"));
  for (std::size_t i = 0; i < 3; ++i) {
    std::ifstream in(paths[i]);
    const PlotData d = read_plotdata(in);
    EXPECT_TRUE(verify_plotdata(d, p.batteries[i], p.grid, realizability_tol(p.batteries[i])).pass);
  }
  std::filesystem::remove_all("plots");
  EXPECT_EQ(plotdata_path("x.csv", 0, 1), std::filesystem::path("x.csv"));
}

TEST(VerifyPlotData, FlagsTamperedFiles) {
  const auto p = single(vec({5, 5, -3, 0}));
  const DispatchResult r = solve_rbd(p);
  std::ostringstream os;
  write_plotdata(os, r, p, 0);
  std::istringstream is(os.str());
  const PlotData good = read_plotdata(is);
  EXPECT_TRUE(verify_plotdata(good, p.batteries[0], p.grid, 1e-6).pass);

  PlotData edited = good;
  edited.e_realized[2] += 0.01;
  EXPECT_FALSE(verify_plotdata(edited, p.batteries[0], p.grid, 1e-6).pass);

  // Charging at full power from nearly full overflows the battery.
  BatterySpec full;
  full.e0 = 59.0;
  PlotData overflow = good;
  overflow.pb.assign(4, 15.0);
  const auto v = verify_plotdata(overflow, full, p.grid, 1e-6);
  EXPECT_FALSE(v.pass);
  EXPECT_FALSE(v.limits.pass);
  EXPECT_THROW(verify_plotdata(good, full, hours(5), 1e-6), LengthMismatch);
}

TEST(Config, DefaultsMatchTheSingleBatteryExperiment) {
  const ExperimentConfig cfg = parse_config(nlohmann::json::object());
  EXPECT_EQ(cfg.bench.battery, BatterySpec{});
  EXPECT_EQ(cfg.bench.grid.steps, 24U);
  EXPECT_DOUBLE_EQ(cfg.bench.grid.dt, 1.0);
  EXPECT_DOUBLE_EQ(cfg.bench.battery.e0, 30.0);
  EXPECT_FALSE(cfg.bench.eta.has_value());
}

TEST(Config, ParsesSections) {
  const auto j = nlohmann::json::parse(R"({
    "battery": {"p_max": 10, "e_max": 40, "e0": 20},
    "fleet_size": 3,
    "grid": {"steps": 12, "dt": 0.5},
    "scenario": {"kind": "step", "seed": 9, "amplitude": 4},
    "eta": 0.99,
    "solver": {"max_iter": 500, "polish": false},
    "bnb": {"node_limit": 50, "time_limit_s": 2},
    "benchmark": {"fleet_sizes": [1, 2], "methods": ["rbd"]}
  })");
  const ExperimentConfig cfg = parse_config(j);
  EXPECT_DOUBLE_EQ(cfg.bench.battery.p_max, 10.0);
  EXPECT_DOUBLE_EQ(cfg.bench.battery.eta_c, 0.95);
  EXPECT_EQ(cfg.fleet_size, 3U);
  EXPECT_DOUBLE_EQ(cfg.bench.grid.dt, 0.5);
  EXPECT_EQ(cfg.bench.scenario.kind, "step");
  EXPECT_EQ(cfg.bench.eta, 0.99);
  EXPECT_EQ(cfg.bench.solver.max_iter, 500);
  EXPECT_FALSE(cfg.bench.bnb.qp.polish);
  EXPECT_EQ(cfg.bench.bnb.node_limit, 50U);
  EXPECT_EQ(cfg.bench.fleet_sizes, (std::vector<std::size_t>{1, 2}));

  const DispatchProblem p = cfg.dispatch_problem(std::uint64_t{4});
  EXPECT_EQ(p.size(), 3U);
  EXPECT_NEAR(p.reference[0], 12.0, 1e-12);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  using nlohmann::json;
  EXPECT_THROW(parse_config(json::parse(R"({"batery": {}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"battery": {"capacity": 5}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"solver": {"tolerance": 1}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"battery": {"e0": 100}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"grid": {"steps": "many"}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"eta": "asymmetric"})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"benchmark": {"methods": ["nlp"]}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"solver": {"alpha": 3}})")), ConfigError);
}

TEST(Config, LoadsShippedDefault) {
  const ExperimentConfig cfg = load_config(BATTOPT_SOURCE_DIR "/configs/default.json");
  EXPECT_EQ(cfg.bench.scenario.kind, "sinusoid");
  EXPECT_EQ(cfg.bench.methods, (std::vector<std::string>{"rbd", "mip_bnb"}));
  EXPECT_THROW(load_config("no_such_config.json"), IoError);
}

TEST(Benchmark, DeskScaleRunGivesSixVerifiedRows) {
  BenchmarkConfig cfg;
  cfg.grid = hours(12);
  cfg.scenario.kind = "random_walk";
  cfg.fleet_sizes = {1, 2, 4};
  cfg.methods = {"rbd", "mip_bnb"};
  const auto rows = run_benchmark(cfg);
  ASSERT_EQ(rows.size(), 6U);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_TRUE(rows[i].realizable) << rows[i].method << " N=" << rows[i].n_batteries;
    EXPECT_EQ(rows[i].n_batteries, std::vector<std::size_t>({1, 1, 2, 2, 4, 4})[i]);
    EXPECT_EQ(rows[i].method, i % 2 == 0 ? "mip_bnb" : "rbd");
  }
  std::ostringstream csv;
  write_benchmark_csv(csv, rows);
  EXPECT_EQ(count_lines(csv.str()), 7U);
  const std::string table = render_benchmark_table(rows);
  EXPECT_EQ(count_lines(table), 7U);
}

TEST(Benchmark, SingleMethodSingleRow) {
  BenchmarkConfig cfg;
  cfg.fleet_sizes = {1};
  cfg.methods = {"rbd"};
  const auto rows = run_benchmark(cfg);
  ASSERT_EQ(rows.size(), 1U);
  EXPECT_EQ(rows[0].status, "optimal");
  EXPECT_TRUE(rows[0].realizable);
  EXPECT_NEAR(rows[0].rmse_kw, solve_rbd(make_scenario(cfg.battery, 1, cfg.grid, cfg.scenario).problem).rmse,
              1e-9);
}

TEST(Benchmark, OracleBeyondLimitIsAnErrorRow) {
  BenchmarkConfig cfg;
  cfg.grid = hours(24);
  cfg.fleet_sizes = {1, 2};
  cfg.methods = {"oracle", "rbd"};
  const auto rows = run_benchmark(cfg);
  ASSERT_EQ(rows.size(), 4U);
  for (const auto& r : rows) {
    if (r.method == "oracle") {
      EXPECT_EQ(r.status.rfind("error: TooLarge", 0), 0U) << r.status;
      EXPECT_FALSE(r.realizable);
    } else {
      EXPECT_EQ(r.status, "optimal");
    }
  }
}

TEST(Benchmark, UnknownMethodIsAnErrorRow) {
  BenchmarkConfig cfg;
  const auto row = run_benchmark_row(cfg, "nlp", 1);
  EXPECT_EQ(row.status.rfind("error: UnknownKind", 0), 0U);
}
