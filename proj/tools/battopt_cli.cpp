// battopt command-line front end.
//
//   battopt simulate  --model relaxed --schedule sched.csv [--config cfg.json] [--out traj.csv]
//   battopt dispatch  --config cfg.json [--method rbd|mip|oracle] [--out plot.csv] [--seed N]
//   battopt benchmark --config cfg.json [--csv bench.csv] [--seed N]
//   battopt verify    --input plot.csv [--config cfg.json] [--battery I]
//
// Exit status: 0 success, 2 realizability failure, 1 any other error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "battopt/battopt.hpp"

namespace {

using namespace battopt;

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kUnrealizable = 2;

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

Vector column(const CsvTable& t, const char* name) {
  const auto v = t.numbers(name);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct SimulateArgs {
  std::string config;
  std::string model = "standard";
  std::string schedule;
  std::string out;
  std::optional<double> eta;
  std::optional<double> dt;
};

int run_simulate(const SimulateArgs& a) {
  const ExperimentConfig cfg = config_or_default(a.config);
  const BatterySpec spec = cfg.fleet.empty() ? cfg.bench.battery : cfg.fleet.front();
  const auto kind = parse_model_kind(a.model);
  if (!kind) throw ConfigError("unknown model '" + a.model + "'");

  std::ifstream in(a.schedule);
  if (!in) throw IoError("cannot open " + a.schedule);
  const CsvTable table = read_csv(in);
  TimeGrid grid{table.cells.size(), a.dt.value_or(cfg.bench.grid.dt)};
  grid.validate();

  SocTrajectory traj;
  if (*kind == ModelKind::simplified) {
    NetSchedule net{table.has_column("pb_kw") ? column(table, "pb_kw")
                                              : Vector(column(table, "pc_kw") - column(table, "pd_kw"))};
    const double eta = a.eta.value_or(cfg.bench.eta.value_or(symmetric_eta(spec).eta));
    traj = simulate_simplified(spec, grid, net, eta);
  } else {
    // A net-power file is split into its complementary charge/discharge parts.
    const Schedule s = table.has_column("pc_kw")
                           ? Schedule{column(table, "pc_kw"), column(table, "pd_kw")}
                           : split_net(spec, NetSchedule{column(table, "pb_kw")});
    traj = *kind == ModelKind::standard ? simulate_standard(spec, grid, s)
                                        : simulate_relaxed(spec, grid, s);
  }
  if (a.out.empty()) {
    write_trajectory_csv(std::cout, traj, grid);
  } else {
    auto out = open_out(a.out);
    write_trajectory_csv(out, traj, grid);
  }
  const LimitReport lim = check_soc_limits(traj, spec, realizability_tol(spec));
  if (!lim.pass) {
    std::cerr << "SoC leaves [0, " << spec.e_max << "] kWh at step " << *lim.first_violation
              << " (excursion " << lim.worst_excursion << " kWh)\n";
  }
  return kOk;
}

struct DispatchArgs {
  std::string config;
  std::string method = "rbd";
  std::string out;
  std::string trace;
  std::optional<std::uint64_t> seed;
};

int run_dispatch(const DispatchArgs& a) {
  const ExperimentConfig cfg = config_or_default(a.config);
  const DispatchProblem problem = cfg.dispatch_problem(a.seed);

  DispatchResult result;
  std::optional<BnbResult> exact;
  if (a.method == "rbd") {
    result = solve_rbd(problem, cfg.bench.solver);
  } else if (a.method == "mip") {
    BnbSettings bs = cfg.bench.bnb;
    bs.trace = !a.trace.empty();
    exact = solve_exact_bnb(problem, bs);
    result = exact->dispatch;
  } else if (a.method == "oracle") {
    exact = enumerate_exact_small(problem, cfg.bench.bnb.qp);
    result = exact->dispatch;
  } else {
    throw ConfigError("unknown method '" + a.method + "'");
  }
  const RealizabilityReport rep = verify_realizability(result, problem);

  std::cout << std::setprecision(6) << "method      " << a.method << "\n"
            << "batteries   " << problem.size() << "\n"
            << "steps       " << problem.grid.steps << "\n"
            << "objective   " << result.objective << " kW^2\n"
            << "rmse        " << result.rmse << " kW\n"
            << "solve_time  " << std::fixed << std::setprecision(3) << result.stats.wall_time_s
            << " s\n"
            << std::defaultfloat << std::setprecision(6);
  if (exact) {
    std::cout << "status      " << to_string(exact->status) << "\n"
              << "nodes       " << exact->nodes_explored << "\n"
              << "gap         " << exact->gap << "\n";
  } else {
    std::cout << "status      " << to_string(result.stats.status) << "\n"
              << "iterations  " << result.stats.iterations << "\n";
  }
  for (std::size_t i = 0; i < rep.batteries.size(); ++i) {
    const auto& b = rep.batteries[i];
    std::cout << "battery " << i << "   " << (b.pass ? "realizable" : "NOT realizable")
              << "  worst_lower=" << b.limits.worst_lower
              << "  worst_upper=" << b.limits.worst_upper
              << "  sandwich_violation=" << b.sandwich_violation << "\n";
  }
  if (!a.out.empty()) {
    for (const auto& p : emit_plotdata(result, problem, a.out)) std::cout << "wrote " << p.string() << "\n";
  }
  if (!a.trace.empty() && exact) {
    auto out = open_out(a.trace);
    write_trace_csv(out, exact->trace);
    std::cout << "wrote " << a.trace << "\n";
  }
  return rep.pass ? kOk : kUnrealizable;
}

struct BenchmarkArgs {
  std::string config;
  std::string csv;
  std::optional<std::uint64_t> seed;
};

int run_benchmark_cmd(const BenchmarkArgs& a) {
  ExperimentConfig cfg = config_or_default(a.config);
  if (a.seed) cfg.bench.scenario.seed = *a.seed;
  const auto rows = run_benchmark(cfg.bench);
  std::cout << render_benchmark_table(rows);
  if (!a.csv.empty()) {
    auto out = open_out(a.csv);
    write_benchmark_csv(out, rows);
    std::cout << "wrote " << a.csv << "\n";
  }
  bool realizable = true;
  bool failed = false;
  for (const auto& r : rows) {
    if (r.status == "unrealizable") realizable = false;
    if (r.status.rfind("error", 0) == 0 && r.method != "oracle") failed = true;
  }
  if (!realizable) return kUnrealizable;
  return failed ? kError : kOk;
}

struct VerifyArgs {
  std::string config;
  std::string input;
  std::size_t battery = 0;
  std::optional<double> tol;
};

int run_verify(const VerifyArgs& a) {
  const ExperimentConfig cfg = config_or_default(a.config);
  BatterySpec spec = cfg.bench.battery;
  if (!cfg.fleet.empty()) spec = cfg.fleet.at(a.battery);
  std::ifstream in(a.input);
  if (!in) throw IoError("cannot open " + a.input);
  const PlotData data = read_plotdata(in);
  const TimeGrid grid{data.pb.size(), cfg.bench.grid.dt};
  grid.validate();
  const PlotVerification v = verify_plotdata(data, spec, grid, a.tol.value_or(realizability_tol(spec)));
  std::cout << (v.pass ? "PASS" : "FAIL") << "  worst_lower=" << v.limits.worst_lower
            << "  worst_upper=" << v.limits.worst_upper
            << "  realized_mismatch=" << v.realized_mismatch
            << "  sandwich_violation=" << v.sandwich_violation << "\n";
  return v.pass ? kOk : kUnrealizable;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Battery dispatch with realizability-certified linear models"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate a schedule CSV through one battery model");
  s->add_option("--config", sim.config, "Experiment config (battery and dt)");
  s->add_option("--model", sim.model, "standard | relaxed | simplified")
      ->check(CLI::IsMember({"standard", "relaxed", "simplified"}));
  s->add_option("--schedule", sim.schedule, "CSV with pc_kw,pd_kw (or pb_kw)")->required();
  s->add_option("--eta", sim.eta, "Net efficiency for the simplified model");
  s->add_option("--dt", sim.dt, "Step width in hours");
  s->add_option("--out", sim.out, "Trajectory CSV (stdout when omitted)");

  DispatchArgs dis;
  auto* d = app.add_subcommand("dispatch", "Solve one dispatch problem and certify it");
  d->add_option("--config", dis.config, "Experiment config");
  d->add_option("--method", dis.method, "rbd | mip | oracle")
      ->check(CLI::IsMember({"rbd", "mip", "oracle"}));
  d->add_option("--out", dis.out, "Plot-data CSV path (one file per battery)");
  d->add_option("--trace", dis.trace, "Branch-and-bound node trace CSV (mip only)");
  d->add_option("--seed", dis.seed, "Scenario seed");

  BenchmarkArgs ben;
  auto* b = app.add_subcommand("benchmark", "Compare methods across fleet sizes");
  b->add_option("--config", ben.config, "Experiment config");
  b->add_option("--csv", ben.csv, "Benchmark CSV path");
  b->add_option("--seed", ben.seed, "Scenario seed");

  VerifyArgs ver;
  auto* v = app.add_subcommand("verify", "Check a plot-data CSV for realizability");
  v->add_option("--input", ver.input, "Plot-data CSV")->required();
  v->add_option("--config", ver.config, "Experiment config for the battery");
  v->add_option("--battery", ver.battery, "Fleet index when the config lists a fleet");
  v->add_option("--tol", ver.tol, "SoC tolerance, kWh");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kError;
  }

  try {
    if (s->parsed()) return run_simulate(sim);
    if (d->parsed()) return run_dispatch(dis);
    if (b->parsed()) return run_benchmark_cmd(ben);
    if (v->parsed()) return run_verify(ver);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
