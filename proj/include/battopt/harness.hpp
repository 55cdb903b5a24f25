#pragma once

// Scenario generation, benchmark orchestration and plot-data output.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "battopt/battery.hpp"
#include "battopt/bnb.hpp"
#include "battopt/csv.hpp"
#include "battopt/dispatch.hpp"
#include "battopt/errors.hpp"
#include "battopt/metrics.hpp"
#include "battopt/qp.hpp"

namespace battopt {

/// Synthetic per-battery reference. Kinds: sinusoid, random_walk, step.
inline Vector generate_reference(std::string_view kind, const TimeGrid& grid, std::uint64_t seed,
                                 double amplitude) {
  grid.validate();
  if (!(amplitude > 0.0)) throw InvalidProblem("amplitude must be positive");
  const auto t = grid.size();
  Vector out(t);
  if (kind == "sinusoid") {
    for (Eigen::Index k = 0; k < t; ++k) {
      out[k] = amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(k) /
                                    static_cast<double>(t));
    }
  } else if (kind == "random_walk") {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> start(-amplitude, amplitude);
    std::normal_distribution<double> step(0.0, 0.25 * amplitude);
    double x = start(rng);
    for (Eigen::Index k = 0; k < t; ++k) {
      out[k] = x;
      x = std::clamp(x + step(rng), -amplitude, amplitude);
    }
  } else if (kind == "step") {
    const Eigen::Index block = std::max<Eigen::Index>(1, t / 4);
    for (Eigen::Index k = 0; k < t; ++k) out[k] = (k / block) % 2 == 0 ? amplitude : -amplitude;
  } else {
    throw UnknownKind("reference kind '" + std::string(kind) + "'");
  }
  return out;
}

/// Reads a reference from a CSV with a pref_kw column.
inline Vector load_reference(const std::filesystem::path& path, const TimeGrid& grid) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const auto values = read_csv(in).numbers("pref_kw");
  if (values.size() != grid.steps) {
    throw LengthMismatch("reference file has " + std::to_string(values.size()) + " rows, T = " +
                         std::to_string(grid.steps));
  }
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

struct ScenarioSpec {
  std::string kind = "sinusoid";
  std::uint64_t seed = 1;
  double amplitude = 15.0;  // kW per battery
  std::filesystem::path file;
};

struct Scenario {
  DispatchProblem problem;
  ScenarioSpec generator;
};

/// Fleet of `n` copies of `battery` tracking n times the per-battery reference.
inline Scenario make_scenario(const BatterySpec& battery, std::size_t n, const TimeGrid& grid,
                              const ScenarioSpec& gen, double regularization_eps = 1e-7,
                              std::optional<double> eta = std::nullopt) {
  Scenario s;
  s.generator = gen;
  s.problem.batteries.assign(n, battery);
  s.problem.grid = grid;
  const Vector base = gen.kind == "file" ? load_reference(gen.file, grid)
                                         : generate_reference(gen.kind, grid, gen.seed,
                                                              gen.amplitude);
  s.problem.reference = static_cast<double>(n) * base;
  s.problem.regularization_eps = regularization_eps;
  if (eta) s.problem.eta.assign(n, *eta);
  s.problem.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Plot data

inline std::filesystem::path plotdata_path(const std::filesystem::path& path, std::size_t battery,
                                           std::size_t fleet) {
  if (fleet == 1) return path;
  std::filesystem::path p = path;
  p.replace_filename(path.stem().string() + "_b" + std::to_string(battery) +
                     path.extension().string());
  return p;
}

/// One row per step: step, pref_kw, pb_kw, pc_kw, pd_kw, e_relaxed_kwh,
/// e_realized_kwh, e_simplified_kwh. pref_kw is the battery's share of the
/// fleet reference.
inline void write_plotdata(std::ostream& os, const DispatchResult& result,
                           const DispatchProblem& problem, std::size_t battery) {
  const auto& spec = problem.batteries.at(battery);
  const auto& sched = result.schedules.at(battery);
  const auto& net = result.nets.at(battery);
  const Vector realized =
      simulate_standard(spec, problem.grid, split_net(spec, net)).e;
  const double share = 1.0 / static_cast<double>(problem.size());
  os << "step,pref_kw,pb_kw,pc_kw,pd_kw,e_relaxed_kwh,e_realized_kwh,e_simplified_kwh\n";
  std::ostringstream row;
  row.setf(std::ios::fixed);
  row.precision(9);
  for (Eigen::Index k = 0; k < problem.grid.size(); ++k) {
    row.str("");
    row << k << ',' << share * problem.reference[k] << ',' << net.pb[k] << ',' << sched.pc[k]
        << ',' << sched.pd[k] << ',' << result.relaxed.at(battery).e[k] << ',' << realized[k]
        << ',' << result.simplified.at(battery).e[k] << '\n';
    os << row.str();
  }
}

/// Writes one CSV per battery; returns the paths written.
inline std::vector<std::filesystem::path> emit_plotdata(const DispatchResult& result,
                                                        const DispatchProblem& problem,
                                                        const std::filesystem::path& path) {
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const auto p = plotdata_path(path, i, problem.size());
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    write_plotdata(out, result, problem, i);
    if (!out) throw IoError("write failed for " + p.string());
    written.push_back(p);
  }
  return written;
}

struct PlotData {
  std::vector<double> pref, pb, pc, pd, e_relaxed, e_realized, e_simplified;
};

inline PlotData read_plotdata(std::istream& is) {
  const CsvTable t = read_csv(is);
  return {t.numbers("pref_kw"),       t.numbers("pb_kw"),          t.numbers("pc_kw"),
          t.numbers("pd_kw"),         t.numbers("e_relaxed_kwh"),  t.numbers("e_realized_kwh"),
          t.numbers("e_simplified_kwh")};
}

struct PlotVerification {
  bool pass = true;
  LimitReport limits;
  /// Largest |e_realized in file - e_realized recomputed|, kWh.
  double realized_mismatch = 0.0;
  double sandwich_violation = 0.0;
};

/// Re-derives the realized trajectory from the file's net power and checks
/// SoC limits, the stored realized column and the envelope ordering.
inline PlotVerification verify_plotdata(const PlotData& data, const BatterySpec& spec,
                                        const TimeGrid& grid, double tol) {
  if (data.pb.size() != grid.steps) throw LengthMismatch("plot data length differs from T");
  const Vector pb = Eigen::Map<const Vector>(data.pb.data(), grid.size());
  const auto col = [&](const std::vector<double>& v) {
    return Vector(Eigen::Map<const Vector>(v.data(), grid.size()));
  };
  PlotVerification v;
  const SocTrajectory realized = simulate_standard(spec, grid, split_net(spec, NetSchedule{pb}));
  v.limits = check_soc_limits(realized, spec, tol);
  v.realized_mismatch = (realized.e - col(data.e_realized)).cwiseAbs().maxCoeff();
  v.sandwich_violation = std::max({0.0, (col(data.e_relaxed) - realized.e).maxCoeff(),
                                   (realized.e - col(data.e_simplified)).maxCoeff()});
  v.pass = v.limits.pass && v.realized_mismatch <= 1e-6 * std::max(1.0, spec.e_max) &&
           v.sandwich_violation <= tol;
  return v;
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkRow {
  std::string method;
  std::size_t n_batteries = 0;
  double solve_time_s = 0.0;
  double rmse_kw = 0.0;
  double objective = 0.0;
  std::string status;
  double gap = 0.0;
  bool realizable = false;
  std::size_t nodes = 0;
};

struct BenchmarkConfig {
  BatterySpec battery;
  TimeGrid grid;
  ScenarioSpec scenario;
  std::optional<double> eta;
  double regularization_eps = 1e-7;
  std::vector<std::size_t> fleet_sizes{1, 2, 4};
  std::vector<std::string> methods{"rbd", "mip_bnb"};
  SolverSettings solver;
  BnbSettings bnb;
};

/// Solves one (method, N) pair. Solver and guard errors land in `status`.
inline BenchmarkRow run_benchmark_row(const BenchmarkConfig& cfg, const std::string& method,
                                      std::size_t n) {
  BenchmarkRow row;
  row.method = method;
  row.n_batteries = n;
  try {
    const Scenario sc =
        make_scenario(cfg.battery, n, cfg.grid, cfg.scenario, cfg.regularization_eps, cfg.eta);
    DispatchResult result;
    if (method == "rbd") {
      result = solve_rbd(sc.problem, cfg.solver);
      row.status = "optimal";
    } else if (method == "mip_bnb" || method == "oracle") {
      const BnbResult b = method == "oracle" ? enumerate_exact_small(sc.problem, cfg.bnb.qp)
                                             : solve_exact_bnb(sc.problem, cfg.bnb);
      result = b.dispatch;
      row.status = std::string(to_string(b.status));
      row.gap = b.gap;
      row.nodes = b.nodes_explored;
    } else {
      throw UnknownKind("method '" + method + "'");
    }
    row.solve_time_s = result.stats.wall_time_s;
    row.rmse_kw = result.rmse;
    row.objective = result.objective;
    row.realizable = verify_realizability(result, sc.problem).pass;
    if (!row.realizable) row.status = "unrealizable";
  } catch (const Error& e) {
    row.status = std::string("error: ") + e.what();
  }
  return row;
}

inline std::vector<BenchmarkRow> run_benchmark(const BenchmarkConfig& cfg) {
  std::vector<BenchmarkRow> rows;
  for (std::size_t n : cfg.fleet_sizes) {
    for (const auto& m : cfg.methods) rows.push_back(run_benchmark_row(cfg, m, n));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const BenchmarkRow& a, const BenchmarkRow& b) {
    return a.n_batteries != b.n_batteries ? a.n_batteries < b.n_batteries : a.method < b.method;
  });
  return rows;
}

inline void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  os << "method,n_batteries,solve_time_s,rmse_kw,objective,status,gap,realizable,nodes\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::ostringstream line;
    line << r.method << ',' << r.n_batteries << ',' << std::fixed << std::setprecision(3)
         << r.solve_time_s << ',' << std::setprecision(9) << r.rmse_kw << ',' << r.objective
         << ',' << status << ',' << r.gap << ',' << (r.realizable ? 1 : 0) << ',' << r.nodes
         << '\n';
    os << line.str();
  }
}

inline std::string render_benchmark_table(const std::vector<BenchmarkRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(9) << "method" << std::right << std::setw(10) << "batteries"
     << std::setw(12) << "time_s" << std::setw(14) << "rmse_kw" << std::setw(10) << "gap"
     << std::setw(10) << "nodes" << "  status\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(9) << r.method << std::right << std::setw(10) << r.n_batteries
       << std::setw(12) << std::fixed << std::setprecision(3) << r.solve_time_s << std::setw(14)
       << std::setprecision(4) << r.rmse_kw << std::setw(10) << std::setprecision(5) << r.gap
       << std::setw(10) << r.nodes << "  " << r.status << '\n';
  }
  return os.str();
}

}  // namespace battopt
