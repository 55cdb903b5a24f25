#pragma once

// Robust battery dispatch (RBD).
//
// Decision vector x = [pc_1; pd_1; ...; pc_N; pd_N], each block of length T.
// Per battery the linear constraint set is
//
//   E0 + eta_c*A*pc - (1/eta_d)*A*pd >= 0        relaxed model, lower SoC
//   E0 + eta*A*(pc - pd)             <= e_max    simplified model, upper SoC
//   0 <= pc <= p_max,  0 <= pd <= p_max
//   pc + pd <= p_max                             cutting plane
//
// Because the relaxed model under-estimates and the simplified model
// over-estimates the SoC reached by dispatching pb = pc - pd through the
// complementarity model, every feasible point is physically realizable.
//
// The objective tracks a fleet reference:
//   sum_k (ref[k] - sum_i (pc_i[k] - pd_i[k]))^2 + w * ||x||^2
// with w = regularization_eps times the largest Hessian entry of the tracking
// term. The small ridge makes the split across identical batteries unique.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "battopt/battery.hpp"
#include "battopt/errors.hpp"
#include "battopt/metrics.hpp"
#include "battopt/qp.hpp"

namespace battopt {

struct DispatchProblem {
  std::vector<BatterySpec> batteries;
  TimeGrid grid;
  Vector reference;  // fleet reference, kW
  /// Per-battery net efficiency; empty selects the symmetric eta.
  std::vector<double> eta;
  double regularization_eps = 1e-7;

  std::size_t size() const { return batteries.size(); }

  double eta_for(std::size_t i) const {
    return eta.empty() ? symmetric_eta(batteries.at(i)).eta : eta.at(i);
  }

  void validate() const {
    if (batteries.empty()) throw InvalidProblem("fleet is empty");
    try {
      grid.validate();
      for (const auto& b : batteries) b.validate();
    } catch (const InvalidSpec& e) {
      throw InvalidProblem(e.what());
    }
    if (reference.size() != grid.size()) throw InvalidProblem("reference length differs from T");
    if (!reference.allFinite()) throw InvalidProblem("reference must be finite");
    if (!eta.empty()) {
      if (eta.size() != batteries.size()) throw InvalidProblem("one eta per battery required");
      for (std::size_t i = 0; i < eta.size(); ++i) {
        try {
          detail::require_eta(batteries[i], eta[i]);
        } catch (const EtaOutOfRange& e) {
          throw InvalidProblem(e.what());
        }
      }
    }
    if (!(regularization_eps >= 0.0)) throw InvalidProblem("regularization_eps must be >= 0");
  }
};

/// Decision-vector layout shared by every dispatch formulation.
struct VariableLayout {
  Eigen::Index steps = 0;
  std::size_t batteries = 0;

  explicit VariableLayout(const DispatchProblem& p)
      : steps(p.grid.size()), batteries(p.size()) {}

  Eigen::Index num_vars() const { return 2 * steps * static_cast<Eigen::Index>(batteries); }
  Eigen::Index pc(std::size_t i, Eigen::Index k) const {
    return 2 * steps * static_cast<Eigen::Index>(i) + k;
  }
  Eigen::Index pd(std::size_t i, Eigen::Index k) const { return pc(i, k) + steps; }
};

struct SolveStats {
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double wall_time_s = 0.0;
  bool polished = false;
  double primal_res = 0.0;
  double dual_res = 0.0;
};

struct DispatchResult {
  std::vector<Schedule> schedules;
  std::vector<NetSchedule> nets;
  std::vector<SocTrajectory> relaxed;     // lower envelopes E^r
  std::vector<SocTrajectory> simplified;  // upper envelopes E^s
  Vector fleet_net;
  double objective = 0.0;  // kW^2, tracking term only
  double rmse = 0.0;       // kW
  SolveStats stats;
};

struct BatteryRealizability {
  SocTrajectory realized;
  LimitReport limits;
  bool sandwich_ok = true;
  double sandwich_violation = 0.0;  // kWh, max of E^r - E and E - E^s
  bool pass = true;
};

struct RealizabilityReport {
  std::vector<BatteryRealizability> batteries;
  bool pass = true;
  double worst_lower = 0.0;
  double worst_upper = 0.0;
};

namespace detail {

/// Tracking objective in QP form; the constant ref'ref is returned separately.
inline void tracking_objective(const DispatchProblem& problem, Matrix& p, Vector& q) {
  const VariableLayout lay(problem);
  const auto n = lay.num_vars();
  const auto t = lay.steps;
  Matrix g = Matrix::Zero(t, n);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    for (Eigen::Index k = 0; k < t; ++k) {
      g(k, lay.pc(i, k)) = 1.0;
      g(k, lay.pd(i, k)) = -1.0;
    }
  }
  p = 2.0 * g.transpose() * g;
  q = -2.0 * g.transpose() * problem.reference;
  const double ridge = problem.regularization_eps * p.cwiseAbs().maxCoeff();
  p.diagonal().array() += 2.0 * ridge;
}

/// Writes the per-battery box rows [0, p_max] for pc and pd.
inline void box_rows(const VariableLayout& lay, std::size_t i, const BatterySpec& spec,
                     Eigen::Index row0, QpProblem& qp) {
  for (Eigen::Index k = 0; k < lay.steps; ++k) {
    qp.c(row0 + k, lay.pc(i, k)) = 1.0;
    qp.lower[row0 + k] = 0.0;
    qp.upper[row0 + k] = spec.p_max;
    qp.c(row0 + lay.steps + k, lay.pd(i, k)) = 1.0;
    qp.lower[row0 + lay.steps + k] = 0.0;
    qp.upper[row0 + lay.steps + k] = spec.p_max;
  }
}

inline void cutting_plane_rows(const VariableLayout& lay, std::size_t i, const BatterySpec& spec,
                               Eigen::Index row0, QpProblem& qp) {
  for (Eigen::Index k = 0; k < lay.steps; ++k) {
    qp.c(row0 + k, lay.pc(i, k)) = 1.0;
    qp.c(row0 + k, lay.pd(i, k)) = 1.0;
    qp.lower[row0 + k] = -kInf;
    qp.upper[row0 + k] = spec.p_max;
  }
}

/// Rows computing dt * cumsum(wc*pc - wd*pd).
inline void accumulation_rows(const VariableLayout& lay, std::size_t i, double dt, double wc,
                              double wd, Eigen::Index row0, QpProblem& qp) {
  for (Eigen::Index l = 0; l < lay.steps; ++l) {
    for (Eigen::Index k = 0; k <= l; ++k) {
      qp.c(row0 + l, lay.pc(i, k)) = dt * wc;
      qp.c(row0 + l, lay.pd(i, k)) = -dt * wd;
    }
  }
}

inline double tracking_error(const Vector& reference, const Vector& fleet_net) {
  return (reference - fleet_net).squaredNorm();
}

/// Builds a DispatchResult from a raw QP iterate. pc and pd are clipped into
/// [0, p_max], which only moves them within solver tolerance.
inline DispatchResult assemble_result(const DispatchProblem& problem, const Vector& x,
                                      const SolveStats& stats) {
  const VariableLayout lay(problem);
  DispatchResult r;
  r.stats = stats;
  r.fleet_net = Vector::Zero(lay.steps);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const auto& spec = problem.batteries[i];
    Schedule s{x.segment(lay.pc(i, 0), lay.steps).cwiseMax(0.0).cwiseMin(spec.p_max),
               x.segment(lay.pd(i, 0), lay.steps).cwiseMax(0.0).cwiseMin(spec.p_max)};
    NetSchedule net = net_of(s);
    r.fleet_net += net.pb;
    r.relaxed.push_back(simulate_relaxed(spec, problem.grid, s));
    r.simplified.push_back(simulate_simplified(spec, problem.grid, net, problem.eta_for(i)));
    r.schedules.push_back(std::move(s));
    r.nets.push_back(std::move(net));
  }
  r.objective = tracking_error(problem.reference, r.fleet_net);
  r.rmse = rmse(problem.reference, r.fleet_net);
  return r;
}

}  // namespace detail

inline QpProblem build_rbd(const DispatchProblem& problem) {
  problem.validate();
  const VariableLayout lay(problem);
  const auto t = lay.steps;
  const auto rows_per = 5 * t;
  const auto m = rows_per * static_cast<Eigen::Index>(problem.size());

  QpProblem qp;
  detail::tracking_objective(problem, qp.p, qp.q);
  qp.c = Matrix::Zero(m, lay.num_vars());
  qp.lower = Vector::Constant(m, -kInf);
  qp.upper = Vector::Constant(m, kInf);

  for (std::size_t i = 0; i < problem.size(); ++i) {
    const auto& spec = problem.batteries[i];
    const double eta = problem.eta_for(i);
    const auto base = rows_per * static_cast<Eigen::Index>(i);
    const double dt = problem.grid.dt;

    // Relaxed model stays above zero.
    detail::accumulation_rows(lay, i, dt, spec.eta_c, 1.0 / spec.eta_d, base, qp);
    qp.lower.segment(base, t).setConstant(-spec.e0);
    // Simplified model stays below capacity.
    detail::accumulation_rows(lay, i, dt, eta, eta, base + t, qp);
    qp.upper.segment(base + t, t).setConstant(spec.e_max - spec.e0);

    detail::box_rows(lay, i, spec, base + 2 * t, qp);
    detail::cutting_plane_rows(lay, i, spec, base + 4 * t, qp);
  }
  return qp;
}

/// Equivalent form of a tracking QP over x = [pc; pd] with the fleet net power
/// s = G x appended as T variables and T equality rows after the original
/// rows. The objective becomes |ref - s|^2 + w|x|^2, so P is diagonal and the
/// batteries couple only through the equality rows, which keeps the KKT
/// factorization linear in the fleet size.
inline QpProblem lift_tracking(const DispatchProblem& problem, const QpProblem& qp) {
  const VariableLayout lay(problem);
  const auto n = lay.num_vars();
  const auto t = lay.steps;
  const auto m = qp.num_constraints();
  if (qp.num_vars() != n) throw DimensionMismatch("QP is not over the stacked [pc; pd] vector");
  const double ridge = 2.0 * problem.regularization_eps;  // eps * max|2 G'G|

  QpProblem out;
  out.p = Matrix::Zero(n + t, n + t);
  out.p.diagonal().head(n).setConstant(2.0 * ridge);
  out.p.diagonal().tail(t).setConstant(2.0);
  out.q = Vector::Zero(n + t);
  out.q.tail(t) = -2.0 * problem.reference;
  out.c = Matrix::Zero(m + t, n + t);
  out.c.topLeftCorner(m, n) = qp.c;
  out.lower = Vector::Zero(m + t);
  out.upper = Vector::Zero(m + t);
  out.lower.head(m) = qp.lower;
  out.upper.head(m) = qp.upper;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    for (Eigen::Index k = 0; k < t; ++k) {
      out.c(m + k, lay.pc(i, k)) = 1.0;
      out.c(m + k, lay.pd(i, k)) = -1.0;
    }
  }
  for (Eigen::Index k = 0; k < t; ++k) out.c(m + k, n + k) = -1.0;
  return out;
}

/// Tracking objective |ref - G x|^2 + w|x|^2 at a stacked [pc; pd] vector.
inline double tracking_value(const DispatchProblem& problem, const Vector& x) {
  const VariableLayout lay(problem);
  Vector net = Vector::Zero(lay.steps);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    net += x.segment(lay.pc(i, 0), lay.steps) - x.segment(lay.pd(i, 0), lay.steps);
  }
  const double ridge = 2.0 * problem.regularization_eps;
  return (problem.reference - net).squaredNorm() + ridge * x.head(lay.num_vars()).squaredNorm();
}

/// The RBD problem in the lifted form that solve_rbd hands to the solver.
inline QpProblem build_rbd_lifted(const DispatchProblem& problem) {
  return lift_tracking(problem, build_rbd(problem));
}

inline DispatchResult solve_rbd(const DispatchProblem& problem, const SolverSettings& settings = {}) {
  const QpProblem qp = build_rbd_lifted(problem);
  const auto start = std::chrono::steady_clock::now();
  const QpSolution sol = solve_qp(qp, settings);
  const auto stop = std::chrono::steady_clock::now();
  if (sol.status != QpStatus::optimal) {
    std::ostringstream os;
    os << "RBD solve ended with status " << to_string(sol.status) << " after " << sol.iterations
       << " iterations";
    throw SolverNotOptimal(os.str());
  }
  SolveStats stats{sol.status, sol.iterations,
                   std::chrono::duration<double>(stop - start).count(), sol.polished,
                   sol.primal_res, sol.dual_res};
  return detail::assemble_result(problem, sol.x.head(VariableLayout(problem).num_vars()), stats);
}

/// Default realizability tolerance, 1e-6 * e_max.
inline double realizability_tol(const BatterySpec& spec) { return 1e-6 * spec.e_max; }

/// Dispatches each battery's net power through the complementarity model and
/// checks SoC limits and the relaxed/simplified sandwich. When `tol` is unset
/// each battery uses realizability_tol(spec).
inline RealizabilityReport verify_realizability(const DispatchResult& result,
                                                const DispatchProblem& problem,
                                                std::optional<double> tol = std::nullopt) {
  const auto n = problem.size();
  if (result.schedules.size() != n) throw MismatchedResult("battery count differs from problem");
  RealizabilityReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& spec = problem.batteries[i];
    const auto& sched = result.schedules[i];
    if (sched.pc.size() != problem.grid.size() || sched.pd.size() != problem.grid.size()) {
      throw MismatchedResult("schedule length differs from horizon");
    }
    const NetSchedule net = net_of(sched);
    BatteryRealizability b;
    b.realized = simulate_standard(spec, problem.grid, split_net(spec, net));
    b.limits = check_soc_limits(b.realized, spec, tol.value_or(realizability_tol(spec)));

    const Vector lower = simulate_relaxed(spec, problem.grid, sched).e;
    const Vector upper = simulate_simplified(spec, problem.grid, net, problem.eta_for(i)).e;
    b.sandwich_violation = std::max((lower - b.realized.e).maxCoeff(),
                                    (b.realized.e - upper).maxCoeff());
    b.sandwich_violation = std::max(0.0, b.sandwich_violation);
    b.sandwich_ok = b.sandwich_violation <= 1e-9 * std::max(1.0, spec.e_max);
    b.pass = b.limits.pass && b.sandwich_ok;

    rep.pass = rep.pass && b.pass;
    rep.worst_lower = std::max(rep.worst_lower, b.limits.worst_lower);
    rep.worst_upper = std::max(rep.worst_upper, b.limits.worst_upper);
    rep.batteries.push_back(std::move(b));
  }
  return rep;
}

}  // namespace battopt
