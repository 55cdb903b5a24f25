#pragma once

// Exact dispatch with complementarity enforced.
//
// The exact model keeps both efficiencies on the true SoC trajectory,
// 0 <= E0 + eta_c*A*pc - (1/eta_d)*A*pd <= e_max, plus boxes and the cutting
// plane. Complementarity is enforced by fixing, per battery and step, either
// pd = 0 (charge only) or pc = 0 (discharge only). With no fixings the node
// problem is the convex relaxation; every node is solved with solve_qp.
//
// Search is depth first until the first incumbent, then best bound. Child
// nodes are warm started from the parent solution.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "battopt/battery.hpp"
#include "battopt/dispatch.hpp"
#include "battopt/errors.hpp"
#include "battopt/qp.hpp"

namespace battopt {

enum class Mode : std::uint8_t { free, charge_only, discharge_only };

class ModeAssignment {
 public:
  ModeAssignment() = default;
  ModeAssignment(std::size_t batteries, Eigen::Index steps)
      : batteries_(batteries),
        steps_(steps),
        modes_(batteries * static_cast<std::size_t>(steps), Mode::free) {}

  Mode at(std::size_t battery, Eigen::Index step) const { return modes_[index(battery, step)]; }
  Mode& at(std::size_t battery, Eigen::Index step) { return modes_[index(battery, step)]; }

  std::size_t batteries() const { return batteries_; }
  Eigen::Index steps() const { return steps_; }
  std::size_t num_fixed() const {
    return static_cast<std::size_t>(
        std::count_if(modes_.begin(), modes_.end(), [](Mode m) { return m != Mode::free; }));
  }

  bool operator==(const ModeAssignment&) const = default;

 private:
  std::size_t index(std::size_t battery, Eigen::Index step) const {
    return battery * static_cast<std::size_t>(steps_) + static_cast<std::size_t>(step);
  }

  std::size_t batteries_ = 0;
  Eigen::Index steps_ = 0;
  std::vector<Mode> modes_;
};

enum class BranchRule { max_violation };

struct BnbSettings {
  std::size_t node_limit = 100000;
  double gap_tol = 1e-4;
  BranchRule rule = BranchRule::max_violation;
  double time_limit_s = std::numeric_limits<double>::infinity();
  /// Node is integral when every pc*pd is at most this, kW^2.
  double tol_comp = 1e-6;
  bool trace = false;
  SolverSettings qp;

  void validate() const {
    if (node_limit < 1) throw InvalidProblem("node_limit must be at least 1");
    if (!(gap_tol > 0.0)) throw InvalidProblem("gap_tol must be positive");
    if (!(time_limit_s > 0.0)) throw InvalidProblem("time_limit_s must be positive");
    qp.validate();
  }
};

enum class BnbStatus { optimal, node_limit, time_limit };

inline std::string_view to_string(BnbStatus s) {
  switch (s) {
    case BnbStatus::optimal:
      return "optimal";
    case BnbStatus::node_limit:
      return "node_limit";
    case BnbStatus::time_limit:
      return "time_limit";
  }
  return "unknown";
}

struct NodeTrace {
  std::size_t id = 0;
  std::size_t depth = 0;
  double bound = 0.0;
  double incumbent = 0.0;
  ModeAssignment modes;
};

struct BnbResult {
  DispatchResult dispatch;
  std::size_t nodes_explored = 0;
  /// Incumbent and bound are measured on the solved objective (tracking plus
  /// ridge); dispatch.objective holds the tracking term alone.
  double incumbent_objective = std::numeric_limits<double>::infinity();
  double best_bound = -std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();
  BnbStatus status = BnbStatus::optimal;
  std::vector<NodeTrace> trace;
};

struct BranchChoice {
  std::size_t battery = 0;
  Eigen::Index step = 0;
  bool operator==(const BranchChoice&) const = default;
};

/// Picks the (battery, step) with the largest min(pc, pd) among pairs whose
/// product exceeds tol_comp. Ties go to the smallest step, then the smallest
/// battery.
inline BranchChoice branch_select(std::span<const Schedule> node_solution,
                                  double tol_comp = BnbSettings{}.tol_comp) {
  std::optional<BranchChoice> best;
  double best_min = -1.0;
  const Eigen::Index steps = node_solution.empty() ? 0 : node_solution.front().pc.size();
  for (Eigen::Index k = 0; k < steps; ++k) {
    for (std::size_t i = 0; i < node_solution.size(); ++i) {
      const double pc = node_solution[i].pc[k];
      const double pd = node_solution[i].pd[k];
      if (pc * pd <= tol_comp) continue;
      const double overlap = std::min(pc, pd);
      if (overlap > best_min) {
        best_min = overlap;
        best = BranchChoice{i, k};
      }
    }
  }
  if (!best) throw AllComplementary("every pc*pd is within tolerance");
  return *best;
}

/// QP of the exact model with the given mode fixings.
inline QpProblem build_exact(const DispatchProblem& problem, const ModeAssignment& modes) {
  problem.validate();
  const VariableLayout lay(problem);
  const auto t = lay.steps;
  if (modes.batteries() != problem.size() || modes.steps() != t) {
    throw InvalidProblem("mode assignment does not match the fleet");
  }
  const auto rows_per = 4 * t;
  const auto m = rows_per * static_cast<Eigen::Index>(problem.size());
  QpProblem qp;
  detail::tracking_objective(problem, qp.p, qp.q);
  qp.c = Matrix::Zero(m, lay.num_vars());
  qp.lower = Vector::Constant(m, -kInf);
  qp.upper = Vector::Constant(m, kInf);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const auto& spec = problem.batteries[i];
    const auto base = rows_per * static_cast<Eigen::Index>(i);
    detail::accumulation_rows(lay, i, problem.grid.dt, spec.eta_c, 1.0 / spec.eta_d, base, qp);
    qp.lower.segment(base, t).setConstant(-spec.e0);
    qp.upper.segment(base, t).setConstant(spec.e_max - spec.e0);
    detail::box_rows(lay, i, spec, base + t, qp);
    detail::cutting_plane_rows(lay, i, spec, base + 3 * t, qp);
    for (Eigen::Index k = 0; k < t; ++k) {
      if (modes.at(i, k) == Mode::discharge_only) qp.upper[base + t + k] = 0.0;
      if (modes.at(i, k) == Mode::charge_only) qp.upper[base + 2 * t + k] = 0.0;
    }
  }
  return qp;
}

namespace detail {

/// Applies mode fixings to the box rows of an exact-model QP in place.
inline void apply_modes(const DispatchProblem& problem, const ModeAssignment& modes,
                        QpProblem& qp) {
  const auto t = problem.grid.size();
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const auto base = 4 * t * static_cast<Eigen::Index>(i);
    const double p_max = problem.batteries[i].p_max;
    for (Eigen::Index k = 0; k < t; ++k) {
      qp.upper[base + t + k] = modes.at(i, k) == Mode::discharge_only ? 0.0 : p_max;
      qp.upper[base + 2 * t + k] = modes.at(i, k) == Mode::charge_only ? 0.0 : p_max;
    }
  }
}

inline std::vector<Schedule> node_schedules(const DispatchProblem& problem, const Vector& x) {
  const VariableLayout lay(problem);
  std::vector<Schedule> out;
  out.reserve(problem.size());
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const double p_max = problem.batteries[i].p_max;
    out.push_back({x.segment(lay.pc(i, 0), lay.steps).cwiseMax(0.0).cwiseMin(p_max),
                   x.segment(lay.pd(i, 0), lay.steps).cwiseMax(0.0).cwiseMin(p_max)});
  }
  return out;
}

/// Re-splits node net power into exactly complementary inputs and returns the
/// stacked decision vector.
inline Vector complementary_vector(const DispatchProblem& problem, const Vector& x) {
  const VariableLayout lay(problem);
  Vector out = Vector::Zero(lay.num_vars());
  const auto scheds = node_schedules(problem, x);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const Schedule s = split_net(net_of(scheds[i]));
    out.segment(lay.pc(i, 0), lay.steps) = s.pc;
    out.segment(lay.pd(i, 0), lay.steps) = s.pd;
  }
  return out;
}

/// True when the complementary vector keeps every battery inside its SoC limits.
inline bool certify_exact(const DispatchProblem& problem, const Vector& x, double tol) {
  const VariableLayout lay(problem);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const auto& spec = problem.batteries[i];
    const Schedule s{x.segment(lay.pc(i, 0), lay.steps), x.segment(lay.pd(i, 0), lay.steps)};
    try {
      if (!check_soc_limits(simulate_standard(spec, problem.grid, s), spec, tol).pass) return false;
    } catch (const Error&) {
      return false;
    }
  }
  return true;
}

inline ModeAssignment dominant_modes(const ModeAssignment& base,
                                     std::span<const Schedule> scheds) {
  ModeAssignment out = base;
  for (std::size_t i = 0; i < out.batteries(); ++i) {
    for (Eigen::Index k = 0; k < out.steps(); ++k) {
      if (out.at(i, k) != Mode::free) continue;
      out.at(i, k) = scheds[i].pc[k] >= scheds[i].pd[k] ? Mode::charge_only : Mode::discharge_only;
    }
  }
  return out;
}

struct Incumbent {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
};

inline BnbResult finish(const DispatchProblem& problem, const Incumbent& inc, double best_bound,
                        std::size_t nodes, BnbStatus status, int iterations, double seconds,
                        std::vector<NodeTrace> trace) {
  if (!std::isfinite(inc.value)) throw SolverNotOptimal("no complementary incumbent was found");
  BnbResult r;
  SolveStats stats{QpStatus::optimal, iterations, seconds, false, 0.0, 0.0};
  r.dispatch = assemble_result(problem, inc.x, stats);
  r.nodes_explored = nodes;
  r.incumbent_objective = inc.value;
  r.best_bound = std::min(best_bound, inc.value);
  r.gap = (inc.value - r.best_bound) / std::max(1.0, std::abs(inc.value));
  r.status = status;
  r.trace = std::move(trace);
  return r;
}

}  // namespace detail

/// Global optimum of the exact model by enumerating every charge/discharge
/// pattern of the free (battery, step) pairs in `base`.
inline BnbResult enumerate_exact_small(const DispatchProblem& problem,
                                       const SolverSettings& settings,
                                       const ModeAssignment& base) {
  problem.validate();
  const auto t = problem.grid.size();
  std::vector<std::pair<std::size_t, Eigen::Index>> free_pairs;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    for (Eigen::Index k = 0; k < t; ++k) {
      if (base.at(i, k) == Mode::free) free_pairs.emplace_back(i, k);
    }
  }
  if (free_pairs.size() > 12) throw TooLarge("exhaustive enumeration needs at most 12 free pairs");

  const auto start = std::chrono::steady_clock::now();
  QpProblem qp = lift_tracking(problem, build_exact(problem, base));
  detail::Incumbent best;
  int iterations = 0;
  const std::size_t patterns = std::size_t{1} << free_pairs.size();
  for (std::size_t mask = 0; mask < patterns; ++mask) {
    ModeAssignment modes = base;
    for (std::size_t j = 0; j < free_pairs.size(); ++j) {
      const auto [i, k] = free_pairs[j];
      modes.at(i, k) = (mask >> j) & 1U ? Mode::charge_only : Mode::discharge_only;
    }
    detail::apply_modes(problem, modes, qp);
    const QpSolution sol = solve_qp(qp, settings);
    iterations += sol.iterations;
    if (sol.status == QpStatus::primal_infeasible) continue;
    const Vector x = detail::complementary_vector(problem, sol.x);
    const double value = tracking_value(problem, x);
    if (value < best.value && detail::certify_exact(problem, x, 1e-9)) best = {x, value};
  }
  const auto stop = std::chrono::steady_clock::now();
  return detail::finish(problem, best, best.value, patterns, BnbStatus::optimal, iterations,
                        std::chrono::duration<double>(stop - start).count(), {});
}

inline BnbResult enumerate_exact_small(const DispatchProblem& problem,
                                       const SolverSettings& settings = {}) {
  problem.validate();
  if (problem.size() * problem.grid.steps > 12) {
    throw TooLarge("exhaustive enumeration needs N*T <= 12");
  }
  return enumerate_exact_small(problem, settings, ModeAssignment(problem.size(), problem.grid.size()));
}

inline BnbResult solve_exact_bnb(const DispatchProblem& problem, const BnbSettings& settings = {}) {
  problem.validate();
  settings.validate();
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const double constant = problem.reference.squaredNorm();
  QpProblem qp = lift_tracking(problem,
                               build_exact(problem, ModeAssignment(problem.size(), problem.grid.size())));

  struct Node {
    ModeAssignment modes;
    double bound = -std::numeric_limits<double>::infinity();
    std::size_t depth = 0;
    std::size_t id = 0;
    std::optional<WarmStart> warm;
  };
  struct WorseBound {
    bool operator()(const Node& a, const Node& b) const {
      return a.bound != b.bound ? a.bound > b.bound : a.id > b.id;
    }
  };

  std::vector<Node> stack;
  std::priority_queue<Node, std::vector<Node>, WorseBound> heap;
  std::size_t next_id = 0;
  stack.push_back({ModeAssignment(problem.size(), problem.grid.size()),
                   -std::numeric_limits<double>::infinity(), 0, next_id++, std::nullopt});

  detail::Incumbent inc;
  double pruned_floor = std::numeric_limits<double>::infinity();
  std::size_t nodes = 0;
  int iterations = 0;
  BnbStatus status = BnbStatus::optimal;
  std::vector<NodeTrace> trace;

  auto gap_abs = [&] { return settings.gap_tol * std::max(1.0, std::abs(inc.value)); };
  auto prunable = [&](double bound) {
    return std::isfinite(inc.value) && bound >= inc.value - gap_abs();
  };
  auto solve_modes = [&](const ModeAssignment& modes, const std::optional<WarmStart>& warm) {
    detail::apply_modes(problem, modes, qp);
    QpSolution sol = solve_qp(qp, settings.qp, warm);
    iterations += sol.iterations;
    return sol;
  };
  // Fixes every free pair to its dominant side, re-solves, and keeps the
  // result as incumbent when it is exactly complementary and better.
  auto complete = [&](const ModeAssignment& modes, const std::vector<Schedule>& scheds,
                      const QpSolution& sol) {
    const ModeAssignment fixed = detail::dominant_modes(modes, scheds);
    const QpSolution done = solve_modes(fixed, WarmStart{sol.x, sol.y});
    if (done.status == QpStatus::primal_infeasible) return;
    const Vector x = detail::complementary_vector(problem, done.x);
    const double value = tracking_value(problem, x);
    if (value < inc.value && detail::certify_exact(problem, x, 1e-9)) inc = {x, value};
  };
  auto push = [&](Node node) {
    if (std::isfinite(inc.value)) heap.push(std::move(node));
    else stack.push_back(std::move(node));
  };
  auto branch = [&](const Node& parent, const BranchChoice& at, const QpSolution& sol,
                    double bound, bool charge_first) {
    Node charge{parent.modes, bound, parent.depth + 1, 0, WarmStart{sol.x, sol.y}};
    Node discharge = charge;
    charge.modes.at(at.battery, at.step) = Mode::charge_only;
    discharge.modes.at(at.battery, at.step) = Mode::discharge_only;
    // The preferred child is pushed last so the depth-first phase pops it first.
    if (charge_first) {
      discharge.id = next_id++;
      charge.id = next_id++;
      push(std::move(discharge));
      push(std::move(charge));
    } else {
      charge.id = next_id++;
      discharge.id = next_id++;
      push(std::move(charge));
      push(std::move(discharge));
    }
  };

  while (!stack.empty() || !heap.empty()) {
    if (nodes >= settings.node_limit) {
      status = BnbStatus::node_limit;
      break;
    }
    if (std::chrono::duration<double>(clock::now() - start).count() > settings.time_limit_s) {
      status = BnbStatus::time_limit;
      break;
    }
    // Switch to best-bound order once an incumbent exists.
    if (std::isfinite(inc.value) && !stack.empty()) {
      for (auto& n : stack) heap.push(std::move(n));
      stack.clear();
    }
    Node node;
    if (!stack.empty()) {
      node = std::move(stack.back());
      stack.pop_back();
    } else {
      node = heap.top();
      heap.pop();
    }
    if (prunable(node.bound)) {
      pruned_floor = std::min(pruned_floor, node.bound);
      continue;
    }

    ++nodes;
    const QpSolution sol = solve_modes(node.modes, node.warm);
    if (sol.status == QpStatus::primal_infeasible) continue;
    const double bound = std::max(node.bound, sol.objective + constant);
    if (settings.trace) trace.push_back({node.id, node.depth, bound, inc.value, node.modes});
    if (prunable(bound)) {
      pruned_floor = std::min(pruned_floor, bound);
      continue;
    }

    const auto scheds = detail::node_schedules(problem, sol.x);
    if (node.depth == 0) {
      // Rounding the root relaxation gives an early incumbent.
      complete(node.modes, scheds, sol);
      if (prunable(bound)) {
        pruned_floor = std::min(pruned_floor, bound);
        continue;
      }
    }
    std::optional<BranchChoice> choice;
    try {
      choice = branch_select(scheds, settings.tol_comp);
    } catch (const AllComplementary&) {
      // Near-integral node: fix every free pair to its dominant side and
      // re-solve to obtain an exactly complementary incumbent.
      complete(node.modes, scheds, sol);
      if (prunable(bound)) {
        pruned_floor = std::min(pruned_floor, bound);
        continue;
      }
      // The completion was not good enough; keep splitting on any overlap left.
      double widest = 0.0;
      for (Eigen::Index k = 0; k < problem.grid.size(); ++k) {
        for (std::size_t i = 0; i < scheds.size(); ++i) {
          if (node.modes.at(i, k) != Mode::free) continue;
          const double overlap = std::min(scheds[i].pc[k], scheds[i].pd[k]);
          if (overlap > widest) {
            widest = overlap;
            choice = BranchChoice{i, k};
          }
        }
      }
      if (!choice) {
        pruned_floor = std::min(pruned_floor, bound);
        continue;
      }
    }
    const Schedule& s = scheds[choice->battery];
    branch(node, *choice, sol, bound, s.pc[choice->step] >= s.pd[choice->step]);
  }

  double best_bound = pruned_floor;
  for (const auto& n : stack) best_bound = std::min(best_bound, n.bound);
  if (!heap.empty()) best_bound = std::min(best_bound, heap.top().bound);

  if (!std::isfinite(inc.value)) {
    // Every valid problem admits the idle schedule.
    const Vector x = Vector::Zero(VariableLayout(problem).num_vars());
    inc = {x, tracking_value(problem, x)};
  }
  const double seconds = std::chrono::duration<double>(clock::now() - start).count();
  return detail::finish(problem, inc, best_bound, nodes, status, iterations, seconds,
                        std::move(trace));
}

/// Per-node trace as CSV: node_id, depth, bound, incumbent.
inline void write_trace_csv(std::ostream& os, std::span<const NodeTrace> trace) {
  os << "node_id,depth,bound,incumbent\n";
  const auto old_prec = os.precision(12);
  for (const auto& t : trace) {
    os << t.id << ',' << t.depth << ',' << t.bound << ',' << t.incumbent << '\n';
  }
  os.precision(old_prec);
}

}  // namespace battopt
