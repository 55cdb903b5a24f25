#pragma once

// Battery state-of-charge models.
//
// Three discrete-time models share the accumulation operator A (lower
// triangular, every nonzero entry dt):
//
//   standard   : E   = 1*E0 + eta_c*A*pc - (1/eta_d)*A*pd,  pc[k]*pd[k] = 0
//   relaxed    : E^r = same affine map, simultaneous pc/pd allowed
//   simplified : E^s = 1*E0 + eta*A*pb,  pb = pc - pd,  eta_c <= eta <= 1/eta_d
//
// For a relaxed schedule s with net power pb and its complementary split,
// E^r(s) <= E(split(pb)) <= E^s(pb) elementwise. The gaps have closed forms
// (relaxed_mismatch / simplified_mismatch) and both are bounded by
// (1/eta_d - eta_c) * A * 1 * p_max / 2 under pc + pd <= p_max and the
// symmetric choice of eta.
//
// Trajectories hold the post-step values E[1..T]; E[0] = e0 lives in the
// BatterySpec.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "battopt/errors.hpp"

namespace battopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Admission tolerance (kW^2) on pc[k]*pd[k] for the standard model.
inline constexpr double kComplementarityTol = 1e-9;

struct BatterySpec {
  double p_max = 15.0;  // kW, per direction
  double e_max = 60.0;  // kWh
  double eta_c = 0.95;
  double eta_d = 0.95;
  double e0 = 30.0;  // kWh

  void validate() const {
    auto fail = [](const std::string& m) { throw InvalidSpec(m); };
    if (!(eta_c > 0.0 && eta_c <= 1.0)) fail("eta_c must lie in (0, 1]");
    if (!(eta_d > 0.0 && eta_d <= 1.0)) fail("eta_d must lie in (0, 1]");
    if (!(p_max > 0.0) || !std::isfinite(p_max)) fail("p_max must be positive");
    if (!(e_max > 0.0) || !std::isfinite(e_max)) fail("e_max must be positive");
    if (!(e0 >= 0.0 && e0 <= e_max)) fail("e0 must lie in [0, e_max]");
  }

  /// Largest per-step SoC change any model can produce.
  double max_step_change(double dt) const {
    return std::max(eta_c, 1.0 / eta_d) * dt * p_max;
  }

  bool operator==(const BatterySpec&) const = default;
};

struct TimeGrid {
  std::size_t steps = 24;
  double dt = 1.0;  // hours

  void validate() const {
    if (steps < 1) throw InvalidSpec("grid needs at least one step");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidSpec("dt must be positive");
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(steps); }

  bool operator==(const TimeGrid&) const = default;
};

/// Two-input schedule. Used both for complementary (standard model) and
/// relaxed inputs.
struct Schedule {
  Vector pc;  // kW
  Vector pd;  // kW

  static Schedule zeros(const TimeGrid& grid) {
    return {Vector::Zero(grid.size()), Vector::Zero(grid.size())};
  }
};

struct NetSchedule {
  Vector pb;  // kW, positive = charging
};

enum class ModelKind { standard, relaxed, simplified };

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::standard:
      return "standard";
    case ModelKind::relaxed:
      return "relaxed";
    case ModelKind::simplified:
      return "simplified";
  }
  return "unknown";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view name) {
  if (name == "standard") return ModelKind::standard;
  if (name == "relaxed") return ModelKind::relaxed;
  if (name == "simplified") return ModelKind::simplified;
  return std::nullopt;
}

struct SocTrajectory {
  Vector e;  // kWh, entry k holds E[k+1]
  ModelKind model = ModelKind::standard;
};

/// Net charging efficiency and the mismatch slope it induces.
struct NetEfficiency {
  double eta = 1.0;
  double alpha = 0.0;
};

struct LimitReport {
  bool pass = true;
  std::optional<std::size_t> first_violation;
  /// Largest distance outside [0, e_max], kWh; 0 when inside.
  double worst_excursion = 0.0;
  double worst_lower = 0.0;
  double worst_upper = 0.0;
};

namespace detail {

inline void require_length(const Vector& v, const TimeGrid& grid, const char* what) {
  if (v.size() != grid.size()) {
    std::ostringstream os;
    os << what << " has length " << v.size() << ", grid has " << grid.steps << " steps";
    throw LengthMismatch(os.str());
  }
}

inline double bound_slack(const BatterySpec& spec) { return 1e-9 * std::max(1.0, spec.p_max); }

inline void require_box(const Vector& v, double lo, double hi, double slack, const char* what) {
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    const double x = v[k];
    if (!std::isfinite(x) || x < lo - slack || x > hi + slack) {
      std::ostringstream os;
      os << what << "[" << k << "] = " << x << " outside [" << lo << ", " << hi << "]";
      throw BoundViolation(os.str());
    }
  }
}

inline void require_schedule(const BatterySpec& spec, const TimeGrid& grid, const Schedule& s) {
  require_length(s.pc, grid, "pc");
  require_length(s.pd, grid, "pd");
  const double slack = bound_slack(spec);
  require_box(s.pc, 0.0, spec.p_max, slack, "pc");
  require_box(s.pd, 0.0, spec.p_max, slack, "pd");
}

inline void require_eta(const BatterySpec& spec, double eta) {
  const double lo = spec.eta_c;
  const double hi = 1.0 / spec.eta_d;
  const double slack = 1e-12 * hi;
  if (!(eta >= lo - slack && eta <= hi + slack)) {
    std::ostringstream os;
    os << "eta = " << eta << " outside [" << lo << ", " << hi << "]";
    throw EtaOutOfRange(os.str());
  }
}

/// dt * running sum of x: the action of A without materializing it.
inline Vector accumulate(const Vector& x, double dt) {
  Vector out(x.size());
  double acc = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    acc += x[k];
    out[k] = dt * acc;
  }
  return out;
}

inline SocTrajectory two_input_trajectory(const BatterySpec& spec, const TimeGrid& grid,
                                          const Schedule& s, ModelKind tag) {
  const Vector delta = spec.eta_c * s.pc - s.pd / spec.eta_d;
  return {Vector::Constant(grid.size(), spec.e0) + accumulate(delta, grid.dt), tag};
}

}  // namespace detail

/// Dense lower-triangular A with A(l, k) = dt for l >= k.
inline Matrix accumulation_matrix(const TimeGrid& grid) {
  grid.validate();
  const auto n = grid.size();
  Matrix a = Matrix::Zero(n, n);
  for (Eigen::Index l = 0; l < n; ++l) a.row(l).head(l + 1).setConstant(grid.dt);
  return a;
}

inline SocTrajectory simulate_standard(const BatterySpec& spec, const TimeGrid& grid,
                                       const Schedule& sched) {
  detail::require_schedule(spec, grid, sched);
  for (Eigen::Index k = 0; k < sched.pc.size(); ++k) {
    const double prod = sched.pc[k] * sched.pd[k];
    if (prod > kComplementarityTol) {
      std::ostringstream os;
      os << "pc[" << k << "] * pd[" << k << "] = " << prod;
      throw ComplementarityViolation(os.str());
    }
  }
  return detail::two_input_trajectory(spec, grid, sched, ModelKind::standard);
}

inline SocTrajectory simulate_relaxed(const BatterySpec& spec, const TimeGrid& grid,
                                      const Schedule& sched) {
  detail::require_schedule(spec, grid, sched);
  return detail::two_input_trajectory(spec, grid, sched, ModelKind::relaxed);
}

inline SocTrajectory simulate_simplified(const BatterySpec& spec, const TimeGrid& grid,
                                         const NetSchedule& net, double eta) {
  detail::require_length(net.pb, grid, "pb");
  detail::require_box(net.pb, -spec.p_max, spec.p_max, detail::bound_slack(spec), "pb");
  detail::require_eta(spec, eta);
  return {Vector::Constant(grid.size(), spec.e0) + eta * detail::accumulate(net.pb, grid.dt),
          ModelKind::simplified};
}

/// eta halfway between eta_c and 1/eta_d, so both mismatch slopes equal alpha.
inline NetEfficiency symmetric_eta(const BatterySpec& spec) {
  const double inv_d = 1.0 / spec.eta_d;
  return {0.5 * (spec.eta_c + inv_d), 0.5 * (inv_d - spec.eta_c)};
}

inline NetSchedule net_of(const Schedule& sched) {
  if (sched.pc.size() != sched.pd.size()) throw LengthMismatch("pc and pd differ in length");
  return {sched.pc - sched.pd};
}

/// Positive/negative part split. The result is exactly complementary.
inline Schedule split_net(const NetSchedule& net) {
  Schedule s{Vector::Zero(net.pb.size()), Vector::Zero(net.pb.size())};
  for (Eigen::Index k = 0; k < net.pb.size(); ++k) {
    const double x = net.pb[k];
    if (!std::isfinite(x)) throw BoundViolation("non-finite net power");
    if (x > 0.0) s.pc[k] = x;
    if (x < 0.0) s.pd[k] = -x;
  }
  return s;
}

/// Overload that also enforces |pb| <= p_max.
inline Schedule split_net(const BatterySpec& spec, const NetSchedule& net) {
  detail::require_box(net.pb, -spec.p_max, spec.p_max, detail::bound_slack(spec), "pb");
  return split_net(net);
}

/// E(split(net(s))) - E^r(s) = (1/eta_d - eta_c) * A * min(pc, pd).
inline Vector relaxed_mismatch(const BatterySpec& spec, const TimeGrid& grid,
                               const Schedule& relaxed) {
  detail::require_length(relaxed.pc, grid, "pc");
  detail::require_length(relaxed.pd, grid, "pd");
  const Vector overlap = relaxed.pc.cwiseMin(relaxed.pd);
  return (1.0 / spec.eta_d - spec.eta_c) * detail::accumulate(overlap, grid.dt);
}

/// E^s(pb) - E(split(pb)) = A * [(eta - eta_c) max(0, pb) + (eta - 1/eta_d) min(0, pb)].
///
/// With the symmetric eta both coefficients have magnitude alpha and the
/// expression reduces to alpha * A * |pb|; that branch is evaluated directly so
/// the identity holds without rounding noise.
inline Vector simplified_mismatch(const BatterySpec& spec, const TimeGrid& grid,
                                  const NetSchedule& net, double eta) {
  detail::require_length(net.pb, grid, "pb");
  detail::require_eta(spec, eta);
  const NetEfficiency sym = symmetric_eta(spec);
  if (eta == sym.eta) return sym.alpha * detail::accumulate(net.pb.cwiseAbs(), grid.dt);
  const Vector pos = net.pb.cwiseMax(0.0);
  const Vector neg = net.pb.cwiseMin(0.0);
  const Vector integrand = (eta - spec.eta_c) * pos + (eta - 1.0 / spec.eta_d) * neg;
  return detail::accumulate(integrand, grid.dt);
}

/// Worst-case relaxed mismatch with the cutting plane pc + pd <= p_max.
inline Vector relaxed_mismatch_bound(const BatterySpec& spec, const TimeGrid& grid,
                                     bool cutting_plane = true) {
  const double p = cutting_plane ? 0.5 * spec.p_max : spec.p_max;
  return (1.0 / spec.eta_d - spec.eta_c) *
         detail::accumulate(Vector::Constant(grid.size(), p), grid.dt);
}

/// Worst-case simplified mismatch, alpha * A * 1 * p_max, for the symmetric eta.
inline Vector simplified_mismatch_bound(const BatterySpec& spec, const TimeGrid& grid) {
  return symmetric_eta(spec).alpha *
         detail::accumulate(Vector::Constant(grid.size(), spec.p_max), grid.dt);
}

inline LimitReport check_soc_limits(const SocTrajectory& traj, const BatterySpec& spec,
                                    double tol) {
  LimitReport rep;
  for (Eigen::Index k = 0; k < traj.e.size(); ++k) {
    const double e = traj.e[k];
    const double below = std::max(0.0, -e);
    const double above = std::max(0.0, e - spec.e_max);
    rep.worst_lower = std::max(rep.worst_lower, below);
    rep.worst_upper = std::max(rep.worst_upper, above);
    if ((below > tol || above > tol || !std::isfinite(e)) && !rep.first_violation) {
      rep.first_violation = static_cast<std::size_t>(k);
    }
  }
  rep.worst_excursion = std::max(rep.worst_lower, rep.worst_upper);
  rep.pass = !rep.first_violation.has_value();
  return rep;
}

/// CSV columns: step_index, time_h, e_kwh, model_tag. time_h is the end of
/// the step.
inline void write_trajectory_csv(std::ostream& os, const SocTrajectory& traj,
                                 const TimeGrid& grid) {
  const auto old_flags = os.flags();
  const auto old_prec = os.precision();
  os << "step_index,time_h,e_kwh,model_tag\n";
  os.setf(std::ios::fixed);
  os.precision(9);
  for (Eigen::Index k = 0; k < traj.e.size(); ++k) {
    os << k << ',' << static_cast<double>(k + 1) * grid.dt << ',' << traj.e[k] << ','
       << to_string(traj.model) << '\n';
  }
  os.flags(old_flags);
  os.precision(old_prec);
}

}  // namespace battopt
