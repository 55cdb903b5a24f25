#pragma once

// Convex QP solver based on the ADMM operator splitting
//
//   minimize    1/2 x'Px + q'x
//   subject to  l <= Cx <= u
//
// The iteration follows the familiar OSQP scheme: Ruiz equilibration of the
// KKT matrix, a sparse quasi-definite linear system factorized once per
// penalty value, over-relaxation, adaptive rho, a dual-ray primal
// infeasibility test, and an optional polishing step that solves the
// equality-constrained KKT system of the guessed active set.
//
// Dual sign convention: y_i < 0 at an active lower bound, y_i > 0 at an active
// upper bound, and Px + q + C'y = 0 at the optimum.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string_view>
#include <vector>

#include "battopt/dual_active_set.hpp"
#include "battopt/errors.hpp"

namespace battopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct QpProblem {
  Matrix p;  // n x n, symmetric PSD
  Vector q;
  Matrix c;  // m x n
  Vector lower;
  Vector upper;

  Eigen::Index num_vars() const { return q.size(); }
  Eigen::Index num_constraints() const { return lower.size(); }

  void validate() const {
    const auto n = q.size();
    const auto m = lower.size();
    std::ostringstream os;
    if (p.rows() != n || p.cols() != n) {
      os << "P is " << p.rows() << "x" << p.cols() << ", expected " << n << "x" << n;
      throw DimensionMismatch(os.str());
    }
    if (c.cols() != n || c.rows() != m || upper.size() != m) {
      os << "C is " << c.rows() << "x" << c.cols() << " with bounds " << m << "/" << upper.size()
         << ", expected " << m << "x" << n;
      throw DimensionMismatch(os.str());
    }
    if (!p.allFinite() || !q.allFinite() || !c.allFinite()) {
      throw InvalidProblem("P, q and C must be finite");
    }
    const double sym_tol = 1e-10 * std::max(1.0, p.cwiseAbs().maxCoeff());
    if (n > 0 && (p - p.transpose()).cwiseAbs().maxCoeff() >= sym_tol) {
      throw InvalidProblem("P is not symmetric");
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::isnan(lower[i]) || std::isnan(upper[i]) || lower[i] > upper[i] ||
          lower[i] == kInf || upper[i] == -kInf) {
        os << "invalid bounds on row " << i << ": [" << lower[i] << ", " << upper[i] << "]";
        throw InvalidProblem(os.str());
      }
    }
  }

  double objective(const Vector& x) const { return 0.5 * x.dot(p * x) + q.dot(x); }
};

struct SolverSettings {
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iter = 20000;
  double rho = 0.1;
  bool adaptive_rho = true;
  int adaptive_rho_interval = 50;
  double alpha = 1.6;  // over-relaxation, in (0, 2)
  double sigma = 1e-6;
  bool polish = true;
  double polish_delta = 1e-7;
  int polish_refine_iter = 25;
  int polish_max_rounds = 60;
  int polish_sharp_rounds = 20;
  int scaling_iter = 10;
  int check_interval = 10;
  double eps_prim_inf = 1e-5;
  int infeasibility_start = 500;

  void validate() const {
    if (!(eps_abs > 0.0) || !(eps_rel > 0.0)) throw InvalidProblem("tolerances must be positive");
    if (max_iter < 1) throw InvalidProblem("max_iter must be at least 1");
    if (!(rho > 0.0)) throw InvalidProblem("rho must be positive");
    if (!(alpha > 0.0 && alpha < 2.0)) throw InvalidProblem("alpha must lie in (0, 2)");
    if (!(sigma > 0.0)) throw InvalidProblem("sigma must be positive");
    if (check_interval < 1 || adaptive_rho_interval < 1) {
      throw InvalidProblem("intervals must be positive");
    }
  }
};

enum class QpStatus { optimal, max_iter, primal_infeasible };

inline std::string_view to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal:
      return "optimal";
    case QpStatus::max_iter:
      return "max_iter";
    case QpStatus::primal_infeasible:
      return "primal_infeasible";
  }
  return "unknown";
}

struct QpSolution {
  Vector x;
  Vector y;
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double primal_res = kInf;
  double dual_res = kInf;
  bool polished = false;
  double objective = kInf;
};

struct WarmStart {
  Vector x;
  Vector y;
};

struct KktResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double comp_slack = 0.0;
};

/// Residuals of (x, y) against the optimality conditions of `problem`, in
/// infinity norm: primal |proj(Cx) - Cx|, dual |Px + q + C'y|, and
/// comp = max_i |y_i| dist(Cx_i, active bound).
inline KktResiduals kkt_residuals(const QpProblem& problem, const Vector& x, const Vector& y) {
  const auto n = problem.num_vars();
  const auto m = problem.num_constraints();
  if (x.size() != n || y.size() != m) throw DimensionMismatch("x or y has the wrong length");
  KktResiduals r;
  const Vector cx = problem.c * x;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double proj = std::clamp(cx[i], problem.lower[i], problem.upper[i]);
    r.primal = std::max(r.primal, std::abs(proj - cx[i]));
    double dist = 0.0;
    if (y[i] < 0.0) dist = std::isfinite(problem.lower[i]) ? std::abs(cx[i] - problem.lower[i]) : kInf;
    if (y[i] > 0.0) dist = std::isfinite(problem.upper[i]) ? std::abs(cx[i] - problem.upper[i]) : kInf;
    if (y[i] != 0.0) r.comp_slack = std::max(r.comp_slack, std::abs(y[i]) * dist);
  }
  if (n > 0) {
    r.dual = (problem.p * x + problem.q + problem.c.transpose() * y).cwiseAbs().maxCoeff();
  }
  return r;
}

namespace detail {

using SparseMatrix = Eigen::SparseMatrix<double>;

inline double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

/// Problem data after Ruiz equilibration: P_s = c D P D, q_s = c D q,
/// C_s = E C D, l_s = E l, u_s = E u.
struct ScaledProblem {
  SparseMatrix p;
  SparseMatrix c;
  SparseMatrix ct;
  Vector q;
  Vector lower;
  Vector upper;
  Vector d;  // variable scaling
  Vector e;  // constraint scaling
  double cost = 1.0;
};

inline double clamp_norm(double v) {
  if (v < 1e-4) return 1.0;
  return std::min(v, 1e4);
}

inline Vector column_max(const SparseMatrix& a) {
  Vector out = Vector::Zero(a.cols());
  for (Eigen::Index j = 0; j < a.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(a, j); it; ++it) {
      out[j] = std::max(out[j], std::abs(it.value()));
    }
  }
  return out;
}

inline ScaledProblem equilibrate(const QpProblem& prob, int iterations) {
  const auto n = prob.num_vars();
  const auto m = prob.num_constraints();
  SparseMatrix p = prob.p.sparseView(0.0, 0.0);
  SparseMatrix c = prob.c.sparseView(0.0, 0.0);
  Vector q = prob.q;
  Vector d = Vector::Ones(n);
  Vector e = Vector::Ones(m);
  double cost = 1.0;

  for (int it = 0; it < iterations; ++it) {
    Vector col_norm = column_max(p);
    Vector row_norm = Vector::Zero(m);
    for (Eigen::Index j = 0; j < c.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator itc(c, j); itc; ++itc) {
        const double v = std::abs(itc.value());
        col_norm[j] = std::max(col_norm[j], v);
        row_norm[itc.row()] = std::max(row_norm[itc.row()], v);
      }
    }
    Vector dd(n);
    for (Eigen::Index j = 0; j < n; ++j) dd[j] = 1.0 / std::sqrt(clamp_norm(col_norm[j]));
    Vector ee(m);
    for (Eigen::Index i = 0; i < m; ++i) ee[i] = 1.0 / std::sqrt(clamp_norm(row_norm[i]));
    p = dd.asDiagonal() * p * dd.asDiagonal();
    c = ee.asDiagonal() * c * dd.asDiagonal();
    q = dd.cwiseProduct(q);
    d = d.cwiseProduct(dd);
    e = e.cwiseProduct(ee);

    const double mean_col = n > 0 ? column_max(p).mean() : 0.0;
    const double gamma = 1.0 / clamp_norm(std::max(mean_col, inf_norm(q)));
    p *= gamma;
    q *= gamma;
    cost *= gamma;
  }

  ScaledProblem s;
  s.p = std::move(p);
  s.c = std::move(c);
  s.ct = s.c.transpose();
  s.q = q;
  s.lower = e.cwiseProduct(prob.lower);
  s.upper = e.cwiseProduct(prob.upper);
  s.d = d;
  s.e = e;
  s.cost = cost;
  return s;
}

enum class RowKind { free, inequality, equality };

inline std::vector<RowKind> classify_rows(const Vector& lower, const Vector& upper) {
  std::vector<RowKind> kinds(static_cast<std::size_t>(lower.size()));
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (!std::isfinite(lower[i]) && !std::isfinite(upper[i])) {
      kinds[idx] = RowKind::free;
    } else if (upper[i] - lower[i] < 1e-10 * std::max(1.0, std::abs(lower[i]))) {
      kinds[idx] = RowKind::equality;
    } else {
      kinds[idx] = RowKind::inequality;
    }
  }
  return kinds;
}

inline Vector rho_vector(const std::vector<RowKind>& kinds, double rho) {
  constexpr double kRhoMin = 1e-6;
  constexpr double kEqualityScale = 1e3;
  Vector r(static_cast<Eigen::Index>(kinds.size()));
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    switch (kinds[i]) {
      case RowKind::free:
        r[idx] = kRhoMin;
        break;
      case RowKind::equality:
        r[idx] = kEqualityScale * rho;
        break;
      case RowKind::inequality:
        r[idx] = rho;
        break;
    }
  }
  return r;
}

inline Vector project(const Vector& v, const Vector& lower, const Vector& upper) {
  return v.cwiseMax(lower).cwiseMin(upper);
}

/// Lower triangle of the symmetric matrix [P + rx I, C'; C, -diag(ry)] over the
/// rows of C listed in `rows`.
inline SparseMatrix kkt_lower(const SparseMatrix& p, const SparseMatrix& c_rowmajor_t, double rx,
                              const std::vector<Eigen::Index>& rows, const Vector& ry) {
  const auto n = p.rows();
  const auto na = static_cast<Eigen::Index>(rows.size());
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(p.nonZeros() + n + na) +
                  static_cast<std::size_t>(c_rowmajor_t.nonZeros()));
  for (Eigen::Index j = 0; j < p.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(p, j); it; ++it) {
      if (it.row() > j) entries.emplace_back(it.row(), j, it.value());
    }
    entries.emplace_back(j, j, p.coeff(j, j) + rx);
  }
  for (Eigen::Index r = 0; r < na; ++r) {
    // Column rows[r] of C' holds row rows[r] of C.
    for (SparseMatrix::InnerIterator it(c_rowmajor_t, rows[static_cast<std::size_t>(r)]); it; ++it) {
      entries.emplace_back(n + r, it.row(), it.value());
    }
    entries.emplace_back(n + r, n + r, -ry[r]);
  }
  SparseMatrix k(n + na, n + na);
  k.setFromTriplets(entries.begin(), entries.end());
  return k;
}

using Ldlt = Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

/// Equality-constrained KKT solves for guessed active sets in the scaled
/// space. `solve` factors the regularized matrix [P + dI, Ca'; Ca, -dI], which
/// tolerates dependent rows. `sharpen` factors the same matrix with a tiny
/// regularization by sparse LU, for a settled set. Both refine against the
/// exact system [P, Ca'; Ca, 0].
class ActiveSetSolver {
 public:
  ActiveSetSolver(const ScaledProblem& s, const SolverSettings& settings)
      : s_(s), delta_(settings.polish_delta) {}

  /// Returns scaled (x, y) for the active set, or nothing when it is unusable.
  std::optional<std::pair<Vector, Vector>> solve(const std::vector<int>& active, int sweeps) const {
    const System sys = assemble(active, delta_);
    Ldlt ldlt(sys.k);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    return refine(sys, ldlt, sweeps, active);
  }

  std::optional<std::pair<Vector, Vector>> sharpen(const std::vector<int>& active,
                                                   int sweeps) const {
    const double reg = 1e-12 * std::max(1.0, column_max(s_.p).maxCoeff());
    System sys = assemble(active, reg);
    // SparseLU wants the full matrix.
    SparseMatrix full = sys.k.selfadjointView<Eigen::Lower>();
    Eigen::SparseLU<SparseMatrix> lu;
    lu.compute(full);
    if (lu.info() != Eigen::Success) return std::nullopt;
    return refine(sys, lu, sweeps, active);
  }

 private:
  struct System {
    SparseMatrix k;  // lower triangle
    std::vector<Eigen::Index> rows;
    Vector rhs;
  };

  System assemble(const std::vector<int>& active, double reg) const {
    const auto n = s_.q.size();
    System sys;
    for (Eigen::Index i = 0; i < s_.lower.size(); ++i) {
      if (active[static_cast<std::size_t>(i)] != 0) sys.rows.push_back(i);
    }
    const auto na = static_cast<Eigen::Index>(sys.rows.size());
    sys.k = kkt_lower(s_.p, s_.ct, reg, sys.rows, Vector::Constant(na, reg));
    sys.rhs.resize(n + na);
    sys.rhs.head(n) = -s_.q;
    for (Eigen::Index r = 0; r < na; ++r) {
      const Eigen::Index i = sys.rows[static_cast<std::size_t>(r)];
      sys.rhs[n + r] = active[static_cast<std::size_t>(i)] < 0 ? s_.lower[i] : s_.upper[i];
    }
    return sys;
  }

  /// Residual of the exact system at (x, ya).
  Vector residual(const System& sys, const Vector& sol) const {
    const auto n = s_.q.size();
    const auto na = static_cast<Eigen::Index>(sys.rows.size());
    Vector y = Vector::Zero(s_.lower.size());
    for (Eigen::Index r = 0; r < na; ++r) y[sys.rows[static_cast<std::size_t>(r)]] = sol[n + r];
    const Vector x = sol.head(n);
    Vector res(n + na);
    res.head(n) = sys.rhs.head(n) - s_.p * x - s_.ct * y;
    const Vector cx = s_.c * x;
    for (Eigen::Index r = 0; r < na; ++r) {
      res[n + r] = sys.rhs[n + r] - cx[sys.rows[static_cast<std::size_t>(r)]];
    }
    return res;
  }

  template <class Factor>
  std::optional<std::pair<Vector, Vector>> refine(const System& sys, const Factor& f, int sweeps,
                                                  const std::vector<int>& active) const {
    const auto n = s_.q.size();
    Vector sol = f.solve(sys.rhs);
    const double target = 1e-15 * std::max(1.0, inf_norm(sys.rhs));
    double prev = kInf;
    for (int it = 0; it < sweeps && sol.allFinite(); ++it) {
      const Vector res = residual(sys, sol);
      const double r = inf_norm(res);
      if (r <= target || r > 0.99 * prev) break;
      prev = r;
      sol += f.solve(res);
    }
    if (!sol.allFinite()) return std::nullopt;
    Vector y = Vector::Zero(static_cast<Eigen::Index>(active.size()));
    for (std::size_t r = 0; r < sys.rows.size(); ++r) {
      y[sys.rows[r]] = sol[n + static_cast<Eigen::Index>(r)];
    }
    return std::make_pair(Vector(sol.head(n)), std::move(y));
  }

  const ScaledProblem& s_;
  double delta_;
};

}  // namespace detail

/// Solves the QP. Non-convergence and infeasibility are reported through
/// `status`, not thrown.
inline QpSolution solve_qp(const QpProblem& problem, const SolverSettings& settings = {},
                           const std::optional<WarmStart>& warm = std::nullopt) {
  using namespace detail;
  problem.validate();
  settings.validate();
  const auto n = problem.num_vars();
  const auto m = problem.num_constraints();

  const ScaledProblem s = equilibrate(problem, settings.scaling_iter);
  const auto kinds = classify_rows(s.lower, s.upper);
  double rho = settings.rho;
  Vector rho_vec = rho_vector(kinds, rho);

  // Quasi-definite KKT [P + sigma I, C'; C, -diag(1/rho)], factored once per
  // penalty value; the sparsity pattern never changes.
  std::vector<Eigen::Index> all_rows(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) all_rows[static_cast<std::size_t>(i)] = i;
  Ldlt llt;
  bool analyzed = false;
  auto factorize = [&](const Vector& rv) {
    const SparseMatrix k = kkt_lower(s.p, s.ct, settings.sigma, all_rows, rv.cwiseInverse());
    if (!analyzed) {
      llt.analyzePattern(k);
      analyzed = true;
    }
    llt.factorize(k);
    // With P + sigma I positive definite the inertia is (n, m).
    if (llt.info() != Eigen::Success || (llt.vectorD().array() > 0.0).count() != n) {
      throw InvalidProblem("KKT factorization failed; P is not positive semidefinite");
    }
  };
  factorize(rho_vec);

  Vector x = Vector::Zero(n);
  Vector y = Vector::Zero(m);
  Vector z = Vector::Zero(m);
  if (warm) {
    if (warm->x.size() != n || warm->y.size() != m) {
      throw DimensionMismatch("warm start has the wrong dimensions");
    }
    x = warm->x.cwiseQuotient(s.d);
    y = s.cost * warm->y.cwiseQuotient(s.e);
    z = project(s.c * x, s.lower, s.upper);
  }

  const Vector d_inv = s.d.cwiseInverse();
  const Vector e_inv = s.e.cwiseInverse();
  const double alpha = settings.alpha;

  QpSolution out;
  Vector x_tilde(n);
  Vector z_tilde(m);
  Vector y_prev = y;
  double prim_res = kInf;
  double dual_res = kInf;

  // Records the current ADMM iterate in `out`, then tries to polish it.
  auto take_iterate = [&]() {
    out.x = s.d.cwiseProduct(x);
    out.y = s.e.cwiseProduct(y) / s.cost;
    const KktResiduals r = kkt_residuals(problem, out.x, out.y);
    out.primal_res = r.primal;
    out.dual_res = r.dual;
  };
  auto polish = [&]() -> bool {
    if (!settings.polish || n == 0) return false;
    // Two guesses: the OSQP rule (bound slack smaller than the multiplier) and
    // a proximity rule that also catches degenerate active constraints.
    const double tol = 10.0 * (settings.eps_abs + settings.eps_rel);
    std::vector<int> by_multiplier(static_cast<std::size_t>(m), 0);
    std::vector<int> by_distance(static_cast<std::size_t>(m), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      if (kinds[idx] == RowKind::equality) {
        by_multiplier[idx] = by_distance[idx] = -1;
        continue;
      }
      if (z[i] - s.lower[i] < -y[i]) by_multiplier[idx] = -1;
      else if (s.upper[i] - z[i] < y[i]) by_multiplier[idx] = 1;
      const double scale_i = std::max(1.0, std::abs(z[i]));
      if (std::abs(z[i] - s.lower[i]) <= tol * scale_i) by_distance[idx] = -1;
      else if (std::abs(s.upper[i] - z[i]) <= tol * scale_i) by_distance[idx] = 1;
    }
    const KktResiduals best{out.primal_res, out.dual_res, 0.0};
    ActiveSetSolver kkt(s, settings);
    using Candidate = std::optional<std::pair<Vector, Vector>>;
    // Active-set refinement of a guess: release the rows with the most
    // wrong-signed multipliers, else admit the most violated rows.
    auto refine_set = [&](std::vector<int>& guess, auto&& solve_set, int max_rounds,
                          double sign_rel) -> Candidate {
      for (int round = 0; round < max_rounds; ++round) {
        Candidate sol = solve_set(guess);
        if (!sol) return std::nullopt;
        const Vector& ys = sol->second;
        const double sign_tol = sign_rel * std::max(1.0, inf_norm(ys));
        const bool batch = round < 8;
        Vector wrong = Vector::Zero(m);
        for (Eigen::Index i = 0; i < m; ++i) {
          const int a = guess[static_cast<std::size_t>(i)];
          if (a == 0 || kinds[static_cast<std::size_t>(i)] == RowKind::equality) continue;
          wrong[i] = a < 0 ? ys[i] : -ys[i];
        }
        const double worst_wrong = m > 0 ? wrong.maxCoeff() : 0.0;
        if (worst_wrong > sign_tol) {
          for (Eigen::Index i = 0; i < m; ++i) {
            if (batch ? wrong[i] >= 0.5 * worst_wrong : wrong[i] > sign_tol) {
              guess[static_cast<std::size_t>(i)] = 0;
              if (!batch) break;
            }
          }
          continue;
        }
        const Vector cz = s.c * sol->first;
        Vector viol = Vector::Zero(m);
        for (Eigen::Index i = 0; i < m; ++i) {
          if (guess[static_cast<std::size_t>(i)] != 0) continue;
          const double v = std::max(s.lower[i] - cz[i], cz[i] - s.upper[i]);
          if (v > 1e-10 * std::max(1.0, std::abs(cz[i]))) viol[i] = v;
        }
        const double worst_viol = m > 0 ? viol.maxCoeff() : 0.0;
        if (worst_viol <= 0.0) return sol;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (viol[i] >= 0.5 * worst_viol) {
            guess[static_cast<std::size_t>(i)] = s.lower[i] - cz[i] > 0.0 ? -1 : 1;
          }
        }
      }
      return std::nullopt;
    };
    auto unscaled = [&](const std::pair<Vector, Vector>& c) {
      return std::make_pair(Vector(s.d.cwiseProduct(c.first)),
                            Vector(s.e.cwiseProduct(c.second) / s.cost));
    };

    auto accept = [&](Vector px, Vector py, const KktResiduals& r) {
      const double floor = 1e-10;
      if (r.primal > std::max(best.primal, floor) || r.dual > std::max(best.dual, floor)) {
        return false;
      }
      out.x = std::move(px);
      out.y = std::move(py);
      out.primal_res = r.primal;
      out.dual_res = r.dual;
      out.polished = true;
      if (r.primal <= settings.eps_abs && r.dual <= settings.eps_abs) {
        out.status = QpStatus::optimal;
      }
      return true;
    };

    std::vector<std::vector<int>> guesses{by_multiplier};
    if (by_distance != by_multiplier) guesses.push_back(by_distance);
    for (std::vector<int> guess : guesses) {
      const Candidate coarse = refine_set(
          guess, [&](const std::vector<int>& g) { return kkt.solve(g, settings.polish_refine_iter); },
          settings.polish_max_rounds, 1e-7);
      if (!coarse) continue;
      // The coarse factor blurs directions where P is nearly flat, so the set
      // is re-checked with exact solves before it is trusted.
      auto [px, py] = unscaled(*coarse);
      KktResiduals r = kkt_residuals(problem, px, py);
      const Candidate sharp = refine_set(
          guess, [&](const std::vector<int>& g) { return kkt.sharpen(g, settings.polish_refine_iter); },
          settings.polish_sharp_rounds, 1e-9);
      if (sharp) {
        auto [sx, sy] = unscaled(*sharp);
        const KktResiduals rs = kkt_residuals(problem, sx, sy);
        if (std::max(rs.primal, rs.dual) < std::max(r.primal, r.dual)) {
          px = std::move(sx);
          py = std::move(sy);
          r = rs;
        }
      }
      if (accept(std::move(px), std::move(py), r)) return true;
    }
    // Fall back to a dual active-set solve from scratch, which needs no guess.
    const Matrix dense_p(s.p);
    DualActiveSet exact(dense_p, s.q, s.ct, s.lower, s.upper);
    if (const Candidate sol = exact.solve(static_cast<int>(10 * (n + m)) + 100)) {
      auto [px, py] = unscaled(*sol);
      const KktResiduals r = kkt_residuals(problem, px, py);
      return accept(std::move(px), std::move(py), r);
    }
    return false;
  };

  // When polishing fails the ADMM run continues at a tighter tolerance, since
  // a more accurate iterate identifies the active set more reliably.
  double tighten = 1.0;
  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= settings.max_iter; ++iter) {
    y_prev = y;
    Vector rhs(n + m);
    rhs.head(n) = settings.sigma * x - s.q;
    rhs.tail(m) = z - y.cwiseQuotient(rho_vec);
    const Vector sol = llt.solve(rhs);
    x_tilde = sol.head(n);
    z_tilde = z + (sol.tail(m) - y).cwiseQuotient(rho_vec);
    const Vector x_next = alpha * x_tilde + (1.0 - alpha) * x;
    const Vector z_relaxed = alpha * z_tilde + (1.0 - alpha) * z;
    const Vector z_next = project(z_relaxed + y.cwiseQuotient(rho_vec), s.lower, s.upper);
    y += rho_vec.cwiseProduct(z_relaxed - z_next);
    x = x_next;
    z = z_next;

    const bool check = iter % settings.check_interval == 0 || iter == settings.max_iter;
    const bool adapt = settings.adaptive_rho && iter % settings.adaptive_rho_interval == 0;
    if (!check && !adapt) continue;

    const Vector cx = s.c * x;
    const Vector px = s.p * x;
    const Vector cty = s.ct * y;
    prim_res = inf_norm(e_inv.cwiseProduct(cx - z));
    dual_res = inf_norm(d_inv.cwiseProduct(px + s.q + cty)) / s.cost;
    const double prim_scale =
        std::max(inf_norm(e_inv.cwiseProduct(cx)), inf_norm(e_inv.cwiseProduct(z)));
    const double dual_scale = std::max({inf_norm(d_inv.cwiseProduct(px)),
                                        inf_norm(d_inv.cwiseProduct(cty)),
                                        inf_norm(d_inv.cwiseProduct(s.q))}) /
                              s.cost;
    const double eps_prim = settings.eps_abs + settings.eps_rel * prim_scale;
    const double eps_dual = settings.eps_abs + settings.eps_rel * dual_scale;

    if (check && prim_res <= tighten * eps_prim && dual_res <= tighten * eps_dual) {
      converged = true;
      out.status = QpStatus::optimal;
      take_iterate();
      if (!settings.polish || polish() || tighten < 1e-4) break;
      tighten *= 0.1;
      continue;
    }

    if (check && iter >= settings.infeasibility_start && m > 0) {
      const Vector dy = y - y_prev;
      const double dy_norm = inf_norm(s.e.cwiseProduct(dy));
      if (dy_norm > 0.0) {
        const double ray = inf_norm(d_inv.cwiseProduct(s.ct * dy));
        double support = 0.0;
        bool bounded = true;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (dy[i] > 0.0) {
            if (!std::isfinite(s.upper[i])) {
              bounded = false;
              break;
            }
            support += s.upper[i] * dy[i];
          } else if (dy[i] < 0.0) {
            if (!std::isfinite(s.lower[i])) {
              bounded = false;
              break;
            }
            support += s.lower[i] * dy[i];
          }
        }
        if (bounded && ray <= settings.eps_prim_inf * dy_norm &&
            support < -settings.eps_prim_inf * dy_norm) {
          out.status = QpStatus::primal_infeasible;
          break;
        }
      }
    }

    if (adapt) {
      const double prim_rel = inf_norm(cx - z) / (std::max(inf_norm(cx), inf_norm(z)) + 1e-10);
      const double dual_rel = inf_norm(px + s.q + cty) /
                              (std::max({inf_norm(px), inf_norm(cty), inf_norm(s.q)}) + 1e-10);
      const double rho_new = std::clamp(rho * std::sqrt(prim_rel / (dual_rel + 1e-10)), 1e-6, 1e6);
      if (rho_new > 5.0 * rho || rho_new < 0.2 * rho) {
        rho = rho_new;
        rho_vec = rho_vector(kinds, rho);
        factorize(rho_vec);
      }
    }
  }
  out.iterations = std::min(iter, settings.max_iter);
  if (out.status == QpStatus::primal_infeasible) {
    out.x = s.d.cwiseProduct(x);
    out.y = s.e.cwiseProduct(y) / s.cost;
    out.primal_res = prim_res;
    out.dual_res = dual_res;
    return out;
  }
  if (!converged) {
    take_iterate();
    polish();
  }
  out.objective = problem.objective(out.x);
  return out;
}

/// Debug dump of (P, q, C, l, u) for offline inspection.
inline void write_qp_csv(std::ostream& os, const QpProblem& problem) {
  const Eigen::IOFormat csv(Eigen::FullPrecision, Eigen::DontAlignCols, ",", "\n");
  os << "# P " << problem.p.rows() << "x" << problem.p.cols() << "\n"
     << problem.p.format(csv) << "\n";
  os << "# q\n" << problem.q.transpose().format(csv) << "\n";
  os << "# C " << problem.c.rows() << "x" << problem.c.cols() << "\n"
     << problem.c.format(csv) << "\n";
  os << "# l\n" << problem.lower.transpose().format(csv) << "\n";
  os << "# u\n" << problem.upper.transpose().format(csv) << "\n";
}

}  // namespace battopt
