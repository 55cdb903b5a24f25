#pragma once

// Dense dual active-set method (Goldfarb and Idnani) for strictly convex QPs
//
//   minimize    1/2 x'Gx + g'x
//   subject to  l <= Cx <= u
//
// Starts from the unconstrained minimizer and adds violated constraints one
// at a time while keeping dual feasibility, so it terminates in finitely many
// steps. The factor J with JJ' = inv(G) and the triangular R with J'N = [R; 0]
// are updated by Givens rotations.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace battopt::detail {

class DualActiveSet {
 public:
  using Vector = Eigen::VectorXd;
  using Matrix = Eigen::MatrixXd;
  using SparseMatrix = Eigen::SparseMatrix<double>;

  /// `ct` is C' (column i holds row i of C).
  DualActiveSet(const Matrix& g, const Vector& g0, const SparseMatrix& ct, const Vector& lower,
                const Vector& upper)
      : g_(g), g0_(g0), ct_(ct), lower_(lower), upper_(upper) {}

  /// Returns (x, y) with y in the convention Gx + g + C'y = 0, or nothing if
  /// G is not positive definite, the constraints are inconsistent, or the
  /// iteration limit is hit.
  std::optional<std::pair<Vector, Vector>> solve(int max_iter) {
    const auto n = g0_.size();
    const auto m = lower_.size();
    Eigen::LLT<Matrix> llt(g_);
    if (llt.info() != Eigen::Success) return std::nullopt;
    j_ = llt.matrixL().solve(Matrix::Identity(n, n)).transpose();
    r_ = Matrix::Zero(n, n);
    u_ = Vector::Zero(n + 1);
    active_.clear();
    x_ = -llt.solve(g0_);

    for (Eigen::Index i = 0; i < m; ++i) {
      if (!is_equality(i)) continue;
      const int code = static_cast<int>(2 * i);
      Step st = step(code);
      double t = 0.0;
      if (!st.dependent) t = -slack(code) / st.curvature;
      x_ += t * st.z;
      u_.head(iq()) -= t * st.r;
      u_[iq()] = t;
      if (st.dependent || !add(st.d, code)) return std::nullopt;
    }

    for (int iter = 0; iter < max_iter; ++iter) {
      const int p = most_violated();
      if (p < 0) return finish();
      u_[iq()] = 0.0;
      for (;;) {
        if (++iter > max_iter) return std::nullopt;
        Step st = step(p);
        double t1 = kInf;
        int drop = -1;
        for (int k = 0; k < iq(); ++k) {
          if (is_equality(active_[static_cast<std::size_t>(k)] / 2) || st.r[k] <= 0.0) continue;
          const double ratio = u_[k] / st.r[k];
          if (ratio < t1) {
            t1 = ratio;
            drop = k;
          }
        }
        const double t2 = st.dependent ? kInf : -slack(p) / st.curvature;
        const double t = std::min(t1, t2);
        if (t == kInf) return std::nullopt;
        if (t2 < kInf) x_ += t * st.z;
        u_.head(iq()) -= t * st.r;
        u_[iq()] += t;
        if (t2 <= t1) {
          if (!add(st.d, p)) return std::nullopt;
          break;
        }
        remove(drop);
      }
    }
    return std::nullopt;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  struct Step {
    Vector d;  // J' n
    Vector z;  // primal direction
    Vector r;  // change of the active multipliers
    double curvature = 0.0;
    bool dependent = false;
  };

  int iq() const { return static_cast<int>(active_.size()); }

  bool is_equality(Eigen::Index i) const {
    return upper_[i] - lower_[i] < 1e-10 * std::max(1.0, std::abs(lower_[i]));
  }

  // Even codes are lower sides (normal c_i), odd codes upper sides (normal -c_i).
  double slack(int code) const {
    const Eigen::Index i = code / 2;
    const double cx = ct_.col(i).dot(x_);
    return code % 2 == 0 ? cx - lower_[i] : upper_[i] - cx;
  }

  Step step(int code) const {
    const auto n = g0_.size();
    const Eigen::Index i = code / 2;
    const double sign = code % 2 == 0 ? 1.0 : -1.0;
    Step st;
    st.d = Vector::Zero(n);
    for (SparseMatrix::InnerIterator it(ct_, i); it; ++it) {
      st.d += (sign * it.value()) * j_.row(it.row()).transpose();
    }
    const int q = iq();
    st.z = j_.rightCols(n - q) * st.d.tail(n - q);
    st.r = r_.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(st.d.head(q));
    st.curvature = st.d.tail(n - q).squaredNorm();
    st.dependent = st.curvature <= 1e-14 * st.d.squaredNorm();
    return st;
  }

  bool add(Vector d, int code) {
    const auto n = g0_.size();
    const int q = iq();
    for (Eigen::Index k = n - 1; k > q; --k) {
      Eigen::JacobiRotation<double> rot;
      double r = 0.0;
      rot.makeGivens(d[k - 1], d[k], &r);
      d[k - 1] = r;
      d[k] = 0.0;
      j_.applyOnTheRight(k - 1, k, rot);
    }
    if (std::abs(d[q]) <= 1e-12 * d.head(q + 1).norm()) return false;
    r_.col(q).head(q + 1) = d.head(q + 1);
    active_.push_back(code);
    return true;
  }

  void remove(int k) {
    const int q = iq();
    active_.erase(active_.begin() + k);
    for (int c = k; c < q; ++c) u_[c] = u_[c + 1];
    u_[q] = 0.0;
    for (int c = k; c < q - 1; ++c) r_.col(c) = r_.col(c + 1);
    r_.col(q - 1).setZero();
    for (int c = k; c < q - 1; ++c) {
      Eigen::JacobiRotation<double> rot;
      double r = 0.0;
      rot.makeGivens(r_(c, c), r_(c + 1, c), &r);
      r_.applyOnTheLeft(c, c + 1, rot.adjoint());
      r_(c + 1, c) = 0.0;
      j_.applyOnTheRight(c, c + 1, rot);
    }
  }

  int most_violated() const {
    const Vector cx = ct_.transpose() * x_;
    std::vector<bool> is_active(static_cast<std::size_t>(2 * lower_.size()), false);
    for (int code : active_) is_active[static_cast<std::size_t>(code)] = true;
    int best = -1;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
      if (is_equality(i)) continue;
      const double lo = cx[i] - lower_[i];
      const double hi = upper_[i] - cx[i];
      const int code = static_cast<int>(lo < hi ? 2 * i : 2 * i + 1);
      const double s = std::min(lo, hi);
      const double bound = code % 2 == 0 ? lower_[i] : upper_[i];
      if (is_active[static_cast<std::size_t>(code)]) continue;
      if (s < -1e-12 * std::max(1.0, std::abs(bound)) && s < worst) {
        worst = s;
        best = code;
      }
    }
    return best;
  }

  std::pair<Vector, Vector> finish() const {
    Vector y = Vector::Zero(lower_.size());
    for (int k = 0; k < iq(); ++k) {
      const int code = active_[static_cast<std::size_t>(k)];
      y[code / 2] += code % 2 == 0 ? -u_[k] : u_[k];
    }
    return {x_, y};
  }

  const Matrix& g_;
  const Vector& g0_;
  const SparseMatrix& ct_;
  const Vector& lower_;
  const Vector& upper_;
  Matrix j_;
  Matrix r_;
  Vector u_;
  Vector x_;
  std::vector<int> active_;
};

}  // namespace battopt::detail
