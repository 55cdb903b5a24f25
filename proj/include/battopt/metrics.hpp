#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "battopt/errors.hpp"

namespace battopt {

/// Root-mean-square tracking error, kW.
inline double rmse(const Eigen::VectorXd& reference, const Eigen::VectorXd& fleet_net) {
  if (reference.size() != fleet_net.size()) throw LengthMismatch("rmse inputs differ in length");
  if (reference.size() == 0) return 0.0;
  return std::sqrt((reference - fleet_net).squaredNorm() / static_cast<double>(reference.size()));
}

}  // namespace battopt
