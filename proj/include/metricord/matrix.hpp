#pragma once

#include <Eigen/Dense>
#include <string>

#include "metricord/error.hpp"

namespace metricord {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline void ensure_finite(const Matrix& m, const std::string& label) {
  if (!m.allFinite()) fail_numeric(label + " contains NaN or Inf entries");
}

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  const double scale = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
  if (scale == 0.0) return true;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace metricord
