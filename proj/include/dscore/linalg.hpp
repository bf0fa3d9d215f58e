#pragma once

#include <sstream>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "dscore/error.hpp"

namespace dscore {

/// Relative eigenvalue floor below which an information matrix is treated as singular.
inline constexpr double kConditionThreshold = 1e-10;

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// Inverse of a symmetric positive definite matrix via Cholesky. Fails with
/// IllConditionedInformation when min eigenvalue < threshold * max eigenvalue.
inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const std::string& what,
                                   double threshold = kConditionThreshold) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw Error(ErrorCode::DimensionMismatch, what + " must be a non-empty square matrix");
  }
  const Eigen::MatrixXd sym = symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(hi > 0.0) || !(lo >= threshold * hi)) {
    std::ostringstream msg;
    msg << what << " is not numerically positive definite (eigenvalues in [" << lo << ", " << hi
        << "])";
    throw Error(ErrorCode::IllConditionedInformation, msg.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::IllConditionedInformation, what + ": Cholesky factorization failed");
  }
  return symmetrize(llt.solve(Eigen::MatrixXd::Identity(sym.rows(), sym.cols())));
}

}  // namespace dscore
