#ifndef HETMOGP_LINALG_HPP
#define HETMOGP_LINALG_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "hetmogp/errors.hpp"

namespace hetmogp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// A covariance matrix together with the diagonal jitter that was added to
/// make it factorizable. `entries` already contains the jitter.
struct CovMatrix {
  MatrixXd entries;
  double jitter_applied = 0.0;
};

namespace jitter_policy {
inline constexpr double kStart = 1e-8;
inline constexpr double kMax = 1e-2;
inline constexpr double kGrowth = 10.0;
}  // namespace jitter_policy

/// Lower Cholesky factor of a symmetric positive definite matrix.
class Cholesky {
 public:
  Cholesky() = default;

  /// Factorizes `a` as-is. Returns nullopt when `a` is not numerically PD.
  static std::optional<Cholesky> try_factor(const MatrixXd& a) {
    Eigen::LLT<MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Cholesky c;
    c.lower_ = llt.matrixL();
    if ((c.lower_.diagonal().array() <= 0.0).any() ||
        !c.lower_.allFinite()) {
      return std::nullopt;
    }
    return c;
  }

  static Cholesky from_lower(MatrixXd lower) {
    Cholesky c;
    c.lower_ = std::move(lower);
    return c;
  }

  const MatrixXd& lower() const { return lower_; }
  Eigen::Index size() const { return lower_.rows(); }

  MatrixXd solve(const MatrixXd& b) const {
    MatrixXd x = lower_.triangularView<Eigen::Lower>().solve(b);
    lower_.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
  }
  VectorXd solve(const VectorXd& b) const {
    VectorXd x = lower_.triangularView<Eigen::Lower>().solve(b);
    lower_.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
  }
  /// L^{-1} b
  MatrixXd half_solve(const MatrixXd& b) const {
    return lower_.triangularView<Eigen::Lower>().solve(b);
  }

  double log_det() const {
    return 2.0 * lower_.diagonal().array().log().sum();
  }

  MatrixXd inverse() const {
    return solve(MatrixXd(MatrixXd::Identity(size(), size())));
  }

  MatrixXd reconstruct() const { return lower_ * lower_.transpose(); }

 private:
  MatrixXd lower_;
};

struct JitteredFactor {
  CovMatrix cov;
  Cholesky chol;
};

/// Factorizes a gram matrix, adding diagonal jitter that starts at
/// 1e-8 * mean(diag) and grows tenfold up to 1e-2 * mean(diag).
inline JitteredFactor factor_with_jitter(const MatrixXd& gram) {
  if (gram.rows() != gram.cols()) throw ShapeError("gram matrix is not square");
  const double scale = gram.diagonal().mean();
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw IllConditionedError("gram matrix has nonpositive mean diagonal");
  }
  for (double rel = jitter_policy::kStart; rel <= jitter_policy::kMax * 1.0000001;
       rel *= jitter_policy::kGrowth) {
    const double jitter = rel * scale;
    MatrixXd k = gram;
    k.diagonal().array() += jitter;
    if (auto chol = Cholesky::try_factor(k)) {
      return {CovMatrix{std::move(k), jitter}, std::move(*chol)};
    }
  }
  throw IllConditionedError("Cholesky failed at maximum jitter " +
                            std::to_string(jitter_policy::kMax) +
                            " * mean(diag)");
}

/// Row-wise quadratic forms diag(A B A^T) for symmetric B given as a factor
/// B = F F^T: returns ||row_i(A F)||^2.
inline VectorXd row_quadratic(const MatrixXd& a, const MatrixXd& factor) {
  return (a * factor).rowwise().squaredNorm();
}

inline MatrixXd symmetrize(const MatrixXd& a) {
  return 0.5 * (a + a.transpose());
}

}  // namespace hetmogp

#endif
