#ifndef HETMOGP_KERNELS_HPP
#define HETMOGP_KERNELS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "hetmogp/errors.hpp"
#include "hetmogp/linalg.hpp"

namespace hetmogp {

enum class Prior { LMC, CPM };

inline const char* to_string(Prior p) { return p == Prior::LMC ? "lmc" : "cpm"; }

/// Diagonal of the EQ covariance L (squared input units), one entry per
/// input dimension.
class EqLengthscales {
 public:
  EqLengthscales() = default;
  explicit EqLengthscales(VectorXd values) : values_(std::move(values)) {
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      if (!(values_[i] > 0.0) || !std::isfinite(values_[i])) {
        throw DomainError("EQ lengthscale must be positive and finite, got " +
                          std::to_string(values_[i]));
      }
    }
  }
  static EqLengthscales constant(Eigen::Index dim, double value) {
    return EqLengthscales(VectorXd::Constant(dim, value));
  }

  const VectorXd& values() const { return values_; }
  Eigen::Index size() const { return values_.size(); }

 private:
  VectorXd values_;
};

/// Smoothing kernel G_{d,j,q}(tau) = S_q * N(tau | 0, diag(kappa)) for one
/// latent parameter function.
struct SmoothingKernelParams {
  VectorXd kappa;    // length P, strictly positive
  VectorXd weights;  // length Q

  void validate() const {
    for (Eigen::Index i = 0; i < kappa.size(); ++i) {
      if (!(kappa[i] > 0.0) || !std::isfinite(kappa[i])) {
        throw DomainError("smoothing lengthscale must be positive and finite");
      }
    }
  }
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// log of the EQ normalizer |L|^{-1/2} (2 pi)^{-P/2}
inline double eq_log_norm(const VectorXd& diag) {
  return -0.5 * diag.array().log().sum() - 0.5 * static_cast<double>(diag.size()) * kLog2Pi;
}

inline void check_positive(const VectorXd& diag, const char* what) {
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    if (!(diag[i] > 0.0)) throw DomainError(std::string(what) + " must be positive");
  }
}

// Normalized Gaussian-shaped gram N(x_n - x2_m | 0, diag) between row sets.
inline MatrixXd gaussian_gram(const MatrixXd& x, const MatrixXd& x2, const VectorXd& diag) {
  if (x.cols() != x2.cols() || x.cols() != diag.size()) {
    throw ShapeError("input dimension mismatch in kernel evaluation");
  }
  const double log_norm = eq_log_norm(diag);
  const VectorXd inv = diag.cwiseInverse();
  MatrixXd k(x.rows(), x2.rows());
  for (Eigen::Index m = 0; m < x2.rows(); ++m) {
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      double quad = 0.0;
      for (Eigen::Index p = 0; p < x.cols(); ++p) {
        const double t = x(n, p) - x2(m, p);
        quad += t * t * inv[p];
      }
      k(n, m) = std::exp(log_norm - 0.5 * quad);
    }
  }
  return k;
}

}  // namespace detail

/// EQ kernel |L|^{-1/2} (2 pi)^{-P/2} exp(-tau^T L^{-1} tau / 2).
inline double eq_kernel(const VectorXd& tau, const EqLengthscales& l) {
  if (tau.size() != l.size()) throw ShapeError("tau and lengthscale lengths differ");
  const double quad = (tau.array().square() / l.values().array()).sum();
  return std::exp(detail::eq_log_norm(l.values()) - 0.5 * quad);
}

/// Zero-lag variance of the EQ kernel.
inline double eq_variance(const EqLengthscales& l) {
  return std::exp(detail::eq_log_norm(l.values()));
}

inline MatrixXd eq_gram(const MatrixXd& x, const MatrixXd& x2, const EqLengthscales& l) {
  return detail::gaussian_gram(x, x2, l.values());
}

/// cov[f_{d,j}(x), f_{d',j'}(x')] under the LMC: sum_q a_q a'_q k_q.
inline CovMatrix lmc_cov_ff(const MatrixXd& x, const MatrixXd& x2, const VectorXd& a_row,
                            const VectorXd& a_row2, const std::vector<EqLengthscales>& ls) {
  const auto q_count = static_cast<Eigen::Index>(ls.size());
  if (a_row.size() != q_count || a_row2.size() != q_count) {
    throw ShapeError("LCC row length must equal the number of latent functions");
  }
  MatrixXd k = MatrixXd::Zero(x.rows(), x2.rows());
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const double w = a_row[q] * a_row2[q];
    if (w != 0.0) k += w * eq_gram(x, x2, ls[static_cast<std::size_t>(q)]);
  }
  if (x.cols() != x2.cols()) throw ShapeError("input dimension mismatch");
  return {std::move(k), 0.0};
}

/// cov[f_{d,j}(x), u_q(z)] = a_{d,j,q} k_q(x, z).
inline CovMatrix lmc_cov_fu(const MatrixXd& x, const MatrixXd& zq, double a_djq,
                            const EqLengthscales& lq) {
  return {a_djq * eq_gram(x, zq, lq), 0.0};
}

/// Convolved-EQ cross covariance between two smoothed outputs at lag tau:
/// sum_q S1_q S2_q N(tau | 0, kappa1 + kappa2 + L_q).
inline double cpm_cov(const VectorXd& tau, const SmoothingKernelParams& sk1,
                      const SmoothingKernelParams& sk2, const std::vector<EqLengthscales>& ls) {
  sk1.validate();
  sk2.validate();
  const auto q_count = static_cast<Eigen::Index>(ls.size());
  if (sk1.weights.size() != q_count || sk2.weights.size() != q_count) {
    throw ShapeError("smoothing weights length must equal the number of latent functions");
  }
  double total = 0.0;
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const VectorXd p = sk1.kappa + sk2.kappa + ls[static_cast<std::size_t>(q)].values();
    detail::check_positive(p, "combined lengthscale");
    const double quad = (tau.array().square() / p.array()).sum();
    total += sk1.weights[q] * sk2.weights[q] * std::exp(detail::eq_log_norm(p) - 0.5 * quad);
  }
  return total;
}

inline MatrixXd cpm_gram(const MatrixXd& x, const MatrixXd& x2, const SmoothingKernelParams& sk1,
                         const SmoothingKernelParams& sk2, const std::vector<EqLengthscales>& ls) {
  sk1.validate();
  sk2.validate();
  const auto q_count = static_cast<Eigen::Index>(ls.size());
  if (sk1.weights.size() != q_count || sk2.weights.size() != q_count) {
    throw ShapeError("smoothing weights length must equal the number of latent functions");
  }
  MatrixXd k = MatrixXd::Zero(x.rows(), x2.rows());
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const double w = sk1.weights[q] * sk2.weights[q];
    if (w == 0.0) continue;
    const VectorXd p = sk1.kappa + sk2.kappa + ls[static_cast<std::size_t>(q)].values();
    k += w * detail::gaussian_gram(x, x2, p);
  }
  return k;
}

/// Zero-lag variance of one CPM latent parameter function.
inline double cpm_variance(const SmoothingKernelParams& sk, const std::vector<EqLengthscales>& ls) {
  return cpm_cov(VectorXd::Zero(sk.kappa.size()), sk, sk, ls);
}

/// Kernel hyper-parameters of either prior. Rows of `weights` index latent
/// parameter functions (d, j) in output-major order; columns index q.
struct KernelHyper {
  std::vector<EqLengthscales> lengthscales;  // Q entries
  MatrixXd weights;                          // J x Q: LCCs (LMC) or S (CPM)
  std::vector<VectorXd> kappa;               // J entries, CPM only

  SmoothingKernelParams smoothing(Eigen::Index lpf) const {
    return {kappa.at(static_cast<std::size_t>(lpf)), weights.row(lpf).transpose()};
  }
};

/// Inducing inputs: Q sets (LMC) or J sets (CPM), each M x P.
using InducingSet = std::vector<MatrixXd>;

/// Gram of one prior block over inducing inputs, without jitter.
inline MatrixXd kuu_gram(const InducingSet& z, const KernelHyper& hyper, Prior prior,
                         std::size_t block) {
  if (prior == Prior::LMC) return eq_gram(z.at(block), z.at(block), hyper.lengthscales.at(block));
  const auto sk = hyper.smoothing(static_cast<Eigen::Index>(block));
  return cpm_gram(z.at(block), z.at(block), sk, sk, hyper.lengthscales);
}

/// Factorized diagonal blocks of K_uu (block-diagonal over q for the LMC,
/// over (d, j) for the CPM).
inline std::vector<JitteredFactor> assemble_kuu(const InducingSet& z, const KernelHyper& hyper,
                                                Prior prior) {
  const std::size_t expected = prior == Prior::LMC
                                   ? hyper.lengthscales.size()
                                   : static_cast<std::size_t>(hyper.weights.rows());
  if (z.size() != expected) {
    throw ShapeError("inducing set count " + std::to_string(z.size()) + " != expected " +
                     std::to_string(expected));
  }
  std::vector<JitteredFactor> blocks;
  blocks.reserve(z.size());
  for (std::size_t b = 0; b < z.size(); ++b) {
    blocks.push_back(factor_with_jitter(kuu_gram(z, hyper, prior, b)));
  }
  return blocks;
}

/// Dense block-diagonal assembly, mostly for inspection and tests.
inline CovMatrix block_diagonal(const std::vector<JitteredFactor>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.cov.entries.rows();
  CovMatrix out{MatrixXd::Zero(n, n), 0.0};
  Eigen::Index off = 0;
  for (const auto& b : blocks) {
    const auto m = b.cov.entries.rows();
    out.entries.block(off, off, m, m) = b.cov.entries;
    out.jitter_applied = std::max(out.jitter_applied, b.cov.jitter_applied);
    off += m;
  }
  return out;
}

}  // namespace hetmogp

#endif
