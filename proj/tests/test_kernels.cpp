#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "hetmogp/kernels.hpp"

using namespace hetmogp;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Independent scalar evaluation of the normalized EQ form.
double oracle_eq(const Eigen::VectorXd& tau, const Eigen::VectorXd& l) {
  double det = 1.0, quad = 0.0;
  for (Eigen::Index p = 0; p < tau.size(); ++p) {
    det *= l[p];
    quad += tau[p] * tau[p] / l[p];
  }
  return std::exp(-0.5 * quad) / std::sqrt(det * std::pow(kTwoPi, static_cast<double>(tau.size())));
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

double min_eig_ratio(const Eigen::MatrixXd& k) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
  return es.eigenvalues().minCoeff() / es.eigenvalues().maxCoeff();
}

}  // namespace

TEST(EqKernel, ZeroLag) {
  EXPECT_NEAR(eq_kernel(Eigen::VectorXd::Zero(1), EqLengthscales::constant(1, 1.0)), 0.3989423, 1e-7);
}

TEST(EqKernel, UnitLag) {
  EXPECT_NEAR(eq_kernel(Eigen::VectorXd::Ones(1), EqLengthscales::constant(1, 1.0)), 0.2419707, 1e-7);
}

TEST(EqKernel, EvenAndBounded) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Eigen::VectorXd tau = random_matrix(rng, 3, 1, -2, 2);
    const EqLengthscales l(random_matrix(rng, 3, 1, 0.1, 2.0));
    const double k = eq_kernel(tau, l);
    EXPECT_EQ(k, eq_kernel(-tau, l));
    EXPECT_GT(k, 0.0);
    EXPECT_LE(k, eq_variance(l));
    EXPECT_NEAR(k, oracle_eq(tau, l.values()), 1e-14);
  }
}

TEST(EqKernel, RejectsNonpositiveLengthscale) {
  EXPECT_THROW(EqLengthscales::constant(2, 0.0), DomainError);
  EXPECT_THROW(EqLengthscales(Eigen::Vector2d(1.0, -1.0)), DomainError);
}

TEST(LmcCovFF, OneHotCollapsesToSingleGram) {
  std::mt19937_64 rng(5);
  const auto x = random_matrix(rng, 5, 2);
  const auto x2 = random_matrix(rng, 4, 2);
  std::vector<EqLengthscales> ls{EqLengthscales::constant(2, 0.3), EqLengthscales::constant(2, 0.7)};
  const Eigen::VectorXd e1 = Eigen::Vector2d(1.0, 0.0);
  const auto k = lmc_cov_ff(x, x2, e1, e1, ls);
  EXPECT_LT((k.entries - eq_gram(x, x2, ls[0])).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LmcCovFF, ZeroWeightsGiveZero) {
  std::mt19937_64 rng(6);
  const auto x = random_matrix(rng, 4, 1);
  std::vector<EqLengthscales> ls{EqLengthscales::constant(1, 0.3), EqLengthscales::constant(1, 0.7)};
  const auto k = lmc_cov_ff(x, x, Eigen::Vector2d::Zero(), Eigen::Vector2d(1.0, 2.0), ls);
  EXPECT_EQ(k.entries.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LmcCovFF, MatchesPerEntryLoop) {
  Eigen::MatrixXd x(3, 1);
  x << 0.0, 0.5, 1.0;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  const Eigen::Vector2d a(n01(rng), n01(rng)), a2(n01(rng), n01(rng));
  std::vector<EqLengthscales> ls{EqLengthscales::constant(1, 0.2), EqLengthscales::constant(1, 1.3)};
  const auto k = lmc_cov_ff(x, x, a, a2, ls);
  for (int n = 0; n < 3; ++n) {
    for (int m = 0; m < 3; ++m) {
      double want = 0.0;
      for (int q = 0; q < 2; ++q) {
        want += a[q] * a2[q] * oracle_eq(Eigen::VectorXd::Constant(1, x(n, 0) - x(m, 0)), ls[q].values());
      }
      EXPECT_NEAR(k.entries(n, m), want, 1e-14);
    }
  }
}

TEST(LmcCovFF, ShapeMismatchThrows) {
  std::vector<EqLengthscales> ls{EqLengthscales::constant(1, 0.2)};
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 1);
  EXPECT_THROW(lmc_cov_ff(x, x, Eigen::Vector2d::Ones(), Eigen::VectorXd::Ones(1), ls), ShapeError);
  EXPECT_THROW(lmc_cov_ff(x, Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Ones(1),
                          Eigen::VectorXd::Ones(1), ls),
               ShapeError);
}

TEST(LmcCovFU, ZeroCoefficientGivesZeroBlock) {
  std::mt19937_64 rng(8);
  const auto x = random_matrix(rng, 4, 2);
  const auto z = random_matrix(rng, 3, 2);
  EXPECT_EQ(lmc_cov_fu(x, z, 0.0, EqLengthscales::constant(2, 0.5)).entries.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LmcCovFU, SelfGramIsSymmetric) {
  std::mt19937_64 rng(9);
  const auto x = random_matrix(rng, 6, 2);
  const auto k = lmc_cov_fu(x, x, 1.0, EqLengthscales::constant(2, 0.5)).entries;
  EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-12 * k.cwiseAbs().maxCoeff());
}

TEST(LmcCovFU, MatchesScalarLoop) {
  std::mt19937_64 rng(10);
  const auto x = random_matrix(rng, 5, 2);
  const auto z = random_matrix(rng, 3, 2);
  const EqLengthscales l(Eigen::Vector2d(0.3, 0.8));
  const auto k = lmc_cov_fu(x, z, -0.7, l).entries;
  for (int n = 0; n < 5; ++n)
    for (int m = 0; m < 3; ++m)
      EXPECT_NEAR(k(n, m), -0.7 * oracle_eq((x.row(n) - z.row(m)).transpose(), l.values()), 1e-14);
}

TEST(CpmCov, ReducesToEqAsSmoothingVanishes) {
  std::vector<EqLengthscales> ls{EqLengthscales::constant(2, 0.4), EqLengthscales::constant(2, 0.9)};
  SmoothingKernelParams sk{Eigen::VectorXd::Constant(2, 1e-10), Eigen::Vector2d(1.0, 0.0)};
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd tau = random_matrix(rng, 2, 1, -1, 1);
    EXPECT_LT(std::abs(cpm_cov(tau, sk, sk, ls) - eq_kernel(tau, ls[0])), 1e-8);
  }
}

TEST(CpmCov, ClosedFormAtZeroLag) {
  std::vector<EqLengthscales> ls{EqLengthscales::constant(1, 1.0)};
  SmoothingKernelParams sk{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)};
  EXPECT_NEAR(cpm_cov(Eigen::VectorXd::Zero(1), sk, sk, ls), 0.2303294, 1e-7);
}

TEST(CpmCov, RejectsNonpositiveSmoothing) {
  std::vector<EqLengthscales> ls{EqLengthscales::constant(1, 1.0)};
  SmoothingKernelParams bad{Eigen::VectorXd::Constant(1, -0.1), Eigen::VectorXd::Ones(1)};
  SmoothingKernelParams ok{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)};
  EXPECT_THROW(cpm_cov(Eigen::VectorXd::Zero(1), bad, ok, ls), DomainError);
}

TEST(CpmCov, GramIsPsd) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01;
  std::vector<EqLengthscales> ls{EqLengthscales::constant(2, 0.2), EqLengthscales::constant(2, 0.6)};
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_matrix(rng, 10, 2);
    SmoothingKernelParams sk{random_matrix(rng, 2, 1, 0.01, 0.5), Eigen::Vector2d(n01(rng), n01(rng))};
    const auto k = cpm_gram(x, x, sk, sk, ls);
    EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-12 * k.cwiseAbs().maxCoeff());
    EXPECT_GE(min_eig_ratio(k), -1e-8);
  }
}

TEST(CpmCov, GramMatchesPointwise) {
  std::mt19937_64 rng(13);
  const auto x = random_matrix(rng, 4, 1);
  const auto x2 = random_matrix(rng, 3, 1);
  std::vector<EqLengthscales> ls{EqLengthscales::constant(1, 0.2)};
  SmoothingKernelParams s1{Eigen::VectorXd::Constant(1, 0.1), Eigen::VectorXd::Constant(1, 1.5)};
  SmoothingKernelParams s2{Eigen::VectorXd::Constant(1, 0.3), Eigen::VectorXd::Constant(1, -0.4)};
  const auto k = cpm_gram(x, x2, s1, s2, ls);
  for (int n = 0; n < 4; ++n)
    for (int m = 0; m < 3; ++m)
      EXPECT_NEAR(k(n, m), cpm_cov((x.row(n) - x2.row(m)).transpose(), s1, s2, ls), 1e-15);
}

TEST(LmcGram, IsPsd) {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n01;
  std::vector<EqLengthscales> ls{EqLengthscales::constant(1, 0.05), EqLengthscales::constant(1, 0.5)};
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_matrix(rng, 10, 1);
    const Eigen::Vector2d a(n01(rng), n01(rng));
    EXPECT_GE(min_eig_ratio(lmc_cov_ff(x, x, a, a, ls).entries), -1e-8);
  }
}

namespace {

KernelHyper lmc_hyper() {
  KernelHyper h;
  h.lengthscales = {EqLengthscales::constant(2, 0.3), EqLengthscales::constant(2, 0.8)};
  h.weights = Eigen::MatrixXd::Ones(3, 2);
  return h;
}

}  // namespace

TEST(AssembleKuu, SingleInducingPointGivesZeroLagVariances) {
  const auto h = lmc_hyper();
  InducingSet z{Eigen::MatrixXd::Constant(1, 2, 0.3), Eigen::MatrixXd::Constant(1, 2, 0.9)};
  const auto kuu = block_diagonal(assemble_kuu(z, h, Prior::LMC));
  ASSERT_EQ(kuu.entries.rows(), 2);
  EXPECT_EQ(kuu.entries(0, 1), 0.0);
  for (int q = 0; q < 2; ++q) {
    const double v = eq_variance(h.lengthscales[static_cast<std::size_t>(q)]);
    EXPECT_NEAR(kuu.entries(q, q), v, 1e-7 * v);
  }
}

TEST(AssembleKuu, DuplicatesNeedJitter) {
  const auto h = lmc_hyper();
  Eigen::MatrixXd dup(3, 2);
  dup << 0.2, 0.2, 0.2, 0.2, 0.7, 0.1;
  InducingSet z{dup, dup};
  const auto blocks = assemble_kuu(z, h, Prior::LMC);
  for (const auto& b : blocks) EXPECT_GT(b.cov.jitter_applied, 0.0);
  for (const auto& b : blocks) {
    EXPECT_LT((b.chol.reconstruct() - b.cov.entries).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AssembleKuu, LmcMatchesEntrywiseOracle) {
  const auto h = lmc_hyper();
  std::mt19937_64 rng(15);
  InducingSet z{random_matrix(rng, 3, 2), random_matrix(rng, 3, 2)};
  const auto blocks = assemble_kuu(z, h, Prior::LMC);
  const auto k = block_diagonal(blocks);
  ASSERT_EQ(k.entries.rows(), 6);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) {
      const int qr = r / 3, qc = c / 3;
      double want = 0.0;
      if (qr == qc) {
        want = oracle_eq((z[qr].row(r % 3) - z[qc].row(c % 3)).transpose(), h.lengthscales[qr].values());
        if (r == c) want += blocks[qr].cov.jitter_applied;
      }
      EXPECT_NEAR(k.entries(r, c), want, 1e-14);
    }
  }
  EXPECT_LT((k.entries - k.entries.transpose()).cwiseAbs().maxCoeff(), 1e-12 * k.entries.cwiseAbs().maxCoeff());
}

TEST(AssembleKuu, CpmBlocksFollowSmoothingParameters) {
  KernelHyper h;
  h.lengthscales = {EqLengthscales::constant(1, 0.3), EqLengthscales::constant(1, 0.8)};
  h.weights.resize(2, 2);
  h.weights << 1.0, -0.5, 0.3, 2.0;
  h.kappa = {Eigen::VectorXd::Constant(1, 0.05), Eigen::VectorXd::Constant(1, 0.2)};
  std::mt19937_64 rng(16);
  InducingSet z{random_matrix(rng, 4, 1), random_matrix(rng, 4, 1)};
  const auto blocks = assemble_kuu(z, h, Prior::CPM);
  for (int j = 0; j < 2; ++j) {
    const auto sk = h.smoothing(j);
    Eigen::MatrixXd want = cpm_gram(z[j], z[j], sk, sk, h.lengthscales);
    want.diagonal().array() += blocks[j].cov.jitter_applied;
    EXPECT_LT((blocks[j].cov.entries - want).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_GT(min_eig_ratio(blocks[j].cov.entries), 0.0);
  }
}

TEST(AssembleKuu, WrongBlockCountThrows) {
  const auto h = lmc_hyper();
  InducingSet z{Eigen::MatrixXd::Zero(2, 2)};
  EXPECT_THROW(assemble_kuu(z, h, Prior::LMC), ShapeError);
}

TEST(Jitter, IndefiniteMatrixFails) {
  Eigen::Matrix2d a;
  a << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(factor_with_jitter(a), IllConditionedError);
}

TEST(Jitter, WellConditionedMatrixGetsMinimalJitter) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(3, 3) * 2.0;
  const auto f = factor_with_jitter(a);
  EXPECT_DOUBLE_EQ(f.cov.jitter_applied, 2e-8);
}
