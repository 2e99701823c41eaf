#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "hetmogp/model.hpp"
#include "oracles.hpp"

using namespace hetmogp;
using namespace hetmogp::oracles;

namespace {

// Dense oracle for q(f_j) marginals, assembled from the full block-diagonal K_uu.
MarginalPosterior oracle_marginal(const ModelConfig& cfg, const MatrixXd& x, const VariationalPosterior& post,
                                  const ModelParams& params, int j) {
  const auto kuu = prior_blocks(cfg, params);
  const int m = cfg.num_inducing;
  const int nb = cfg.num_blocks();
  MatrixXd k_full = MatrixXd::Zero(nb * m, nb * m);
  MatrixXd v_full = MatrixXd::Zero(nb * m, nb * m);
  VectorXd m_full(nb * m);
  MatrixXd kfu = MatrixXd::Zero(x.rows(), nb * m);
  double k0 = 0.0;
  for (int b = 0; b < nb; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    k_full.block(b * m, b * m, m, m) = kuu[ub].cov.entries;
    v_full.block(b * m, b * m, m, m) = post.blocks[ub].covariance();
    m_full.segment(b * m, m) = post.blocks[ub].mean;
  }
  if (cfg.prior == Prior::LMC) {
    for (int q = 0; q < nb; ++q) {
      const double a = params.hyper.weights(j, q);
      kfu.block(0, q * m, x.rows(), m) = a * eq_gram(x, params.z[static_cast<std::size_t>(q)],
                                                     params.hyper.lengthscales[static_cast<std::size_t>(q)]);
      k0 += a * a * eq_variance(params.hyper.lengthscales[static_cast<std::size_t>(q)]);
    }
  } else {
    const auto sk = params.hyper.smoothing(j);
    kfu.block(0, j * m, x.rows(), m) = cpm_gram(x, params.z[static_cast<std::size_t>(j)], sk, sk, params.hyper.lengthscales);
    k0 = cpm_variance(sk, params.hyper.lengthscales);
  }
  const MatrixXd a = kfu * k_full.inverse();
  MarginalPosterior out;
  out.mean = a * m_full;
  out.variance = (VectorXd::Constant(x.rows(), k0) + (a * (v_full - k_full) * a.transpose()).diagonal())
                     .cwiseMax(kVarianceFloor);
  return out;
}

// KL(N(m, V) || N(0, K)) from generalized eigenvalues of (V, K).
double oracle_kl(const VectorXd& m, const MatrixXd& v, const MatrixXd& k) {
  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(v, k);
  const VectorXd lam = es.eigenvalues();
  return 0.5 * (lam.sum() - lam.array().log().sum() + m.dot(k.ldlt().solve(m)) - static_cast<double>(m.size()));
}

}  // namespace

TEST(Marginals, PriorPosteriorGivesPriorVariance) {
  std::mt19937_64 rng(40);
  for (Prior prior : {Prior::LMC, Prior::CPM}) {
    const auto cfg = make_cfg(prior, {LikelihoodSpec::het_gaussian()}, 2, 4, 1);
    const auto params = random_params(cfg, rng);
    const auto kuu = prior_blocks(cfg, params);
    VariationalPosterior post;
    for (const auto& k : kuu) post.blocks.push_back({VectorXd::Zero(4), k.chol.lower()});
    MatrixXd x(5, 1);
    x << 0.1, 0.3, 0.5, 0.7, 0.9;
    const auto marg = marginal_posteriors(cfg, x, post, params);
    for (int j = 0; j < 2; ++j) {
      double k0 = 0.0;
      if (prior == Prior::LMC) {
        for (int q = 0; q < 2; ++q)
          k0 += std::pow(params.hyper.weights(j, q), 2) * eq_variance(params.hyper.lengthscales[static_cast<std::size_t>(q)]);
      } else {
        k0 = cpm_variance(params.hyper.smoothing(j), params.hyper.lengthscales);
      }
      EXPECT_LT(marg[static_cast<std::size_t>(j)].mean.cwiseAbs().maxCoeff(), 1e-12);
      for (int n = 0; n < 5; ++n) EXPECT_NEAR(marg[static_cast<std::size_t>(j)].variance[n], k0, 1e-8 * k0);
    }
  }
}

TEST(Marginals, InterpolatesAtInducingInputs) {
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::gaussian(1.0)}, 1, 4, 1);
  ModelParams params;
  params.hyper.lengthscales = {EqLengthscales::constant(1, 0.01)};
  params.hyper.weights = MatrixXd::Ones(1, 1);
  MatrixXd z(4, 1);
  z << 0.0, 0.4, 0.7, 1.0;
  params.z = {z};
  VariationalPosterior post;
  post.blocks.push_back({Eigen::Vector4d(0.3, -1.2, 0.8, 2.0), 1e-9 * MatrixXd::Identity(4, 4)});
  const auto marg = marginal_posteriors(cfg, z, post, params);
  EXPECT_LT((marg[0].mean - post.blocks[0].mean).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(marg[0].variance.maxCoeff(), 1e-6);
}

TEST(Marginals, MatchDenseOracle) {
  std::mt19937_64 rng(41);
  for (Prior prior : {Prior::LMC, Prior::CPM}) {
    SCOPED_TRACE(to_string(prior));
    const auto cfg = make_cfg(prior, {LikelihoodSpec::het_gaussian(), LikelihoodSpec::bernoulli()}, 2, 3, 2);
    const auto params = random_params(cfg, rng);
    const auto post = random_post(cfg, rng);
    MatrixXd x = MatrixXd::Random(6, 2).cwiseAbs();
    const auto marg = marginal_posteriors(cfg, x, post, params);
    for (int j = 0; j < cfg.num_lpf(); ++j) {
      const auto want = oracle_marginal(cfg, x, post, params, j);
      const auto& got = marg[static_cast<std::size_t>(j)];
      for (int n = 0; n < 6; ++n) {
        EXPECT_LT(rel(got.mean[n], want.mean[n], 1e-6), 1e-7);
        EXPECT_LT(rel(got.variance[n], want.variance[n], 1e-6), 1e-7);
        EXPECT_GT(got.variance[n], 0.0);
      }
    }
  }
}

TEST(Marginals, SingleOutputAccessor) {
  std::mt19937_64 rng(42);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::bernoulli(), LikelihoodSpec::het_gaussian()}, 2, 3, 1);
  const auto params = random_params(cfg, rng);
  const auto post = random_post(cfg, rng);
  const MatrixXd x = MatrixXd::Random(4, 1);
  const auto all = marginal_posteriors(cfg, x, post, params);
  const auto one = marginal_posterior(cfg, x, post, params, 1, 1);
  EXPECT_EQ(one.mean, all[2].mean);
  EXPECT_EQ(one.variance, all[2].variance);
  EXPECT_THROW(marginal_posterior(cfg, x, post, params, 0, 1), ShapeError);
  EXPECT_THROW(marginal_posterior(cfg, x, post, params, 2, 0), ShapeError);
}

TEST(Kl, ZeroAtPrior) {
  std::mt19937_64 rng(43);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::gaussian(1.0)}, 1, 4, 1);
  const auto params = random_params(cfg, rng);
  const auto kuu = prior_blocks(cfg, params);
  EXPECT_NEAR(kl_gaussian({VectorXd::Zero(4), kuu[0].chol.lower()}, kuu[0]), 0.0, 1e-8);
}

TEST(Kl, ScalarCase) {
  EXPECT_NEAR(kl_gaussian(VectorXd::Ones(1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)), 0.5, 1e-12);
}

TEST(Kl, MatchesEigenvalueOracle) {
  std::mt19937_64 rng(44);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::gaussian(1.0)}, 1, 3, 1);
  for (int t = 0; t < 10; ++t) {
    const auto post = random_post(cfg, rng);
    const MatrixXd r = MatrixXd::Random(3, 3);
    const MatrixXd k = r * r.transpose() + 0.5 * MatrixXd::Identity(3, 3);
    const auto& b = post.blocks[0];
    const double got = kl_gaussian(b.mean, b.covariance(), k);
    EXPECT_NEAR(got, oracle_kl(b.mean, b.covariance(), k), 1e-10 * std::max(1.0, got));
    EXPECT_GT(got, 0.0);
  }
}

TEST(Kl, PositiveAwayFromEquality) {
  const MatrixXd k = (MatrixXd(2, 2) << 2.0, 0.3, 0.3, 1.0).finished();
  EXPECT_NEAR(kl_gaussian(VectorXd::Zero(2), k, k), 0.0, 1e-14);
  EXPECT_GT(kl_gaussian(VectorXd::Constant(2, 1e-3), k, k), 0.0);
  EXPECT_GT(kl_gaussian(VectorXd::Zero(2), 1.01 * k, k), 0.0);
}

TEST(Kl, RejectsIndefiniteCovariance) {
  const MatrixXd bad = (MatrixXd(2, 2) << 1.0, 2.0, 2.0, 1.0).finished();
  EXPECT_THROW(kl_gaussian(VectorXd::Zero(2), bad, MatrixXd::Identity(2, 2)), DomainError);
}

TEST(Kl, StandardFormMatchesGeneral) {
  std::mt19937_64 rng(45);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::gaussian(1.0)}, 1, 4, 1);
  const auto post = random_post(cfg, rng);
  const auto& b = post.blocks[0];
  EXPECT_NEAR(kl_standard(b), kl_gaussian(b.mean, b.covariance(), MatrixXd::Identity(4, 4)), 1e-12);
}

TEST(Nelbo, AllMissingLeavesOnlyKl) {
  std::mt19937_64 rng(46);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::het_gaussian(), LikelihoodSpec::bernoulli()}, 2, 3, 1);
  const auto params = random_params(cfg, rng);
  const auto post = random_post(cfg, rng);
  auto data = make_data(cfg, 5, rng);
  data.Y.setConstant(std::nan(""));
  Rng r = make_rng(1);
  const auto e = evaluate_nelbo(cfg, data, MiniBatch::full(5), post, params, ExpectationOptions{}, r, true);
  const auto kuu = prior_blocks(cfg, params);
  double kl = 0.0;
  for (std::size_t b = 0; b < 2; ++b) kl += kl_gaussian(post.blocks[b], kuu[b]);
  EXPECT_EQ(e.data_term, 0.0);
  EXPECT_NEAR(e.value, kl, 1e-12 * kl);
  for (std::size_t b = 0; b < 2; ++b) {
    const MatrixXd kinv = kuu[b].cov.entries.inverse();
    const MatrixXd vinv = post.blocks[b].covariance().inverse();
    EXPECT_LT((e.grad.dm[b] - kinv * post.blocks[b].mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((e.grad.dV[b] + 0.5 * (vinv - kinv)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Nelbo, KlGradientVanishesAtPrior) {
  std::mt19937_64 rng(47);
  const auto cfg = make_cfg(Prior::CPM, {LikelihoodSpec::bernoulli()}, 2, 3, 1);
  const auto params = random_params(cfg, rng);
  const auto kuu = prior_blocks(cfg, params);
  VariationalPosterior post{{{VectorXd::Zero(3), kuu[0].chol.lower()}}};
  auto data = make_data(cfg, 4, rng);
  data.Y.setConstant(std::nan(""));
  Rng r = make_rng(1);
  const auto g = grad_variational(cfg, data, MiniBatch::full(4), post, params, ExpectationOptions{}, r);
  EXPECT_LT(g.dm[0].cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(g.dV[0].cwiseAbs().maxCoeff(), 1e-6 * kuu[0].cov.entries.inverse().cwiseAbs().maxCoeff());
}

TEST(Nelbo, MinibatchPartitionAveragesToFullData) {
  std::mt19937_64 rng(48);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::het_gaussian(), LikelihoodSpec::gaussian(0.5)}, 2, 3, 1);
  const auto params = random_params(cfg, rng);
  const auto post = random_post(cfg, rng);
  const auto data = make_data(cfg, 8, rng);
  Rng r = make_rng(2);
  const auto full = evaluate_nelbo(cfg, data, MiniBatch::full(8), post, params, ExpectationOptions{}, r, false);
  double avg = 0.0;
  for (int part = 0; part < 4; ++part) {
    MiniBatch b{{static_cast<std::size_t>(2 * part), static_cast<std::size_t>(2 * part + 1)}, 4.0};
    avg += evaluate_nelbo(cfg, data, b, post, params, ExpectationOptions{}, r, false).data_term / 4.0;
  }
  EXPECT_NEAR(avg, full.data_term, 1e-10 * std::abs(full.data_term));
}

TEST(Nelbo, TinyBernoulliMatchesStraightLineOracle) {
  std::mt19937_64 rng(49);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::bernoulli()}, 1, 2, 1);
  const auto params = random_params(cfg, rng);
  const auto post = random_post(cfg, rng);
  const auto data = make_data(cfg, 5, rng);
  Rng r = make_rng(3);
  Rng replay = r;
  const double got = nelbo(cfg, data, MiniBatch::full(5), post, params, ExpectationOptions{}, r);

  const auto marg = oracle_marginal(cfg, data.X, post, params, 0);
  double want = 0.0;
  for (int n = 0; n < 5; ++n) {
    std::normal_distribution<double> n01;
    double s = 0.0;
    for (int k = 0; k < 20; ++k) {
      const double f = marg.mean[n] + std::sqrt(marg.variance[n]) * n01(replay);
      s += std::log1p(std::exp(f)) - data.Y(n, 0) * f;
    }
    want += s / 20.0;
  }
  const auto kuu = prior_blocks(cfg, params);
  want += oracle_kl(post.blocks[0].mean, post.blocks[0].covariance(), kuu[0].cov.entries);
  EXPECT_NEAR(got, want, 1e-9 * std::abs(want));
}


TEST(Gradients, LmcMatchesFiniteDifferences) {
  EXPECT_LT(max_gradient_error(make_cfg(Prior::LMC, {LikelihoodSpec::het_gaussian(), LikelihoodSpec::bernoulli()}, 2, 3, 1), 50), 1e-4);
}

TEST(Gradients, CpmMatchesFiniteDifferences) {
  EXPECT_LT(max_gradient_error(make_cfg(Prior::CPM, {LikelihoodSpec::het_gaussian(), LikelihoodSpec::bernoulli()}, 2, 3, 1), 51), 1e-4);
}

TEST(Gradients, NonConjugateFamiliesMatchFiniteDifferences) {
  EXPECT_LT(max_gradient_error(make_cfg(Prior::LMC, {LikelihoodSpec::beta(), LikelihoodSpec::gamma()}, 2, 3, 2), 52), 1e-4);
  EXPECT_LT(max_gradient_error(make_cfg(Prior::CPM, {LikelihoodSpec::poisson(), LikelihoodSpec::exponential()}, 2, 3, 1), 53), 1e-4);
}

TEST(Gradients, WhitenedMatchFiniteDifferences) {
  EXPECT_LT(max_gradient_error(make_cfg(Prior::LMC, {LikelihoodSpec::het_gaussian(), LikelihoodSpec::bernoulli()}, 2, 3, 1,
                           Coordinates::Whitened),
                  54), 1e-4);
  EXPECT_LT(max_gradient_error(make_cfg(Prior::CPM, {LikelihoodSpec::het_gaussian(), LikelihoodSpec::bernoulli()}, 2, 3, 1,
                           Coordinates::Whitened),
                  55), 1e-4);
}

TEST(Gradients, MonteCarloMeanGradientWithCommonRandomNumbers) {
  std::mt19937_64 rng(56);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::bernoulli(), LikelihoodSpec::beta()}, 2, 3, 1);
  const auto params = random_params(cfg, rng);
  const auto post = random_post(cfg, rng, 0.3);
  const auto data = make_data(cfg, 6, rng);
  Rng r = make_rng(9);
  const auto g = grad_variational(cfg, data, MiniBatch::full(6), post, params, ExpectationOptions{}, r);
  const double h = 1e-6;
  for (std::size_t b = 0; b < 2; ++b) {
    for (Eigen::Index i = 0; i < 3; ++i) {
      auto pp = post, pm = post;
      pp.blocks[b].mean[i] += h;
      pm.blocks[b].mean[i] -= h;
      Rng r1 = make_rng(9), r2 = make_rng(9);
      const double fd = (nelbo(cfg, data, MiniBatch::full(6), pp, params, ExpectationOptions{}, r1) -
                         nelbo(cfg, data, MiniBatch::full(6), pm, params, ExpectationOptions{}, r2)) /
                        (2 * h);
      EXPECT_LT(rel(g.dm[b][i], fd, 1e-4), 1e-4);
    }
  }
}

TEST(Gradients, LmcCpmParityAtVanishingSmoothing) {
  EXPECT_LT(lmc_cpm_parity(57), 1e-6);
}

TEST(Whitening, RoundTripAndEquivalentObjective) {
  std::mt19937_64 rng(58);
  auto raw = make_cfg(Prior::LMC, {LikelihoodSpec::het_gaussian(), LikelihoodSpec::gaussian(0.3)}, 2, 3, 1);
  auto white = raw;
  white.coords = Coordinates::Whitened;
  const auto params = random_params(raw, rng);
  const auto kuu = prior_blocks(raw, params);
  const auto pw = random_post(white, rng);
  const auto pr = unwhiten(pw, kuu);
  const auto back = whiten(pr, kuu);
  for (std::size_t b = 0; b < 2; ++b) {
    EXPECT_LT((back.blocks[b].mean - pw.blocks[b].mean).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((back.blocks[b].factor - pw.blocks[b].factor).cwiseAbs().maxCoeff(), 1e-10);
  }
  const auto data = make_data(raw, 6, rng);
  Rng r1 = make_rng(5), r2 = make_rng(5);
  const auto ew = evaluate_nelbo(white, data, MiniBatch::full(6), pw, params, ExpectationOptions{}, r1, true);
  const auto er = evaluate_nelbo(raw, data, MiniBatch::full(6), pr, params, ExpectationOptions{}, r2, true);
  EXPECT_NEAR(ew.value, er.value, 1e-8 * std::abs(er.value));
  for (std::size_t b = 0; b < 2; ++b) {
    const MatrixXd l = kuu[b].chol.lower();
    const VectorXd dm = l.transpose() * er.grad.dm[b];
    const MatrixXd dv = l.transpose() * er.grad.dV[b] * l;
    EXPECT_LT((ew.grad.dm[b] - dm).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, dm.cwiseAbs().maxCoeff()));
    EXPECT_LT((ew.grad.dV[b] - dv).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, dv.cwiseAbs().maxCoeff()));
  }
}

TEST(Predict, AtTrainingInputsEqualsMarginals) {
  std::mt19937_64 rng(59);
  const auto cfg = make_cfg(Prior::CPM, {LikelihoodSpec::het_gaussian()}, 2, 3, 1);
  const auto params = random_params(cfg, rng);
  const auto post = random_post(cfg, rng);
  const MatrixXd x = MatrixXd::Random(7, 1);
  const auto a = predict(cfg, x, post, params);
  const auto b = marginal_posteriors(cfg, x, post, params);
  const auto c = predict(cfg, x, post, params);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].mean, b[j].mean);
    EXPECT_EQ(a[j].variance, b[j].variance);
    EXPECT_EQ(a[j].mean, c[j].mean);
    EXPECT_EQ(a[j].variance, c[j].variance);
  }
}

TEST(Predict, FarFieldRevertsToPrior) {
  std::mt19937_64 rng(60);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::bernoulli(), LikelihoodSpec::gaussian(1.0)}, 2, 3, 1);
  const auto params = random_params(cfg, rng);
  const auto post = random_post(cfg, rng);
  const MatrixXd far = MatrixXd::Constant(2, 1, 100.0);
  const auto marg = predict(cfg, far, post, params);
  for (int j = 0; j < 2; ++j) {
    double k0 = 0.0;
    for (int q = 0; q < 2; ++q)
      k0 += std::pow(params.hyper.weights(j, q), 2) * eq_variance(params.hyper.lengthscales[static_cast<std::size_t>(q)]);
    EXPECT_LT(marg[static_cast<std::size_t>(j)].mean.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(marg[static_cast<std::size_t>(j)].variance[0], k0, 1e-12 * k0);
  }
}

TEST(TestNlpd, EmptyOutputIsMarkedNaN) {
  std::mt19937_64 rng(61);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::bernoulli(), LikelihoodSpec::gaussian(1.0)}, 1, 3, 1);
  const auto params = random_params(cfg, rng);
  const auto post = random_post(cfg, rng);
  auto test = make_data(cfg, 4, rng);
  test.Y.col(1).setConstant(std::nan(""));
  Rng r = make_rng(6);
  const auto v = test_nlpd(cfg, test, post, params, 100, r);
  EXPECT_TRUE(std::isfinite(v[0]));
  EXPECT_TRUE(std::isnan(v[1]));
}

TEST(TestNlpd, CollapsedPredictiveOnExactTargets) {
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::gaussian(1.0)}, 1, 4, 1);
  ModelParams params;
  params.hyper.lengthscales = {EqLengthscales::constant(1, 0.01)};
  params.hyper.weights = MatrixXd::Ones(1, 1);
  MatrixXd z(4, 1);
  z << 0.0, 0.4, 0.7, 1.0;
  params.z = {z};
  const auto kuu = prior_blocks(cfg, params);
  const Eigen::Vector4d m(0.3, -1.2, 0.8, 2.0);
  VariationalPosterior post{{{m, 1e-9 * MatrixXd::Identity(4, 4)}}};
  Dataset test;
  test.X = z;
  test.likelihoods = cfg.likelihoods;
  test.Y = predict(cfg, z, post, params)[0].mean;
  Rng r = make_rng(7);
  EXPECT_NEAR(test_nlpd(cfg, test, post, params, 1000, r)[0], 0.5 * std::log(2 * M_PI), 1e-6);
}

TEST(Shapes, MismatchedBlocksThrow) {
  std::mt19937_64 rng(62);
  const auto cfg = make_cfg(Prior::LMC, {LikelihoodSpec::bernoulli()}, 2, 3, 1);
  const auto params = random_params(cfg, rng);
  auto post = random_post(cfg, rng);
  post.blocks.pop_back();
  EXPECT_THROW(marginal_posteriors(cfg, MatrixXd::Zero(2, 1), post, params), ShapeError);
  const auto good = random_post(cfg, rng);
  EXPECT_THROW(marginal_posteriors(cfg, MatrixXd::Zero(2, 3), good, params), ShapeError);
}
