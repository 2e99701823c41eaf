#ifndef HETMOGP_MODEL_HPP
#define HETMOGP_MODEL_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hetmogp/dataset.hpp"
#include "hetmogp/errors.hpp"
#include "hetmogp/kernels.hpp"
#include "hetmogp/likelihoods.hpp"
#include "hetmogp/linalg.hpp"
#include "hetmogp/random.hpp"

namespace hetmogp {

/// How q(u) is stored. Raw: u ~ N(m, V). Whitened: u = L v with
/// K_uu = L L^T and v ~ N(m, V), so the prior on v is N(0, I).
enum class Coordinates { Raw, Whitened };

struct ModelConfig {
  Prior prior = Prior::LMC;
  Coordinates coords = Coordinates::Raw;
  std::vector<LikelihoodSpec> likelihoods;  // one per output
  int num_latent = 1;                       // Q
  int num_inducing = 10;                    // M
  int input_dim = 1;                        // P

  int num_outputs() const { return static_cast<int>(likelihoods.size()); }

  /// Total number of latent parameter functions J.
  int num_lpf() const {
    int j = 0;
    for (const auto& l : likelihoods) j += l.num_latent();
    return j;
  }

  /// offsets[d] is the index of f_{d,1}; offsets[D] == J.
  std::vector<int> lpf_offsets() const {
    std::vector<int> off{0};
    for (const auto& l : likelihoods) off.push_back(off.back() + l.num_latent());
    return off;
  }

  /// Number of inducing blocks: Q for the LMC, J for the CPM.
  int num_blocks() const { return prior == Prior::LMC ? num_latent : num_lpf(); }

  void validate() const {
    if (likelihoods.empty()) throw ConfigError("model needs at least one output");
    if (num_latent < 1) throw ConfigError("Q must be at least 1");
    if (num_inducing < 1) throw ConfigError("M must be at least 1");
    if (input_dim < 1) throw ConfigError("P must be at least 1");
  }
};

/// q(u) = N(mean, factor factor^T) for one inducing block.
struct VariationalBlock {
  VectorXd mean;
  MatrixXd factor;  // lower triangular, positive diagonal

  MatrixXd covariance() const { return factor * factor.transpose(); }
};

struct VariationalPosterior {
  std::vector<VariationalBlock> blocks;
};

/// Hyper-parameters and inducing inputs, i.e. everything theta encodes.
struct ModelParams {
  KernelHyper hyper;
  InducingSet z;
};

/// Per-point marginals of q(f_{d,j}) over a batch of inputs.
struct MarginalPosterior {
  VectorXd mean;
  VectorXd variance;
};

inline constexpr double kVarianceFloor = 1e-12;

namespace detail {

// Projection of one inducing block onto batch inputs.
struct BlockProjection {
  MatrixXd abar;     // K_xz K_zz^{-1} (raw) or K_xz L^{-T} (whitened), B x M
  VectorXd mean;     // abar m
  VectorXd variance; // k(0) + diag(abar (V - K) abar^T)
};

inline void check_blocks(const ModelConfig& cfg, const VariationalPosterior& post,
                         const ModelParams& params) {
  const auto nb = static_cast<std::size_t>(cfg.num_blocks());
  if (post.blocks.size() != nb || params.z.size() != nb) {
    throw ShapeError("expected " + std::to_string(nb) + " inducing blocks");
  }
  if (static_cast<int>(params.hyper.lengthscales.size()) != cfg.num_latent) {
    throw ShapeError("lengthscale count must equal Q");
  }
  if (params.hyper.weights.rows() != cfg.num_lpf() || params.hyper.weights.cols() != cfg.num_latent) {
    throw ShapeError("weight matrix must be J x Q");
  }
  if (cfg.prior == Prior::CPM && static_cast<int>(params.hyper.kappa.size()) != cfg.num_lpf()) {
    throw ShapeError("CPM needs one smoothing lengthscale vector per latent parameter function");
  }
  for (std::size_t b = 0; b < nb; ++b) {
    const auto m = post.blocks[b].mean.size();
    if (post.blocks[b].factor.rows() != m || post.blocks[b].factor.cols() != m ||
        params.z[b].rows() != m) {
      throw ShapeError("inducing block " + std::to_string(b) + " has inconsistent sizes");
    }
  }
}

// Cross covariance of batch inputs with inducing block b and prior zero-lag variance.
inline MatrixXd block_kxz(const ModelConfig& cfg, const MatrixXd& xb, const ModelParams& params,
                          std::size_t b, double& prior_var) {
  const auto& h = params.hyper;
  if (cfg.prior == Prior::LMC) {
    prior_var = eq_variance(h.lengthscales[b]);
    return eq_gram(xb, params.z[b], h.lengthscales[b]);
  }
  const auto sk = h.smoothing(static_cast<Eigen::Index>(b));
  prior_var = cpm_variance(sk, h.lengthscales);
  return cpm_gram(xb, params.z[b], sk, sk, h.lengthscales);
}

inline BlockProjection project_block(const ModelConfig& cfg, const MatrixXd& xb,
                                     const ModelParams& params, const VariationalBlock& q,
                                     const JitteredFactor& kuu, std::size_t b) {
  double k0 = 0.0;
  const MatrixXd kxz = block_kxz(cfg, xb, params, b, k0);
  BlockProjection p;
  const MatrixXd half = kuu.chol.half_solve(kxz.transpose());  // L^{-1} K_zx
  if (cfg.coords == Coordinates::Whitened) {
    p.abar = half.transpose();
  } else {
    p.abar = kuu.chol.lower().transpose().triangularView<Eigen::Upper>().solve(half).transpose();
  }
  p.mean = p.abar * q.mean;
  p.variance = VectorXd::Constant(xb.rows(), k0) - half.colwise().squaredNorm().transpose() +
               row_quadratic(p.abar, q.factor);
  return p;
}

}  // namespace detail

/// Factorized prior blocks K_uu for the current parameters.
inline std::vector<JitteredFactor> prior_blocks(const ModelConfig& cfg, const ModelParams& params) {
  return assemble_kuu(params.z, params.hyper, cfg.prior);
}

/// Marginals of every latent parameter function at the rows of `xb`,
/// indexed by global LPF index (output-major).
inline std::vector<MarginalPosterior> marginal_posteriors(const ModelConfig& cfg, const MatrixXd& xb,
                                                          const VariationalPosterior& post,
                                                          const ModelParams& params,
                                                          const std::vector<JitteredFactor>& kuu) {
  detail::check_blocks(cfg, post, params);
  if (xb.cols() != cfg.input_dim) throw ShapeError("batch input dimension mismatch");
  const int j_total = cfg.num_lpf();
  const auto b_rows = xb.rows();
  std::vector<MarginalPosterior> out(static_cast<std::size_t>(j_total));
  if (cfg.prior == Prior::LMC) {
    for (auto& m : out) {
      m.mean = VectorXd::Zero(b_rows);
      m.variance = VectorXd::Zero(b_rows);
    }
    for (int q = 0; q < cfg.num_latent; ++q) {
      const auto uq = static_cast<std::size_t>(q);
      const auto proj = detail::project_block(cfg, xb, params, post.blocks[uq], kuu[uq], uq);
      for (int j = 0; j < j_total; ++j) {
        const double a = params.hyper.weights(j, q);
        out[static_cast<std::size_t>(j)].mean += a * proj.mean;
        out[static_cast<std::size_t>(j)].variance += (a * a) * proj.variance;
      }
    }
  } else {
    for (int j = 0; j < j_total; ++j) {
      const auto b = static_cast<std::size_t>(j);
      auto proj = detail::project_block(cfg, xb, params, post.blocks[b], kuu[b], b);
      out[b].mean = std::move(proj.mean);
      out[b].variance = std::move(proj.variance);
    }
  }
  for (auto& m : out) m.variance = m.variance.cwiseMax(kVarianceFloor);
  return out;
}

inline std::vector<MarginalPosterior> marginal_posteriors(const ModelConfig& cfg, const MatrixXd& xb,
                                                          const VariationalPosterior& post,
                                                          const ModelParams& params) {
  return marginal_posteriors(cfg, xb, post, params, prior_blocks(cfg, params));
}

/// Marginal of f_{d,j} (both zero-based) at the rows of `xb`.
inline MarginalPosterior marginal_posterior(const ModelConfig& cfg, const MatrixXd& xb,
                                            const VariationalPosterior& post,
                                            const ModelParams& params, int d, int j) {
  const auto off = cfg.lpf_offsets();
  if (d < 0 || d >= cfg.num_outputs() || j < 0 || j >= off[d + 1] - off[d]) {
    throw ShapeError("latent parameter function index out of range");
  }
  auto all = marginal_posteriors(cfg, xb, post, params);
  return std::move(all[static_cast<std::size_t>(off[d] + j)]);
}

/// KL(N(m, V) || N(0, K)) with both covariances given by Cholesky factors.
inline double kl_gaussian(const VectorXd& m, const MatrixXd& v_factor, const Cholesky& k) {
  const auto n = m.size();
  if (v_factor.rows() != n || k.size() != n) throw ShapeError("KL block size mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(v_factor(i, i) > 0.0)) throw DomainError("variational factor has nonpositive diagonal");
  }
  const MatrixXd kv = k.half_solve(v_factor.triangularView<Eigen::Lower>().toDenseMatrix());
  const VectorXd km = k.half_solve(m);
  const double log_det_v = 2.0 * v_factor.diagonal().array().log().sum();
  return 0.5 * (kv.squaredNorm() + km.squaredNorm() - static_cast<double>(n) + k.log_det() - log_det_v);
}

inline double kl_gaussian(const VariationalBlock& q, const JitteredFactor& kuu) {
  return kl_gaussian(q.mean, q.factor, kuu.chol);
}

/// KL(N(m, V) || N(0, I)).
inline double kl_standard(const VariationalBlock& q) {
  const auto n = q.mean.size();
  if (q.factor.rows() != n || q.factor.cols() != n) throw ShapeError("KL block size mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(q.factor(i, i) > 0.0)) throw DomainError("variational factor has nonpositive diagonal");
  }
  const double log_det_v = 2.0 * q.factor.diagonal().array().log().sum();
  return 0.5 * (q.factor.triangularView<Eigen::Lower>().toDenseMatrix().squaredNorm() +
                q.mean.squaredNorm() - static_cast<double>(n) - log_det_v);
}

/// KL term of one block in the coordinates selected by `cfg`.
inline double block_kl(const ModelConfig& cfg, const VariationalBlock& q, const JitteredFactor& kuu) {
  return cfg.coords == Coordinates::Whitened ? kl_standard(q) : kl_gaussian(q, kuu);
}

/// Maps whitened blocks to raw ones: m_u = L m, factor_u = L factor.
inline VariationalPosterior unwhiten(const VariationalPosterior& post,
                                     const std::vector<JitteredFactor>& kuu) {
  if (post.blocks.size() != kuu.size()) throw ShapeError("block count mismatch");
  VariationalPosterior out;
  for (std::size_t b = 0; b < kuu.size(); ++b) {
    const auto l = kuu[b].chol.lower().triangularView<Eigen::Lower>();
    const MatrixXd f = post.blocks[b].factor.triangularView<Eigen::Lower>();
    out.blocks.push_back({l * post.blocks[b].mean, l * f});
  }
  return out;
}

/// Inverse of unwhiten.
inline VariationalPosterior whiten(const VariationalPosterior& post,
                                   const std::vector<JitteredFactor>& kuu) {
  if (post.blocks.size() != kuu.size()) throw ShapeError("block count mismatch");
  VariationalPosterior out;
  for (std::size_t b = 0; b < kuu.size(); ++b) {
    const auto l = kuu[b].chol.lower().triangularView<Eigen::Lower>();
    const MatrixXd f = post.blocks[b].factor.triangularView<Eigen::Lower>();
    out.blocks.push_back({l.solve(post.blocks[b].mean), l.solve(f)});
  }
  return out;
}

/// Dense-matrix overload; throws DomainError unless both V and K are PD.
inline double kl_gaussian(const VectorXd& m, const MatrixXd& v, const MatrixXd& k) {
  auto cv = Cholesky::try_factor(v);
  auto ck = Cholesky::try_factor(k);
  if (!cv || !ck) throw DomainError("KL needs positive definite covariances");
  return kl_gaussian(m, cv->lower(), *ck);
}

/// Gradients of the NELBO with respect to each block's mean and covariance.
struct VariationalGrad {
  std::vector<VectorXd> dm;
  std::vector<MatrixXd> dV;
};

struct NelboEval {
  double value = 0.0;
  double data_term = 0.0;
  double kl_term = 0.0;
  VariationalGrad grad;  // empty unless requested
};

/// Minibatch NELBO: scale * sum over batch rows and observed outputs of
/// E_q[g_{d,n}] plus the KL of every inducing block. With `with_grad` also
/// returns the analytic gradients w.r.t. m and V of every block, in the
/// coordinates of `cfg.coords`.
inline NelboEval evaluate_nelbo(const ModelConfig& cfg, const Dataset& data, const MiniBatch& batch,
                                const VariationalPosterior& post, const ModelParams& params,
                                const ExpectationOptions& opts, Rng& rng, bool with_grad) {
  if (batch.indices.empty()) throw DomainError("minibatch is empty");
  if (data.num_outputs() != cfg.num_outputs()) throw ShapeError("dataset output count mismatch");
  detail::check_blocks(cfg, post, params);
  const auto kuu = prior_blocks(cfg, params);
  const auto b_rows = static_cast<Eigen::Index>(batch.indices.size());
  MatrixXd xb(b_rows, data.X.cols());
  for (Eigen::Index i = 0; i < b_rows; ++i) {
    const auto r = batch.indices[static_cast<std::size_t>(i)];
    if (r >= data.size()) throw ShapeError("minibatch index out of range");
    xb.row(i) = data.X.row(static_cast<Eigen::Index>(r));
  }

  const int j_total = cfg.num_lpf();
  const auto off = cfg.lpf_offsets();
  const auto nb = static_cast<std::size_t>(cfg.num_blocks());

  std::vector<detail::BlockProjection> proj;
  proj.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    proj.push_back(detail::project_block(cfg, xb, params, post.blocks[b], kuu[b], b));
  }
  MatrixXd f_mean = MatrixXd::Zero(b_rows, j_total);
  MatrixXd f_var = MatrixXd::Zero(b_rows, j_total);
  if (cfg.prior == Prior::LMC) {
    for (std::size_t q = 0; q < nb; ++q) {
      for (int j = 0; j < j_total; ++j) {
        const double a = params.hyper.weights(j, static_cast<Eigen::Index>(q));
        f_mean.col(j) += a * proj[q].mean;
        f_var.col(j) += (a * a) * proj[q].variance;
      }
    }
  } else {
    for (int j = 0; j < j_total; ++j) {
      f_mean.col(j) = proj[static_cast<std::size_t>(j)].mean;
      f_var.col(j) = proj[static_cast<std::size_t>(j)].variance;
    }
  }
  f_var = f_var.cwiseMax(kVarianceFloor);

  NelboEval out;
  MatrixXd g_m, g_v;
  if (with_grad) {
    g_m = MatrixXd::Zero(b_rows, j_total);
    g_v = MatrixXd::Zero(b_rows, j_total);
  }
  GaussianMarginal1D marg[kMaxLatentPerOutput];
  double data_sum = 0.0;
  for (Eigen::Index i = 0; i < b_rows; ++i) {
    const auto r = static_cast<Eigen::Index>(batch.indices[static_cast<std::size_t>(i)]);
    for (int d = 0; d < cfg.num_outputs(); ++d) {
      const double y = data.Y(r, d);
      if (Dataset::missing(y)) continue;
      const auto& spec = cfg.likelihoods[static_cast<std::size_t>(d)];
      const int jd = spec.num_latent();
      for (int k = 0; k < jd; ++k) marg[k] = {f_mean(i, off[d] + k), f_var(i, off[d] + k)};
      const auto e = expected_nll(spec, y, std::span<const GaussianMarginal1D>(marg, static_cast<std::size_t>(jd)),
                                  opts, rng, with_grad);
      data_sum += e.value;
      if (with_grad) {
        for (int k = 0; k < jd; ++k) {
          g_m(i, off[d] + k) = e.g_m[k];
          g_v(i, off[d] + k) = e.g_v[k];
        }
      }
    }
  }
  out.data_term = batch.scale * data_sum;
  for (std::size_t b = 0; b < nb; ++b) out.kl_term += block_kl(cfg, post.blocks[b], kuu[b]);
  out.value = out.data_term + out.kl_term;
  if (!with_grad) return out;

  out.grad.dm.resize(nb);
  out.grad.dV.resize(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    VectorXd wm, wv;
    if (cfg.prior == Prior::LMC) {
      const VectorXd a = params.hyper.weights.col(static_cast<Eigen::Index>(b));
      wm = g_m * a;
      wv = g_v * a.cwiseProduct(a);
    } else {
      wm = g_m.col(static_cast<Eigen::Index>(b));
      wv = g_v.col(static_cast<Eigen::Index>(b));
    }
    const auto& abar = proj[b].abar;
    const auto& q = post.blocks[b];
    const bool white = cfg.coords == Coordinates::Whitened;
    const auto m_size = q.mean.size();
    const MatrixXd k_inv = white ? MatrixXd(MatrixXd::Identity(m_size, m_size)) : kuu[b].chol.inverse();
    const MatrixXd v_inv = Cholesky::from_lower(q.factor).inverse();
    out.grad.dm[b] = batch.scale * (abar.transpose() * wm) + (white ? q.mean : kuu[b].chol.solve(q.mean));
    out.grad.dV[b] = symmetrize(batch.scale * (abar.transpose() * wv.asDiagonal() * abar) -
                                0.5 * (v_inv - k_inv));
  }
  return out;
}

inline double nelbo(const ModelConfig& cfg, const Dataset& data, const MiniBatch& batch,
                    const VariationalPosterior& post, const ModelParams& params,
                    const ExpectationOptions& opts, Rng& rng) {
  return evaluate_nelbo(cfg, data, batch, post, params, opts, rng, false).value;
}

inline VariationalGrad grad_variational(const ModelConfig& cfg, const Dataset& data,
                                        const MiniBatch& batch, const VariationalPosterior& post,
                                        const ModelParams& params, const ExpectationOptions& opts,
                                        Rng& rng) {
  return evaluate_nelbo(cfg, data, batch, post, params, opts, rng, true).grad;
}

/// Predictive marginals of every latent parameter function at `xstar`
/// for fixed parameters (the MAP point theta = mu).
inline std::vector<MarginalPosterior> predict(const ModelConfig& cfg, const MatrixXd& xstar,
                                              const VariationalPosterior& post,
                                              const ModelParams& params) {
  return marginal_posteriors(cfg, xstar, post, params);
}

/// Test-set NLPD averaged over the observed points of each output.
/// Outputs with no observed test points get NaN.
inline std::vector<double> test_nlpd(const ModelConfig& cfg, const Dataset& test,
                                     const VariationalPosterior& post, const ModelParams& params,
                                     int samples, Rng& rng) {
  std::vector<double> out(static_cast<std::size_t>(cfg.num_outputs()),
                          std::numeric_limits<double>::quiet_NaN());
  if (test.size() == 0) return out;
  const auto marg = predict(cfg, test.X, post, params);
  const auto off = cfg.lpf_offsets();
  GaussianMarginal1D m[kMaxLatentPerOutput];
  for (int d = 0; d < cfg.num_outputs(); ++d) {
    const auto& spec = cfg.likelihoods[static_cast<std::size_t>(d)];
    const int jd = spec.num_latent();
    double sum = 0.0;
    std::size_t count = 0;
    for (Eigen::Index n = 0; n < test.X.rows(); ++n) {
      const double y = test.Y(n, d);
      if (Dataset::missing(y)) continue;
      for (int k = 0; k < jd; ++k) {
        const auto& mp = marg[static_cast<std::size_t>(off[d] + k)];
        m[k] = {mp.mean[n], mp.variance[n]};
      }
      sum += nlpd(spec, y, std::span<const GaussianMarginal1D>(m, static_cast<std::size_t>(jd)), samples, rng);
      ++count;
    }
    if (count > 0) out[static_cast<std::size_t>(d)] = sum / static_cast<double>(count);
  }
  return out;
}

}  // namespace hetmogp

#endif
