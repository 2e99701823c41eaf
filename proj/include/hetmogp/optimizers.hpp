#ifndef HETMOGP_OPTIMIZERS_HPP
#define HETMOGP_OPTIMIZERS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hetmogp/errors.hpp"
#include "hetmogp/linalg.hpp"
#include "hetmogp/model.hpp"
#include "hetmogp/random.hpp"
#include "hetmogp/theta.hpp"

namespace hetmogp {

struct StepSizes {
  double alpha = 0.01;    // q(theta) mean
  double beta = 0.01;     // q(u)
  double gamma = 0.9;     // momentum on mu
  double upsilon = 0.9;   // momentum on m

  void validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("step sizes alpha, beta must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0) || !(upsilon >= 0.0 && upsilon < 1.0)) {
      throw ConfigError("momentum weights gamma, upsilon must lie in [0, 1)");
    }
  }
};

// ---------------------------------------------------------------------------
// Natural-gradient updates of the variational blocks

/// Previous iterates for natural momentum. Empty vectors mean "no history",
/// in which case the current values are used.
struct NgState {
  std::vector<VectorXd> m_prev;
  std::vector<MatrixXd> v_prev_factor;
};

struct NgOptions {
  double beta = 0.01;
  double upsilon = 0.0;
  /// Adds upsilon (P_t - P_{t-1}) to the precision update and uses the
  /// matching natural-parameter mean update.
  bool precision_momentum = false;
  int max_halvings = 30;
};

struct NgReport {
  int rejections = 0;
  double min_beta = 0.0;
};

/// V^{-1} <- V^{-1} + 2 beta dV;
/// m <- m - beta V_new dm + upsilon V_new V^{-1} (m - m_prev).
/// A block whose new precision is not PD is retried with beta halved; each
/// retry counts as one rejection.
inline NgReport ng_variational_step(VariationalPosterior& post, const VariationalGrad& grad,
                                    NgState& state, const NgOptions& opts) {
  const auto nb = post.blocks.size();
  if (grad.dm.size() != nb || grad.dV.size() != nb) throw ShapeError("gradient block count mismatch");
  if (state.m_prev.size() != nb) {
    state.m_prev.clear();
    state.v_prev_factor.clear();
    for (const auto& b : post.blocks) {
      state.m_prev.push_back(b.mean);
      state.v_prev_factor.push_back(b.factor);
    }
  }
  NgReport report;
  report.min_beta = opts.beta;
  for (std::size_t b = 0; b < nb; ++b) {
    auto& blk = post.blocks[b];
    const MatrixXd prec = Cholesky::from_lower(blk.factor).inverse();
    MatrixXd prec_prev;
    if (opts.precision_momentum) prec_prev = Cholesky::from_lower(state.v_prev_factor[b]).inverse();
    double beta = opts.beta;
    bool accepted = false;
    for (int attempt = 0; attempt <= opts.max_halvings; ++attempt) {
      MatrixXd prec_new = prec + 2.0 * beta * grad.dV[b];
      if (opts.precision_momentum) prec_new += opts.upsilon * (prec - prec_prev);
      prec_new = symmetrize(prec_new);
      auto pc = Cholesky::try_factor(prec_new);
      std::optional<Cholesky> vc;
      MatrixXd v_new;
      if (pc) {
        v_new = symmetrize(pc->inverse());
        vc = Cholesky::try_factor(v_new);
      }
      if (!vc) {
        ++report.rejections;
        beta *= 0.5;
        continue;
      }
      VectorXd m_new;
      if (opts.precision_momentum) {
        const VectorXd& mp = state.m_prev[b];
        const VectorXd lam1 = prec * blk.mean - beta * (grad.dm[b] - 2.0 * grad.dV[b] * blk.mean) +
                              opts.upsilon * (prec * blk.mean - prec_prev * mp);
        m_new = v_new * lam1;
      } else {
        m_new = blk.mean - beta * (v_new * grad.dm[b]) +
                opts.upsilon * (v_new * (prec * (blk.mean - state.m_prev[b])));
      }
      state.m_prev[b] = blk.mean;
      state.v_prev_factor[b] = blk.factor;
      blk.mean = std::move(m_new);
      blk.factor = vc->lower();
      accepted = true;
      break;
    }
    if (!accepted) {
      state.m_prev[b] = blk.mean;
      state.v_prev_factor[b] = blk.factor;
    }
    report.min_beta = std::min(report.min_beta, beta);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Exploratory distribution update

/// p_{t+1} = (1 - alpha) p_t + alpha E[g o g]; preconditioned mean step with
/// momentum. With `sqrt_p` the preconditioner is sqrt(p) + lambda1,
/// otherwise p + lambda1. Updates q in place (sigma2 included) and returns
/// the previous mean.
inline VectorXd vprop_update(ExploratoryDist& q, const VectorXd& mu_prev, const VectorXd& grad_mean,
                             const VectorXd& grad_sq, double alpha, double gamma, double lambda1,
                             bool sqrt_p) {
  const auto n = q.mu.size();
  if (mu_prev.size() != n || grad_mean.size() != n || grad_sq.size() != n || q.p.size() != n) {
    throw ShapeError("exploratory update size mismatch");
  }
  const VectorXd p_new = (1.0 - alpha) * q.p + alpha * grad_sq;
  auto precond = [&](const VectorXd& p) -> Eigen::ArrayXd {
    if (sqrt_p) return p.array().sqrt() + lambda1;
    return p.array() + lambda1;
  };
  const Eigen::ArrayXd c_old = precond(q.p);
  const Eigen::ArrayXd c_new = precond(p_new);
  VectorXd previous = q.mu;
  q.mu = (q.mu.array() - alpha * (grad_mean.array() + lambda1 * q.mu.array()) / c_new +
          gamma * c_old / c_new * (q.mu - mu_prev).array())
             .matrix();
  q.p = p_new;
  q.sigma2 = (q.p.array() + lambda1).inverse().matrix();
  return previous;
}

struct FngOptions {
  StepSizes steps;
  double lambda1 = 1e-3;
  int s_theta = 1;
  bool sqrt_p = true;
  bool precision_momentum = false;
};

struct FngState {
  VectorXd mu_prev;  // empty: no history yet
  NgState ng;
};

struct StepInfo {
  double nelbo = 0.0;    // minibatch NELBO at the point(s) the step used
  MatrixXd theta_used;   // one column per theta sample
  int rejections = 0;
};

/// One iteration of the fully natural gradient method: sample theta from
/// q(theta), estimate E[grad] and E[grad o grad] on `batch`, update p and
/// mu, then take the natural-gradient step on every q(u) block using
/// gradients at the sampled theta, and finally refresh sigma2.
template <class Problem>
StepInfo fng_step(const Problem& problem, const MiniBatch& batch, VariationalPosterior& post,
                  ExploratoryDist& q, FngState& state, const FngOptions& opts, Rng& rng) {
  opts.steps.validate();
  if (opts.s_theta < 1) throw ConfigError("S_theta must be at least 1");
  if (!(opts.lambda1 > 0.0)) throw ConfigError("lambda1 must be positive");
  const auto n = q.mu.size();
  if (state.mu_prev.size() != n) state.mu_prev = q.mu;

  StepInfo info;
  info.theta_used.resize(n, opts.s_theta);
  for (int s = 0; s < opts.s_theta; ++s) info.theta_used.col(s) = q.sample(rng);

  MatrixXd grads(n, opts.s_theta);
  VariationalGrad vgrad;
  for (int s = 0; s < opts.s_theta; ++s) {
    const Rng eval_rng(rng());
    const VectorXd theta = info.theta_used.col(s);
    grads.col(s) = theta_gradient(problem, theta, post, batch, eval_rng);
    Rng r = eval_rng;
    auto e = problem.evaluate(theta, post, batch, r, true);
    info.nelbo += e.value / opts.s_theta;
    if (s == 0) {
      vgrad = std::move(e.grad);
      for (auto& g : vgrad.dm) g /= opts.s_theta;
      for (auto& g : vgrad.dV) g /= opts.s_theta;
    } else {
      for (std::size_t b = 0; b < vgrad.dm.size(); ++b) {
        vgrad.dm[b] += e.grad.dm[b] / opts.s_theta;
        vgrad.dV[b] += e.grad.dV[b] / opts.s_theta;
      }
    }
  }

  const VectorXd mean_grad = grads.rowwise().mean();
  const VectorXd sq_grad = gn_hessian_diag(grads);
  state.mu_prev = vprop_update(q, state.mu_prev, mean_grad, sq_grad, opts.steps.alpha,
                               opts.steps.gamma, opts.lambda1, opts.sqrt_p);
  if ((q.p.array() < 0.0).any()) throw Error("invariant violated: p < 0");
  if (!(q.sigma2.array() > 0.0).all()) throw Error("invariant violated: sigma2 <= 0");

  NgOptions ng{opts.steps.beta, opts.steps.upsilon, opts.precision_momentum};
  info.rejections = ng_variational_step(post, vgrad, state.ng, ng).rejections;
  return info;
}

// ---------------------------------------------------------------------------
// First-order baselines

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  VectorXd m;
  VectorXd v;
  long t = 0;
};

inline void sgd_step(VectorXd& x, const VectorXd& grad, double lr) {
  if (x.size() != grad.size()) throw ShapeError("SGD gradient size mismatch");
  x -= lr * grad;
}

inline void adam_step(VectorXd& x, const VectorXd& grad, AdamState& s, const AdamOptions& o) {
  if (x.size() != grad.size()) throw ShapeError("Adam gradient size mismatch");
  if (s.m.size() != x.size()) {
    s.m = VectorXd::Zero(x.size());
    s.v = VectorXd::Zero(x.size());
    s.t = 0;
  }
  ++s.t;
  s.m = o.beta1 * s.m + (1.0 - o.beta1) * grad;
  s.v = o.beta2 * s.v + (1.0 - o.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.t));
  x.array() -= o.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + o.eps);
}

/// Flat parameter vector [theta, m_1, vech'(L_1), m_2, vech'(L_2), ...]
/// where vech' lists the lower triangle of each factor column by column,
/// with diagonal entries stored as logs.
inline VectorXd flatten(const VectorXd& theta, const VariationalPosterior& post) {
  Eigen::Index n = theta.size();
  for (const auto& b : post.blocks) n += b.mean.size() + b.mean.size() * (b.mean.size() + 1) / 2;
  VectorXd x(n);
  x.head(theta.size()) = theta;
  Eigen::Index at = theta.size();
  for (const auto& b : post.blocks) {
    const auto m = b.mean.size();
    x.segment(at, m) = b.mean;
    at += m;
    for (Eigen::Index c = 0; c < m; ++c) {
      for (Eigen::Index r = c; r < m; ++r) {
        if (r == c && !(b.factor(r, c) > 0.0)) throw DomainError("factor diagonal must be positive");
        x[at++] = r == c ? std::log(b.factor(r, c)) : b.factor(r, c);
      }
    }
  }
  return x;
}

/// Inverse of `flatten`; block sizes are taken from `post`, which is
/// overwritten.
inline void unflatten(const VectorXd& x, VectorXd& theta, VariationalPosterior& post) {
  Eigen::Index at = theta.size();
  theta = x.head(theta.size());
  for (auto& b : post.blocks) {
    const auto m = b.mean.size();
    b.mean = x.segment(at, m);
    at += m;
    b.factor = MatrixXd::Zero(m, m);
    for (Eigen::Index c = 0; c < m; ++c) {
      for (Eigen::Index r = c; r < m; ++r) b.factor(r, c) = r == c ? std::exp(x[at++]) : x[at++];
    }
  }
  if (at != x.size()) throw ShapeError("flat vector length mismatch");
}

/// Gradient in the flat parameterization: dL/dfactor = 2 dV L restricted to
/// the lower triangle, diagonal entries scaled by L_ii for the log link.
inline VectorXd flat_gradient(const VectorXd& theta_grad, const VariationalGrad& grad,
                              const VariationalPosterior& post) {
  std::vector<double> out(theta_grad.data(), theta_grad.data() + theta_grad.size());
  for (std::size_t k = 0; k < post.blocks.size(); ++k) {
    const auto& b = post.blocks[k];
    const auto m = b.mean.size();
    out.insert(out.end(), grad.dm[k].data(), grad.dm[k].data() + m);
    const MatrixXd gl = 2.0 * grad.dV[k] * b.factor;
    for (Eigen::Index c = 0; c < m; ++c) {
      for (Eigen::Index r = c; r < m; ++r) out.push_back(r == c ? gl(r, c) * b.factor(r, c) : gl(r, c));
    }
  }
  return Eigen::Map<VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

enum class FirstOrder { SGD, Adam };

struct FirstOrderOptions {
  FirstOrder method = FirstOrder::Adam;
  double lr = 0.01;
  AdamOptions adam;  // lr overridden by `lr`
};

/// Plain SGD or Adam on all free parameters jointly (theta as a point
/// estimate, variational covariances through their factors).
template <class Problem>
StepInfo first_order_step(const Problem& problem, const MiniBatch& batch, VectorXd& theta,
                          VariationalPosterior& post, AdamState& adam, const FirstOrderOptions& opts,
                          Rng& rng) {
  const Rng eval_rng(rng());
  const VectorXd g_theta = theta_gradient(problem, theta, post, batch, eval_rng);
  Rng r = eval_rng;
  const auto e = problem.evaluate(theta, post, batch, r, true);
  StepInfo info;
  info.nelbo = e.value;
  info.theta_used = theta;
  VectorXd x = flatten(theta, post);
  const VectorXd g = flat_gradient(g_theta, e.grad, post);
  if (opts.method == FirstOrder::SGD) {
    sgd_step(x, g, opts.lr);
  } else {
    AdamOptions a = opts.adam;
    a.lr = opts.lr;
    adam_step(x, g, adam, a);
  }
  unflatten(x, theta, post);
  return info;
}

struct HybOptions {
  double beta = 0.01;
  double adam_lr = 0.01;
  AdamOptions adam;  // lr overridden by `adam_lr`
};

struct HybState {
  AdamState adam;
  NgState ng;
};

/// Natural-gradient step (no momentum) on q(u) plus Adam on the theta point
/// estimate, both using gradients at the current theta.
template <class Problem>
StepInfo hyb_step(const Problem& problem, const MiniBatch& batch, VectorXd& theta,
                  VariationalPosterior& post, HybState& state, const HybOptions& opts, Rng& rng) {
  const Rng eval_rng(rng());
  const VectorXd g_theta = theta_gradient(problem, theta, post, batch, eval_rng);
  Rng r = eval_rng;
  auto e = problem.evaluate(theta, post, batch, r, true);
  StepInfo info;
  info.nelbo = e.value;
  info.theta_used = theta;
  AdamOptions a = opts.adam;
  a.lr = opts.adam_lr;
  adam_step(theta, g_theta, state.adam, a);
  info.rejections = ng_variational_step(post, e.grad, state.ng, {opts.beta, 0.0, false}).rejections;
  return info;
}

// ---------------------------------------------------------------------------
// One-dimensional variational optimization demonstrator

/// Scalar objective with first and second derivatives.
struct ScalarObjective {
  std::function<double(double)> f;
  std::function<double(double)> df;
  std::function<double(double)> d2f;
};

/// g(x) = 2 exp(-0.09 x^2) sin(4.5 x).
inline ScalarObjective multimodal_objective() {
  ScalarObjective o;
  o.f = [](double x) { return 2.0 * std::exp(-0.09 * x * x) * std::sin(4.5 * x); };
  o.df = [](double x) {
    const double e = 2.0 * std::exp(-0.09 * x * x);
    return e * (-0.18 * x * std::sin(4.5 * x) + 4.5 * std::cos(4.5 * x));
  };
  o.d2f = [](double x) {
    const double e = 2.0 * std::exp(-0.09 * x * x);
    const double s = std::sin(4.5 * x), c = std::cos(4.5 * x);
    return e * ((0.0324 * x * x - 0.18 - 20.25) * s - 1.62 * x * c);
  };
  return o;
}

struct VoDemoOptions {
  double mu0 = -3.0;
  double sigma0 = 3.0;
  double lambda = 1.5;
  bool use_kl = true;
  int iterations = 200;
  double alpha = 0.8;
  int samples = 256;
  std::uint64_t seed = 1;
};

struct VoPoint {
  int iter = 0;
  double mu = 0.0;
  double sigma = 0.0;
  double g_mu = 0.0;
};

/// Natural-gradient VO on q(x) = N(mu, sigma^2):
///   sigma^{-2} <- sigma^{-2} + 2 alpha dF/dsigma^2,  mu <- mu - alpha sigma^2 dF/dmu,
/// with Monte Carlo estimates of E[g'] and E[g''] / 2 and, when enabled,
/// the KL to N(0, 1/lambda). Steps that would make the precision
/// nonpositive are retried with alpha halved.
inline std::vector<VoPoint> vo_demo(const ScalarObjective& g, const VoDemoOptions& o) {
  if (!(o.sigma0 > 0.0)) throw DomainError("initial sigma must be positive");
  if (o.samples < 1 || o.iterations < 0) throw DomainError("bad demo sizes");
  Rng rng = make_rng(o.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  double mu = o.mu0;
  double prec = 1.0 / (o.sigma0 * o.sigma0);
  std::vector<VoPoint> traj{{0, mu, o.sigma0, g.f(mu)}};
  for (int t = 1; t <= o.iterations; ++t) {
    const double sd = 1.0 / std::sqrt(prec);
    double gm = 0.0, gv = 0.0;
    for (int s = 0; s < o.samples; ++s) {
      const double x = mu + sd * n01(rng);
      gm += g.df(x);
      gv += 0.5 * g.d2f(x);
    }
    gm /= o.samples;
    gv /= o.samples;
    if (o.use_kl) {
      gm += o.lambda * mu;
      gv += 0.5 * (o.lambda - prec);
    }
    double a = o.alpha;
    while (!(prec + 2.0 * a * gv > 0.0)) a *= 0.5;
    prec += 2.0 * a * gv;
    mu -= a / prec * gm;
    traj.push_back({t, mu, 1.0 / std::sqrt(prec), g.f(mu)});
  }
  return traj;
}

/// Deterministic descent from a point: Newton steps where g'' > 0,
/// otherwise gradient steps of size `lr`.
inline std::vector<double> newton_baseline(const ScalarObjective& g, double x0, int iterations,
                                           double lr = 0.01) {
  std::vector<double> path{x0};
  double x = x0;
  for (int t = 0; t < iterations; ++t) {
    const double h = g.d2f(x);
    x -= h > 0.0 ? g.df(x) / h : lr * g.df(x);
    path.push_back(x);
  }
  return path;
}

}  // namespace hetmogp

#endif
