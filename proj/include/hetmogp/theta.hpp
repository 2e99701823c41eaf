#ifndef HETMOGP_THETA_HPP
#define HETMOGP_THETA_HPP

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "hetmogp/errors.hpp"
#include "hetmogp/kernels.hpp"
#include "hetmogp/model.hpp"
#include "hetmogp/random.hpp"

namespace hetmogp {

/// A contiguous named range of the packed hyper-parameter vector.
struct ThetaSegment {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
  bool log_link = false;
};

/// Packing of inducing inputs, lengthscales and mixing weights into one
/// real vector. All matrices are vectorized column-major.
///   LMC: [Z_1..Z_Q, L_1..L_Q, w (J x Q)]
///   CPM: [Z_1..Z_J, L_1..L_Q, kappa_1..kappa_J, S (J x Q)]
/// L and kappa are stored as logs.
class ThetaLayout {
 public:
  ThetaLayout() = default;

  explicit ThetaLayout(const ModelConfig& cfg)
      : prior_(cfg.prior),
        q_(cfg.num_latent),
        m_(cfg.num_inducing),
        p_(cfg.input_dim),
        j_(cfg.num_lpf()) {
    cfg.validate();
    const Eigen::Index blocks = prior_ == Prior::LMC ? q_ : j_;
    add("Z", blocks * m_ * p_, false);
    add("L", static_cast<Eigen::Index>(q_) * p_, true);
    if (prior_ == Prior::CPM) add("kappa", static_cast<Eigen::Index>(j_) * p_, true);
    add(prior_ == Prior::LMC ? "w" : "S", static_cast<Eigen::Index>(j_) * q_, false);
  }

  Eigen::Index size() const { return size_; }
  const std::vector<ThetaSegment>& segments() const { return segments_; }

  const ThetaSegment& segment(const std::string& name) const {
    for (const auto& s : segments_) {
      if (s.name == name) return s;
    }
    throw ShapeError("no theta segment named '" + name + "'");
  }

  VectorXd pack(const ModelParams& params) const {
    const int blocks = prior_ == Prior::LMC ? q_ : j_;
    if (static_cast<int>(params.z.size()) != blocks ||
        static_cast<int>(params.hyper.lengthscales.size()) != q_ ||
        params.hyper.weights.rows() != j_ || params.hyper.weights.cols() != q_) {
      throw ShapeError("parameters do not match the theta layout");
    }
    VectorXd theta(size_);
    Eigen::Index at = segment("Z").offset;
    for (const auto& z : params.z) {
      if (z.rows() != m_ || z.cols() != p_) throw ShapeError("inducing block must be M x P");
      theta.segment(at, m_ * p_) = z.reshaped();
      at += m_ * p_;
    }
    at = segment("L").offset;
    for (const auto& l : params.hyper.lengthscales) {
      if (l.size() != p_) throw ShapeError("lengthscale vector must have length P");
      for (Eigen::Index i = 0; i < p_; ++i) theta[at++] = log_inverse(l.values()[i]);
    }
    if (prior_ == Prior::CPM) {
      if (static_cast<int>(params.hyper.kappa.size()) != j_) throw ShapeError("kappa count must be J");
      at = segment("kappa").offset;
      for (const auto& k : params.hyper.kappa) {
        if (k.size() != p_) throw ShapeError("kappa vector must have length P");
        for (Eigen::Index i = 0; i < p_; ++i) theta[at++] = log_inverse(k[i]);
      }
    }
    const auto& ws = segment(prior_ == Prior::LMC ? "w" : "S");
    theta.segment(ws.offset, ws.length) = params.hyper.weights.reshaped();
    return theta;
  }

  ModelParams unpack(const VectorXd& theta) const {
    if (theta.size() != size_) {
      throw ShapeError("theta has length " + std::to_string(theta.size()) + ", layout expects " +
                       std::to_string(size_));
    }
    ModelParams out;
    const int blocks = prior_ == Prior::LMC ? q_ : j_;
    Eigen::Index at = segment("Z").offset;
    for (int b = 0; b < blocks; ++b) {
      out.z.push_back(theta.segment(at, m_ * p_).reshaped(m_, p_));
      at += m_ * p_;
    }
    at = segment("L").offset;
    for (int q = 0; q < q_; ++q) {
      out.hyper.lengthscales.emplace_back(theta.segment(at, p_).unaryExpr([](double t) { return std::exp(t); }));
      at += p_;
    }
    if (prior_ == Prior::CPM) {
      at = segment("kappa").offset;
      for (int j = 0; j < j_; ++j) {
        VectorXd k = theta.segment(at, p_).unaryExpr([](double t) { return std::exp(t); });
        detail::check_positive(k, "smoothing lengthscale");
        out.hyper.kappa.push_back(std::move(k));
        at += p_;
      }
    }
    const auto& ws = segment(prior_ == Prior::LMC ? "w" : "S");
    out.hyper.weights = theta.segment(ws.offset, ws.length).reshaped(j_, q_);
    return out;
  }

 private:
  void add(const std::string& name, Eigen::Index length, bool log_link) {
    segments_.push_back({name, size_, length, log_link});
    size_ += length;
  }

  // log(x), nudged by a few ulps so that exp() of the result gives back x
  // whenever such a double exists.
  static double log_inverse(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("log-linked value must be positive");
    const double t = std::log(x);
    if (std::exp(t) == x) return t;
    double up = t, down = t;
    for (int k = 0; k < 8; ++k) {
      up = std::nextafter(up, HUGE_VAL);
      down = std::nextafter(down, -HUGE_VAL);
      if (std::exp(up) == x) return up;
      if (std::exp(down) == x) return down;
    }
    return t;
  }

  Prior prior_ = Prior::LMC;
  int q_ = 0, m_ = 0, p_ = 0, j_ = 0;
  Eigen::Index size_ = 0;
  std::vector<ThetaSegment> segments_;
};

/// q(theta) = N(mu, diag(sigma2)); p = 1/sigma2 - lambda1.
struct ExploratoryDist {
  VectorXd mu;
  VectorXd sigma2;
  VectorXd p;

  static ExploratoryDist from_variance(VectorXd mu, VectorXd sigma2, double lambda1) {
    if ((sigma2.array() <= 0.0).any()) throw DomainError("exploratory variances must be positive");
    ExploratoryDist q{std::move(mu), std::move(sigma2), {}};
    q.p = q.sigma2.cwiseInverse().array() - lambda1;
    return q;
  }

  VectorXd sample(Rng& rng) const {
    std::normal_distribution<double> n01(0.0, 1.0);
    VectorXd theta(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) theta[i] = mu[i] + std::sqrt(sigma2[i]) * n01(rng);
    return theta;
  }
};

/// KL(N(mu, diag(sigma2)) || N(0, I / lambda1)).
inline double kl_exploratory(const ExploratoryDist& q, double lambda1) {
  if (!(lambda1 > 0.0)) throw DomainError("lambda1 must be positive");
  const auto ls = (lambda1 * q.sigma2.array());
  return 0.5 * (ls + lambda1 * q.mu.array().square() - 1.0 - ls.log()).sum();
}

/// E_q[theta-gradient] + lambda1 mu from gradient samples (one per column).
inline VectorXd grad_mu_F(const MatrixXd& grad_samples, const VectorXd& mu, double lambda1) {
  if (grad_samples.cols() < 1) throw DomainError("need at least one gradient sample");
  return grad_samples.rowwise().mean() + lambda1 * mu;
}

/// Gauss-Newton Hessian diagonal E_q[g o g] from gradient samples.
inline VectorXd gn_hessian_diag(const MatrixXd& grad_samples) {
  if (grad_samples.cols() < 1) throw DomainError("need at least one gradient sample");
  return grad_samples.array().square().rowwise().mean().matrix();
}

/// Central differences with h_i = 1e-5 (1 + |x_i|).
template <class F>
VectorXd central_difference(F&& f, const VectorXd& x) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(x[i]));
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Minibatch NELBO as a function of theta for a fixed variational
/// posterior.
struct SviProblem {
  ModelConfig config;
  const Dataset* data = nullptr;
  ThetaLayout layout;
  ExpectationOptions expectation;

  SviProblem() = default;
  SviProblem(ModelConfig cfg, const Dataset& d, ExpectationOptions opts = {})
      : config(std::move(cfg)), data(&d), layout(config), expectation(opts) {}

  NelboEval evaluate(const VectorXd& theta, const VariationalPosterior& post, const MiniBatch& batch,
                     Rng& rng, bool with_grad) const {
    return evaluate_nelbo(config, *data, batch, post, layout.unpack(theta), expectation, rng,
                          with_grad);
  }
};

/// Theta-gradient of the minibatch NELBO by central differences. Every
/// evaluation starts from a copy of `rng`, so all of them share the same
/// random numbers.
template <class Problem>
VectorXd theta_gradient(const Problem& problem, const VectorXd& theta,
                        const VariationalPosterior& post, const MiniBatch& batch, const Rng& rng) {
  if constexpr (requires { problem.theta_gradient(theta, post, batch, rng); }) {
    return problem.theta_gradient(theta, post, batch, rng);
  } else {
    return central_difference(
        [&](const VectorXd& t) {
          Rng r = rng;
          return problem.evaluate(t, post, batch, r, false).value;
        },
        theta);
  }
}

/// VO bound: mean of the minibatch NELBO over `s_theta` draws from q(theta)
/// plus KL(q(theta) || p(theta)).
template <class Problem>
double vo_bound(const Problem& problem, const VariationalPosterior& post, const MiniBatch& batch,
                const ExploratoryDist& q, double lambda1, Rng& rng, int s_theta = 1) {
  if (s_theta < 1) throw DomainError("S_theta must be at least 1");
  double total = 0.0;
  for (int s = 0; s < s_theta; ++s) {
    const VectorXd theta = q.sample(rng);
    total += problem.evaluate(theta, post, batch, rng, false).value;
  }
  return total / s_theta + kl_exploratory(q, lambda1);
}

}  // namespace hetmogp

#endif
