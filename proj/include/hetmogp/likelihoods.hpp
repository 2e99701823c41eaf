#ifndef HETMOGP_LIKELIHOODS_HPP
#define HETMOGP_LIKELIHOODS_HPP

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "hetmogp/errors.hpp"
#include "hetmogp/random.hpp"

namespace hetmogp {

enum class Family { HetGaussian, Gaussian, Bernoulli, Beta, Gamma, Exponential, Poisson };

inline constexpr int kMaxLatentPerOutput = 2;

/// Values of the J_d latent parameter functions at one input.
using LatentPoint = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxLatentPerOutput, 1>;

struct LikelihoodSpec {
  Family family = Family::Gaussian;
  double sigma = 1.0;  // Gaussian only

  static LikelihoodSpec het_gaussian() { return {Family::HetGaussian, 1.0}; }
  static LikelihoodSpec gaussian(double sigma_lik) {
    if (!(sigma_lik > 0.0)) throw DomainError("Gaussian sigma_lik must be positive");
    return {Family::Gaussian, sigma_lik};
  }
  static LikelihoodSpec bernoulli() { return {Family::Bernoulli, 1.0}; }
  static LikelihoodSpec beta() { return {Family::Beta, 1.0}; }
  static LikelihoodSpec gamma() { return {Family::Gamma, 1.0}; }
  static LikelihoodSpec exponential() { return {Family::Exponential, 1.0}; }
  static LikelihoodSpec poisson() { return {Family::Poisson, 1.0}; }

  int num_latent() const {
    switch (family) {
      case Family::HetGaussian:
      case Family::Beta:
      case Family::Gamma:
        return 2;
      default:
        return 1;
    }
  }
};

inline std::string to_string(const LikelihoodSpec& spec) {
  switch (spec.family) {
    case Family::HetGaussian: return "hetgaussian";
    case Family::Gaussian: {
      std::ostringstream os;
      os << std::setprecision(17) << spec.sigma;
      return "gaussian:" + os.str();
    }
    case Family::Bernoulli: return "bernoulli";
    case Family::Beta: return "beta";
    case Family::Gamma: return "gamma";
    case Family::Exponential: return "exponential";
    case Family::Poisson: return "poisson";
  }
  return "unknown";
}

/// Parses "hetgaussian", "gaussian:<sigma>", "bernoulli", "beta", "gamma",
/// "exponential" or "poisson".
inline LikelihoodSpec parse_likelihood(const std::string& text) {
  std::string name = text;
  std::string arg;
  if (auto colon = text.find(':'); colon != std::string::npos) {
    name = text.substr(0, colon);
    arg = text.substr(colon + 1);
  }
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "hetgaussian") return LikelihoodSpec::het_gaussian();
  if (name == "gaussian") {
    double s = 1.0;
    if (!arg.empty()) {
      try {
        s = std::stod(arg);
      } catch (const std::exception&) {
        throw ConfigError("bad Gaussian sigma in '" + text + "'");
      }
      if (!(s > 0.0)) throw ConfigError("Gaussian sigma must be positive in '" + text + "'");
    }
    return LikelihoodSpec::gaussian(s);
  }
  if (name == "bernoulli") return LikelihoodSpec::bernoulli();
  if (name == "beta") return LikelihoodSpec::beta();
  if (name == "gamma") return LikelihoodSpec::gamma();
  if (name == "exponential") return LikelihoodSpec::exponential();
  if (name == "poisson") return LikelihoodSpec::poisson();
  throw ConfigError("unknown likelihood '" + text + "'");
}

/// Number of exp-link arguments clamped on this thread.
inline std::uint64_t& clamp_events() {
  thread_local std::uint64_t count = 0;
  return count;
}

namespace detail {

inline constexpr double kExpClamp = 30.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;

inline double link_exp(double f) {
  if (f > kExpClamp) {
    ++clamp_events();
    return std::exp(kExpClamp);
  }
  if (f < -kExpClamp) {
    ++clamp_events();
    return std::exp(-kExpClamp);
  }
  return std::exp(f);
}

inline double sigmoid(double f) {
  if (f >= 0.0) return 1.0 / (1.0 + std::exp(-f));
  const double e = std::exp(f);
  return e / (1.0 + e);
}

// log(1 + exp(f))
inline double softplus(double f) {
  return f > 0.0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
}

}  // namespace detail

inline bool in_support(const LikelihoodSpec& spec, double y) {
  if (!std::isfinite(y)) return false;
  switch (spec.family) {
    case Family::HetGaussian:
    case Family::Gaussian: return true;
    case Family::Bernoulli: return y == 0.0 || y == 1.0;
    case Family::Beta: return y > 0.0 && y < 1.0;
    case Family::Gamma:
    case Family::Exponential: return y > 0.0;
    case Family::Poisson: return y >= 0.0 && std::floor(y) == y;
  }
  return false;
}

inline void check_support(const LikelihoodSpec& spec, double y) {
  if (!in_support(spec, y)) {
    throw DomainError("observation " + std::to_string(y) + " outside the support of " +
                      to_string(spec));
  }
}

inline void check_latent(const LikelihoodSpec& spec, const LatentPoint& f) {
  if (f.size() != spec.num_latent()) {
    throw ShapeError("latent point has " + std::to_string(f.size()) + " entries, " +
                     to_string(spec) + " needs " + std::to_string(spec.num_latent()));
  }
}

/// Likelihood parameters psi = phi(f).
inline LatentPoint link(const LikelihoodSpec& spec, const LatentPoint& f) {
  check_latent(spec, f);
  LatentPoint psi(f.size());
  switch (spec.family) {
    case Family::HetGaussian:
      psi << f[0], detail::link_exp(f[1]);
      break;
    case Family::Gaussian:
      psi << f[0];
      break;
    case Family::Bernoulli:
      psi << detail::sigmoid(f[0]);
      break;
    case Family::Beta:
    case Family::Gamma:
      psi << detail::link_exp(f[0]), detail::link_exp(f[1]);
      break;
    case Family::Exponential:
    case Family::Poisson:
      psi << detail::link_exp(f[0]);
      break;
  }
  return psi;
}

/// Negative log density together with its gradient and the diagonal of its
/// Hessian with respect to the latent values.
struct NllDerivatives {
  double value = 0.0;
  LatentPoint d1;
  LatentPoint d2;
};

namespace detail {

// Unchecked evaluation; `derivs` selects whether d1/d2 are filled.
inline NllDerivatives nll_eval(const LikelihoodSpec& spec, double y, const double* f, bool derivs) {
  NllDerivatives out;
  const int j = spec.num_latent();
  if (derivs) {
    out.d1.setZero(j);
    out.d2.setZero(j);
  }
  switch (spec.family) {
    case Family::HetGaussian: {
      const double r = y - f[0];
      const double prec = 1.0 / link_exp(f[1]);
      const double half_sq = 0.5 * r * r * prec;
      out.value = kHalfLog2Pi + 0.5 * std::clamp(f[1], -kExpClamp, kExpClamp) + half_sq;
      if (derivs) {
        out.d1 << -r * prec, 0.5 - half_sq;
        out.d2 << prec, half_sq;
      }
      break;
    }
    case Family::Gaussian: {
      const double r = y - f[0];
      const double s2 = spec.sigma * spec.sigma;
      out.value = kHalfLog2Pi + std::log(spec.sigma) + 0.5 * r * r / s2;
      if (derivs) {
        out.d1 << -r / s2;
        out.d2 << 1.0 / s2;
      }
      break;
    }
    case Family::Bernoulli: {
      out.value = softplus(f[0]) - y * f[0];
      if (derivs) {
        const double p = sigmoid(f[0]);
        out.d1 << p - y;
        out.d2 << p * (1.0 - p);
      }
      break;
    }
    case Family::Beta: {
      const double a = link_exp(f[0]);
      const double b = link_exp(f[1]);
      const double ly = std::log(y);
      const double l1y = std::log1p(-y);
      out.value = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b) - (a - 1.0) * ly -
                  (b - 1.0) * l1y;
      if (derivs) {
        const double psi_ab = boost::math::digamma(a + b);
        const double tri_ab = boost::math::trigamma(a + b);
        const double ga = boost::math::digamma(a) - psi_ab - ly;
        const double gb = boost::math::digamma(b) - psi_ab - l1y;
        out.d1 << a * ga, b * gb;
        out.d2 << a * ga + a * a * (boost::math::trigamma(a) - tri_ab),
            b * gb + b * b * (boost::math::trigamma(b) - tri_ab);
      }
      break;
    }
    case Family::Gamma: {
      const double a = link_exp(f[0]);
      const double b = link_exp(f[1]);
      const double ly = std::log(y);
      const double lb = std::clamp(f[1], -kExpClamp, kExpClamp);
      out.value = std::lgamma(a) - a * lb - (a - 1.0) * ly + b * y;
      if (derivs) {
        const double ga = boost::math::digamma(a) - lb - ly;
        out.d1 << a * ga, -a + b * y;
        out.d2 << a * ga + a * a * boost::math::trigamma(a), b * y;
      }
      break;
    }
    case Family::Exponential: {
      const double rate = link_exp(f[0]);
      out.value = -std::clamp(f[0], -kExpClamp, kExpClamp) + y * rate;
      if (derivs) {
        out.d1 << -1.0 + y * rate;
        out.d2 << y * rate;
      }
      break;
    }
    case Family::Poisson: {
      const double rate = link_exp(f[0]);
      out.value = rate - y * std::clamp(f[0], -kExpClamp, kExpClamp) + std::lgamma(y + 1.0);
      if (derivs) {
        out.d1 << rate - y;
        out.d2 << rate;
      }
      break;
    }
  }
  return out;
}

}  // namespace detail

inline double nll(const LikelihoodSpec& spec, double y, const LatentPoint& f) {
  check_latent(spec, f);
  check_support(spec, y);
  return detail::nll_eval(spec, y, f.data(), false).value;
}

inline NllDerivatives nll_derivatives(const LikelihoodSpec& spec, double y, const LatentPoint& f) {
  check_latent(spec, f);
  check_support(spec, y);
  return detail::nll_eval(spec, y, f.data(), true);
}

inline LatentPoint dnll_df(const LikelihoodSpec& spec, double y, const LatentPoint& f) {
  return nll_derivatives(spec, y, f).d1;
}

inline LatentPoint d2nll_df2(const LikelihoodSpec& spec, double y, const LatentPoint& f) {
  return nll_derivatives(spec, y, f).d2;
}

struct GaussianMarginal1D {
  double mean = 0.0;
  double variance = 1.0;
};

enum class ExpectationMethod { MonteCarlo, GaussHermite };

struct ExpectationOptions {
  ExpectationMethod method = ExpectationMethod::MonteCarlo;
  int mc_samples = 20;        // S_f
  int quadrature_nodes = 20;  // per latent dimension
  bool closed_form = true;    // analytic expectations where available
};

/// E[g], E[dg/df] and 0.5 E[d2g/df2] under independent Gaussian marginals.
struct ExpectedNll {
  double value = 0.0;
  LatentPoint g_m;
  LatentPoint g_v;
};

/// Probabilists' Gauss-Hermite rule with weights normalized to sum to one,
/// so that sum_i w_i h(x_i) ~= E[h(z)], z ~ N(0, 1).
struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

inline GaussHermiteRule compute_gauss_hermite(int n) {
  if (n < 1) throw DomainError("Gauss-Hermite rule needs at least one node");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  GaussHermiteRule rule{eig.eigenvalues(), eig.eigenvectors().row(0).transpose().array().square()};
  rule.weights /= rule.weights.sum();
  return rule;
}

inline const GaussHermiteRule& gauss_hermite(int n) {
  thread_local std::map<int, GaussHermiteRule> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, compute_gauss_hermite(n)).first;
  return it->second;
}

namespace detail {

inline bool has_closed_form(Family f) {
  return f == Family::HetGaussian || f == Family::Gaussian || f == Family::Exponential ||
         f == Family::Poisson;
}

inline ExpectedNll closed_form_expectation(const LikelihoodSpec& spec, double y,
                                           std::span<const GaussianMarginal1D> q) {
  ExpectedNll out;
  const int j = spec.num_latent();
  out.g_m.setZero(j);
  out.g_v.setZero(j);
  switch (spec.family) {
    case Family::HetGaussian: {
      const double m1 = q[0].mean, v1 = q[0].variance;
      const double m2 = q[1].mean, v2 = q[1].variance;
      // E[exp(-f2)] = exp(-m2 + v2/2)
      const double e_prec = link_exp(-m2 + 0.5 * v2);
      const double r = y - m1;
      const double e_sq = r * r + v1;
      out.value = kHalfLog2Pi + 0.5 * m2 + 0.5 * e_sq * e_prec;
      out.g_m << -r * e_prec, 0.5 - 0.5 * e_sq * e_prec;
      out.g_v << 0.5 * e_prec, 0.25 * e_sq * e_prec;
      break;
    }
    case Family::Gaussian: {
      const double s2 = spec.sigma * spec.sigma;
      const double r = y - q[0].mean;
      out.value = kHalfLog2Pi + std::log(spec.sigma) + 0.5 * (r * r + q[0].variance) / s2;
      out.g_m << -r / s2;
      out.g_v << 0.5 / s2;
      break;
    }
    case Family::Exponential: {
      const double e_rate = link_exp(q[0].mean + 0.5 * q[0].variance);
      out.value = -q[0].mean + y * e_rate;
      out.g_m << -1.0 + y * e_rate;
      out.g_v << 0.5 * y * e_rate;
      break;
    }
    case Family::Poisson: {
      const double e_rate = link_exp(q[0].mean + 0.5 * q[0].variance);
      out.value = e_rate - y * q[0].mean + std::lgamma(y + 1.0);
      out.g_m << e_rate - y;
      out.g_v << 0.5 * e_rate;
      break;
    }
    default:
      throw Error("no closed-form expectation for " + to_string(spec));
  }
  return out;
}

}  // namespace detail

/// Expected negative log likelihood of one observation under independent
/// Gaussian marginals over its latent parameter functions. Monte Carlo
/// draws S_f x J_d standard normals from `rng` regardless of the marginal
/// values, so identical seeds give common random numbers across calls.
inline ExpectedNll expected_nll(const LikelihoodSpec& spec, double y,
                                std::span<const GaussianMarginal1D> marginals,
                                const ExpectationOptions& opts, Rng& rng,
                                bool with_derivatives = true) {
  const int j = spec.num_latent();
  if (static_cast<int>(marginals.size()) != j) {
    throw ShapeError("expected " + std::to_string(j) + " marginals for " + to_string(spec));
  }
  check_support(spec, y);
  for (const auto& m : marginals) {
    if (!(m.variance >= 0.0)) throw DomainError("marginal variance must be nonnegative");
  }
  if (opts.closed_form && detail::has_closed_form(spec.family)) {
    return detail::closed_form_expectation(spec, y, marginals);
  }

  ExpectedNll out;
  out.g_m.setZero(j);
  out.g_v.setZero(j);
  double sd[kMaxLatentPerOutput];
  for (int k = 0; k < j; ++k) sd[k] = std::sqrt(marginals[static_cast<std::size_t>(k)].variance);
  double f[kMaxLatentPerOutput];

  auto accumulate = [&](double w) {
    const auto e = detail::nll_eval(spec, y, f, with_derivatives);
    out.value += w * e.value;
    if (with_derivatives) {
      out.g_m += w * e.d1;
      out.g_v += (0.5 * w) * e.d2;
    }
  };

  if (opts.method == ExpectationMethod::MonteCarlo) {
    if (opts.mc_samples < 1) throw DomainError("mc_samples must be positive");
    std::normal_distribution<double> n01(0.0, 1.0);
    const double w = 1.0 / opts.mc_samples;
    for (int s = 0; s < opts.mc_samples; ++s) {
      for (int k = 0; k < j; ++k) f[k] = marginals[static_cast<std::size_t>(k)].mean + sd[k] * n01(rng);
      accumulate(w);
    }
  } else {
    const auto& rule = gauss_hermite(opts.quadrature_nodes);
    const auto n = rule.nodes.size();
    if (j == 1) {
      for (Eigen::Index a = 0; a < n; ++a) {
        f[0] = marginals[0].mean + sd[0] * rule.nodes[a];
        accumulate(rule.weights[a]);
      }
    } else {
      for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
          f[0] = marginals[0].mean + sd[0] * rule.nodes[a];
          f[1] = marginals[1].mean + sd[1] * rule.nodes[b];
          accumulate(rule.weights[a] * rule.weights[b]);
        }
      }
    }
  }
  return out;
}

inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Negative log predictive density -log((1/S) sum_s p(y | phi(f_s))),
/// f_s drawn from the marginals.
inline double nlpd(const LikelihoodSpec& spec, double y_star,
                   std::span<const GaussianMarginal1D> marginals, int samples, Rng& rng) {
  const int j = spec.num_latent();
  if (static_cast<int>(marginals.size()) != j) {
    throw ShapeError("expected " + std::to_string(j) + " marginals for " + to_string(spec));
  }
  if (samples < 1) throw DomainError("nlpd needs at least one sample");
  check_support(spec, y_star);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> log_p(static_cast<std::size_t>(samples));
  double f[kMaxLatentPerOutput];
  for (int s = 0; s < samples; ++s) {
    for (int k = 0; k < j; ++k) {
      const auto& m = marginals[static_cast<std::size_t>(k)];
      f[k] = m.mean + std::sqrt(m.variance) * n01(rng);
    }
    log_p[static_cast<std::size_t>(s)] = -detail::nll_eval(spec, y_star, f, false).value;
  }
  return -(log_sum_exp(log_p) - std::log(static_cast<double>(samples)));
}

}  // namespace hetmogp

#endif
