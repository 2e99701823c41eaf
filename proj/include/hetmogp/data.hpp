#ifndef HETMOGP_DATA_HPP
#define HETMOGP_DATA_HPP

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hetmogp/dataset.hpp"
#include "hetmogp/errors.hpp"
#include "hetmogp/kernels.hpp"
#include "hetmogp/likelihoods.hpp"
#include "hetmogp/linalg.hpp"
#include "hetmogp/random.hpp"

namespace hetmogp {

enum class ToyProblem { T1, T2, T3 };

inline ToyProblem parse_toy(const std::string& name) {
  if (name == "T1" || name == "t1") return ToyProblem::T1;
  if (name == "T2" || name == "t2") return ToyProblem::T2;
  if (name == "T3" || name == "t3") return ToyProblem::T3;
  throw ConfigError("unknown toy problem '" + name + "'");
}

inline const char* to_string(ToyProblem t) {
  switch (t) {
    case ToyProblem::T1: return "T1";
    case ToyProblem::T2: return "T2";
    case ToyProblem::T3: return "T3";
  }
  return "?";
}

inline std::vector<LikelihoodSpec> toy_likelihoods(ToyProblem which) {
  using L = LikelihoodSpec;
  std::vector<L> out{L::het_gaussian(), L::beta(), L::bernoulli()};
  if (which == ToyProblem::T1) return out;
  out.push_back(L::gamma());
  out.push_back(L::exponential());
  if (which == ToyProblem::T2) return out;
  for (const auto& l : {L::gaussian(0.1), L::beta(), L::bernoulli(), L::gamma(), L::exponential()}) {
    out.push_back(l);
  }
  return out;
}

struct ToyOptions {
  int num_latent = 3;
  double min_lengthscale = 0.05;
  double max_lengthscale = 0.5;
  /// Beta draws are clipped to [eps, 1 - eps], positive draws to >= eps.
  double support_eps = 1e-6;
};

struct ToyData {
  Dataset data;
  nlohmann::json metadata;
  MatrixXd latent;  // N x Q draws of u_q at X
  MatrixXd lcc;     // J x Q
};

/// Samples one observation given latent parameter values f (length J_d).
inline double sample_observation(const LikelihoodSpec& spec, const double* f, Rng& rng,
                                 double eps) {
  LatentPoint fv(spec.num_latent());
  for (int k = 0; k < spec.num_latent(); ++k) fv[k] = f[k];
  const LatentPoint psi = link(spec, fv);
  switch (spec.family) {
    case Family::HetGaussian:
      return std::normal_distribution<double>(psi[0], std::sqrt(psi[1]))(rng);
    case Family::Gaussian:
      return std::normal_distribution<double>(psi[0], spec.sigma)(rng);
    case Family::Bernoulli:
      return std::bernoulli_distribution(psi[0])(rng) ? 1.0 : 0.0;
    case Family::Beta: {
      const double ga = std::gamma_distribution<double>(psi[0], 1.0)(rng);
      const double gb = std::gamma_distribution<double>(psi[1], 1.0)(rng);
      const double y = ga + gb > 0.0 ? ga / (ga + gb) : 0.5;
      return std::clamp(std::isfinite(y) ? y : 0.5, eps, 1.0 - eps);
    }
    case Family::Gamma:
      return std::max(eps, std::gamma_distribution<double>(psi[0], 1.0 / psi[1])(rng));
    case Family::Exponential:
      return std::max(eps, std::exponential_distribution<double>(psi[0])(rng));
    case Family::Poisson:
      return static_cast<double>(std::poisson_distribution<long>(psi[0])(rng));
  }
  return 0.0;
}

/// Toy data: X uniform on [0,1]^P; Q unit-variance EQ Gaussian processes
/// with lengthscales l ~ U[min, max] drawn exactly at X by dense Cholesky;
/// latent parameter functions f_{d,j} = sum_q a_{d,j,q} u_q with
/// a ~ N(0, 1); observations drawn from each output's likelihood.
inline ToyData generate_toy(ToyProblem which, int input_dim, int n, std::uint64_t seed,
                            const ToyOptions& opts = {}) {
  if (input_dim < 1 || n < 1) throw DomainError("toy generator needs P >= 1 and N >= 1");
  Rng rng = make_rng(seed, 0x70);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);

  ToyData out;
  out.data.likelihoods = toy_likelihoods(which);
  out.data.X.resize(n, input_dim);
  for (Eigen::Index c = 0; c < out.data.X.cols(); ++c) {
    for (Eigen::Index r = 0; r < out.data.X.rows(); ++r) out.data.X(r, c) = unit(rng);
  }

  const int q_count = opts.num_latent;
  std::vector<double> ells;
  out.latent.resize(n, q_count);
  for (int q = 0; q < q_count; ++q) {
    const double ell = opts.min_lengthscale + (opts.max_lengthscale - opts.min_lengthscale) * unit(rng);
    ells.push_back(ell);
    const auto ls = EqLengthscales::constant(input_dim, ell * ell);
    // Unit zero-lag variance: rescale the normalized EQ gram.
    const MatrixXd k = eq_gram(out.data.X, out.data.X, ls) / eq_variance(ls);
    const auto fac = factor_with_jitter(k);
    VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = n01(rng);
    out.latent.col(q) = fac.chol.lower() * z;
  }

  int j_total = 0;
  for (const auto& l : out.data.likelihoods) j_total += l.num_latent();
  out.lcc.resize(j_total, q_count);
  for (Eigen::Index c = 0; c < out.lcc.cols(); ++c) {
    for (Eigen::Index r = 0; r < out.lcc.rows(); ++r) out.lcc(r, c) = n01(rng);
  }
  const MatrixXd f = out.latent * out.lcc.transpose();  // N x J

  const auto d_count = static_cast<Eigen::Index>(out.data.likelihoods.size());
  out.data.Y.resize(n, d_count);
  for (Eigen::Index i = 0; i < n; ++i) {
    int off = 0;
    for (Eigen::Index d = 0; d < d_count; ++d) {
      const auto& spec = out.data.likelihoods[static_cast<std::size_t>(d)];
      double fv[kMaxLatentPerOutput];
      for (int k = 0; k < spec.num_latent(); ++k) fv[k] = f(i, off + k);
      out.data.Y(i, d) = sample_observation(spec, fv, rng, opts.support_eps);
      off += spec.num_latent();
    }
  }

  auto& meta = out.metadata;
  meta["generator"] = std::string("toy ") + to_string(which);
  meta["seed"] = seed;
  meta["N"] = n;
  meta["P"] = input_dim;
  meta["Q"] = q_count;
  meta["lengthscale_range"] = {opts.min_lengthscale, opts.max_lengthscale};
  meta["lengthscales"] = ells;
  meta["kernel"] = "EQ, unit variance, L = l^2";
  meta["lcc_distribution"] = "N(0, 1)";
  meta["support_eps"] = opts.support_eps;
  std::vector<std::string> fam;
  for (const auto& l : out.data.likelihoods) fam.push_back(to_string(l));
  meta["likelihoods"] = fam;
  return out;
}

// ---------------------------------------------------------------------------
// CSV

/// Writes `x1..xP,y1..yD` with missing outputs as empty cells.
inline void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << std::setprecision(17);
  for (Eigen::Index p = 0; p < data.X.cols(); ++p) os << (p ? "," : "") << "x" << p + 1;
  for (Eigen::Index d = 0; d < data.Y.cols(); ++d) os << ",y" << d + 1;
  os << '\n';
  for (Eigen::Index n = 0; n < data.X.rows(); ++n) {
    for (Eigen::Index p = 0; p < data.X.cols(); ++p) os << (p ? "," : "") << data.X(n, p);
    for (Eigen::Index d = 0; d < data.Y.cols(); ++d) {
      os << ',';
      if (!Dataset::missing(data.Y(n, d))) os << data.Y(n, d);
    }
    os << '\n';
  }
  if (!os) throw Error("failed writing " + path);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Reads a CSV with header `x1..xP,y1..yD`. Empty output cells are
/// missing. Output values are validated against `likelihoods` (one per
/// y column); violations raise DataError with the zero-based data rows.
inline Dataset load_csv(const std::string& path, const std::vector<LikelihoodSpec>& likelihoods) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw DataError(path + ": empty file", {});
  const auto header = detail::split_csv_line(line);
  int p_count = 0, d_count = 0;
  for (const auto& raw : header) {
    const auto h = detail::trim(raw);
    const bool is_x = !h.empty() && h[0] == 'x';
    const bool is_y = !h.empty() && h[0] == 'y';
    const int expected = is_x ? p_count + 1 : d_count + 1;
    if ((!is_x && !is_y) || h.substr(1) != std::to_string(expected) || (is_x && d_count > 0)) {
      throw DataError(path + ": header must be x1..xP,y1..yD, got '" + h + "'", {});
    }
    (is_x ? p_count : d_count) = expected;
  }
  if (p_count == 0 || d_count == 0) throw DataError(path + ": need at least one x and one y column", {});
  if (static_cast<int>(likelihoods.size()) != d_count) {
    throw ConfigError(path + ": " + std::to_string(d_count) + " outputs but " +
                      std::to_string(likelihoods.size()) + " likelihoods");
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> malformed;
  std::string first_error;
  while (std::getline(is, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    std::vector<double> row(static_cast<std::size_t>(p_count + d_count),
                            std::numeric_limits<double>::quiet_NaN());
    bool ok = static_cast<int>(cells.size()) == p_count + d_count;
    for (std::size_t c = 0; ok && c < cells.size(); ++c) {
      const auto t = detail::trim(cells[c]);
      if (t.empty()) {
        ok = static_cast<int>(c) >= p_count;
        continue;
      }
      try {
        std::size_t used = 0;
        row[c] = std::stod(t, &used);
        ok = used == t.size();
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      if (first_error.empty()) first_error = "row " + std::to_string(rows.size()) + ": malformed line";
      malformed.push_back(rows.size());
    }
    rows.push_back(std::move(row));
  }
  if (!malformed.empty()) throw DataError(path + ": " + first_error, malformed);

  Dataset data;
  data.likelihoods = likelihoods;
  const auto n = static_cast<Eigen::Index>(rows.size());
  data.X.resize(n, p_count);
  data.Y.resize(n, d_count);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (int c = 0; c < p_count; ++c) data.X(r, c) = row[static_cast<std::size_t>(c)];
    for (int d = 0; d < d_count; ++d) data.Y(r, d) = row[static_cast<std::size_t>(p_count + d)];
  }
  try {
    data.validate();
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what(), e.rows);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Splitting and batching

struct SplitSpec {
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded random permutation; the first round(fraction * N) rows go to the
/// training set. Both index lists are returned sorted.
inline Split split_indices(std::size_t n, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(spec.seed, 0x5b);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  const auto s = split_indices(data.size(), spec);
  return {data.subset(s.train), data.subset(s.test)};
}

/// Sweeps shuffled epochs without replacement. The last batch of an epoch
/// may be shorter when B does not divide N; its scale is N / |batch|.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::size_t batch_size, Rng rng)
      : n_(n), b_(std::min(batch_size, n)), rng_(std::move(rng)) {
    if (n == 0 || batch_size == 0) throw DomainError("batch sampler needs N > 0 and B > 0");
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n_;
  }

  MiniBatch next_batch() {
    if (pos_ >= n_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    const std::size_t end = std::min(n_, pos_ + b_);
    MiniBatch batch;
    batch.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                         order_.begin() + static_cast<std::ptrdiff_t>(end));
    batch.scale = static_cast<double>(n_) / static_cast<double>(end - pos_);
    pos_ = end;
    return batch;
  }

  std::size_t batches_per_epoch() const { return (n_ + b_ - 1) / b_; }

 private:
  std::size_t n_, b_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace hetmogp

#endif
