#ifndef HETMOGP_EXPERIMENT_HPP
#define HETMOGP_EXPERIMENT_HPP

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hetmogp/config.hpp"
#include "hetmogp/data.hpp"
#include "hetmogp/errors.hpp"
#include "hetmogp/model.hpp"
#include "hetmogp/optimizers.hpp"
#include "hetmogp/theta.hpp"

namespace hetmogp {

enum class OptimizerKind { SGD, Adam, HYB, FNG };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "hyb") return OptimizerKind::HYB;
  if (s == "fng") return OptimizerKind::FNG;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd, adam, hyb or fng)");
}

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::HYB: return "hyb";
    case OptimizerKind::FNG: return "fng";
  }
  return "?";
}

struct RunConfig {
  // [model]
  Prior prior = Prior::LMC;
  int num_latent = 3;
  int num_inducing = 20;
  // [data]
  std::string toy = "T1";  // empty when csv is set
  std::string csv;
  std::vector<std::string> likelihoods;  // csv only
  int n = 400;
  int input_dim = 1;
  std::uint64_t data_seed = 0;
  double train_fraction = 0.75;
  // [train]
  OptimizerKind optimizer = OptimizerKind::FNG;
  int batch_size = 50;
  int max_iters = 500;
  int eval_every = 10;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double lambda1 = 1e-3;
  int s_theta = 1;
  int s_f = 20;
  int nlpd_samples = 1000;
  int workers = 1;
  // [fng]
  StepSizes steps;
  bool sqrt_p = true;
  bool precision_momentum = false;
  double init_sigma2 = 0.1;
  bool whiten = true;  // [model]
  // [adam], [sgd], [hyb]
  double adam_lr = 0.01;
  double sgd_lr = 1e-5;
  double hyb_beta = 0.01;
  double hyb_lr = 0.01;

  void validate() const {
    if (num_latent < 1 || num_inducing < 1) throw ConfigError("Q and M must be positive");
    if (toy.empty() == csv.empty()) throw ConfigError("set exactly one of data.toy and data.csv");
    if (!csv.empty() && likelihoods.empty()) throw ConfigError("data.likelihoods is required with data.csv");
    if (n < 2 || input_dim < 1) throw ConfigError("data.N must be >= 2 and data.P >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (batch_size < 1 || max_iters < 1 || eval_every < 1) {
      throw ConfigError("batch_size, max_iters and eval_every must be positive");
    }
    if (seeds.empty()) throw ConfigError("train.seeds must not be empty");
    if (!(lambda1 > 0.0)) throw ConfigError("lambda1 must be positive");
    if (s_theta < 1 || s_f < 1 || nlpd_samples < 1 || workers < 1) {
      throw ConfigError("sample counts and workers must be positive");
    }
    steps.validate();
    if (!(init_sigma2 > 0.0)) throw ConfigError("fng.init_sigma2 must be positive");
    if (!(adam_lr > 0.0) || !(sgd_lr > 0.0) || !(hyb_beta > 0.0) || !(hyb_lr > 0.0)) {
      throw ConfigError("learning rates must be positive");
    }
  }
};

inline RunConfig parse_run_config(const ConfigDoc& doc) {
  RunConfig c;
  const std::string prior = doc.get_string("model.prior", "lmc");
  if (prior == "lmc") {
    c.prior = Prior::LMC;
  } else if (prior == "cpm") {
    c.prior = Prior::CPM;
  } else {
    throw ConfigError("model.prior must be \"lmc\" or \"cpm\"");
  }
  c.num_latent = static_cast<int>(doc.get_int("model.Q", c.num_latent));
  c.num_inducing = static_cast<int>(doc.get_int("model.M", c.num_inducing));
  c.whiten = doc.get_bool("model.whiten", c.whiten);
  c.csv = doc.get_string("data.csv", "");
  c.toy = doc.get_string("data.toy", c.csv.empty() ? c.toy : "");
  c.likelihoods = doc.get_string_list("data.likelihoods", {});
  c.n = static_cast<int>(doc.get_int("data.N", c.n));
  c.input_dim = static_cast<int>(doc.get_int("data.P", c.input_dim));
  c.data_seed = static_cast<std::uint64_t>(doc.get_int("data.seed", 0));
  c.train_fraction = doc.get_double("data.train_fraction", c.train_fraction);
  c.optimizer = parse_optimizer(doc.get_string("train.optimizer", "fng"));
  c.batch_size = static_cast<int>(doc.get_int("train.batch_size", c.batch_size));
  c.max_iters = static_cast<int>(doc.get_int("train.max_iters", c.max_iters));
  c.eval_every = static_cast<int>(doc.get_int("train.eval_every", c.eval_every));
  std::vector<long long> def_seeds(c.seeds.begin(), c.seeds.end());
  c.seeds.clear();
  for (long long s : doc.get_int_list("train.seeds", def_seeds)) {
    if (s < 0) throw ConfigError("seeds must be nonnegative");
    c.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  c.lambda1 = doc.get_double("train.lambda1", c.lambda1);
  c.s_theta = static_cast<int>(doc.get_int("train.s_theta", c.s_theta));
  c.s_f = static_cast<int>(doc.get_int("train.s_f", c.s_f));
  c.nlpd_samples = static_cast<int>(doc.get_int("train.nlpd_samples", c.nlpd_samples));
  c.workers = static_cast<int>(doc.get_int("train.workers", c.workers));
  c.steps.alpha = doc.get_double("fng.alpha", c.steps.alpha);
  c.steps.beta = doc.get_double("fng.beta", c.steps.beta);
  c.steps.gamma = doc.get_double("fng.gamma", c.steps.gamma);
  c.steps.upsilon = doc.get_double("fng.upsilon", c.steps.upsilon);
  c.sqrt_p = doc.get_bool("fng.sqrt_p", c.sqrt_p);
  c.precision_momentum = doc.get_bool("fng.precision_momentum", c.precision_momentum);
  c.init_sigma2 = doc.get_double("fng.init_sigma2", c.init_sigma2);
  c.adam_lr = doc.get_double("adam.lr", c.adam_lr);
  c.sgd_lr = doc.get_double("sgd.lr", c.sgd_lr);
  c.hyb_beta = doc.get_double("hyb.beta", c.hyb_beta);
  c.hyb_lr = doc.get_double("hyb.lr", c.hyb_lr);
  doc.reject_unknown();
  c.validate();
  return c;
}

/// Effective configuration in the same format `parse_run_config` reads.
inline std::string echo_config(const RunConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  auto quoted = [](const std::string& s) { return "\"" + s + "\""; };
  os << "[model]\nprior = " << quoted(to_string(c.prior)) << "\nQ = " << c.num_latent
     << "\nM = " << c.num_inducing << "\nwhiten = " << (c.whiten ? "true" : "false")
     << "\n\n[data]\n";
  if (!c.csv.empty()) {
    os << "csv = " << quoted(c.csv) << "\nlikelihoods = [";
    for (std::size_t i = 0; i < c.likelihoods.size(); ++i) os << (i ? ", " : "") << quoted(c.likelihoods[i]);
    os << "]\n";
  } else {
    os << "toy = " << quoted(c.toy) << "\n";
  }
  os << "N = " << c.n << "\nP = " << c.input_dim << "\nseed = " << c.data_seed
     << "\ntrain_fraction = " << c.train_fraction << "\n\n[train]\noptimizer = "
     << quoted(to_string(c.optimizer)) << "\nbatch_size = " << c.batch_size
     << "\nmax_iters = " << c.max_iters << "\neval_every = " << c.eval_every << "\nseeds = [";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) os << (i ? ", " : "") << c.seeds[i];
  os << "]\nlambda1 = " << c.lambda1 << "\ns_theta = " << c.s_theta << "\ns_f = " << c.s_f
     << "\nnlpd_samples = " << c.nlpd_samples << "\nworkers = " << c.workers << "\n\n[fng]\nalpha = "
     << c.steps.alpha << "\nbeta = " << c.steps.beta << "\ngamma = " << c.steps.gamma
     << "\nupsilon = " << c.steps.upsilon << "\nsqrt_p = " << (c.sqrt_p ? "true" : "false")
     << "\nprecision_momentum = " << (c.precision_momentum ? "true" : "false")
     << "\ninit_sigma2 = " << c.init_sigma2 << "\n\n[adam]\nlr = "
     << c.adam_lr << "\n\n[sgd]\nlr = " << c.sgd_lr << "\n\n[hyb]\nbeta = " << c.hyb_beta
     << "\nlr = " << c.hyb_lr << "\n";
  return os.str();
}

inline ModelConfig model_config(const RunConfig& c, const std::vector<LikelihoodSpec>& likelihoods) {
  ModelConfig m;
  m.prior = c.prior;
  m.coords = c.whiten ? Coordinates::Whitened : Coordinates::Raw;
  m.likelihoods = likelihoods;
  m.num_latent = c.num_latent;
  m.num_inducing = c.num_inducing;
  m.input_dim = c.input_dim;
  return m;
}

/// Loads or generates the dataset named by the config and splits it.
inline std::pair<Dataset, Dataset> load_data(RunConfig& c) {
  Dataset full;
  if (!c.csv.empty()) {
    std::vector<LikelihoodSpec> specs;
    for (const auto& s : c.likelihoods) specs.push_back(parse_likelihood(s));
    full = load_csv(c.csv, specs);
    c.n = static_cast<int>(full.size());
    c.input_dim = full.input_dim();
  } else {
    full = generate_toy(parse_toy(c.toy), c.input_dim, c.n, c.data_seed).data;
  }
  return split(full, {c.train_fraction, c.data_seed});
}

// ---------------------------------------------------------------------------
// Model state and its binary form

struct TrainedState {
  Prior prior = Prior::LMC;
  Coordinates coords = Coordinates::Raw;  // of `post`
  VectorXd theta_mean;    // mu for FNG, the point estimate otherwise
  VectorXd theta_var;     // sigma2 for FNG, empty otherwise
  VariationalPosterior post;
  InducingSet z;          // decoded from theta_mean
};

/// Initial state: Z uniform over the input bounding box, log L = log kappa
/// = log 0.1, weights ~ N(0, 1). In whitened coordinates every q(v) block
/// has m ~ N(0, 0.1^2 I) and V = 0.1 I; raw coordinates get the same q(u).
inline TrainedState initial_state(const ModelConfig& cfg, const MatrixXd& x, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const VectorXd lo = x.colwise().minCoeff().transpose();
  const VectorXd hi = x.colwise().maxCoeff().transpose();
  const int blocks = cfg.num_blocks();
  const int m = cfg.num_inducing;
  ModelParams params;
  for (int b = 0; b < blocks; ++b) {
    MatrixXd z(m, cfg.input_dim);
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      for (Eigen::Index r = 0; r < z.rows(); ++r) z(r, c) = lo[c] + (hi[c] - lo[c]) * unit(rng);
    }
    params.z.push_back(std::move(z));
  }
  for (int q = 0; q < cfg.num_latent; ++q) {
    params.hyper.lengthscales.push_back(EqLengthscales::constant(cfg.input_dim, 0.1));
  }
  params.hyper.weights.resize(cfg.num_lpf(), cfg.num_latent);
  for (Eigen::Index c = 0; c < params.hyper.weights.cols(); ++c) {
    for (Eigen::Index r = 0; r < params.hyper.weights.rows(); ++r) params.hyper.weights(r, c) = n01(rng);
  }
  if (cfg.prior == Prior::CPM) {
    for (int j = 0; j < cfg.num_lpf(); ++j) params.hyper.kappa.push_back(VectorXd::Constant(cfg.input_dim, 0.1));
  }
  TrainedState s;
  s.prior = cfg.prior;
  s.coords = cfg.coords;
  for (int b = 0; b < blocks; ++b) {
    VariationalBlock blk;
    blk.mean.resize(m);
    for (int i = 0; i < m; ++i) blk.mean[i] = 0.1 * n01(rng);
    blk.factor = std::sqrt(0.1) * MatrixXd::Identity(m, m);
    s.post.blocks.push_back(std::move(blk));
  }
  if (cfg.coords == Coordinates::Raw) s.post = unwhiten(s.post, prior_blocks(cfg, params));
  s.theta_mean = ThetaLayout(cfg).pack(params);
  s.z = params.z;
  return s;
}

namespace detail {

inline constexpr char kStateMagic[8] = {'H', 'M', 'G', 'P', 'S', 'T', 'A', 'T'};
inline constexpr std::uint32_t kStateVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error("state file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error("state file truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void put_section(std::ostream& os, const char (&tag)[5], const MatrixXd& a) {
  os.write(tag, 4);
  put_u32(os, static_cast<std::uint32_t>(a.rows()));
  put_u32(os, static_cast<std::uint32_t>(a.cols()));
  for (Eigen::Index i = 0; i < a.size(); ++i) put_f64(os, a.data()[i]);
}

inline MatrixXd get_section(std::istream& is, const char (&tag)[5]) {
  char got[4];
  if (!is.read(got, 4)) throw Error("state file truncated");
  if (std::memcmp(got, tag, 4) != 0) {
    throw Error(std::string("state file: expected section ") + tag + ", found " + std::string(got, 4));
  }
  const auto r = get_u32(is);
  const auto c = get_u32(is);
  MatrixXd a(r, c);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = get_f64(is);
  return a;
}

}  // namespace detail

/// Little-endian binary dump; layout documented in the README.
inline void write_state(const std::string& path, const TrainedState& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(detail::kStateMagic, 8);
  detail::put_u32(os, detail::kStateVersion);
  detail::put_u32(os, s.prior == Prior::LMC ? 0u : 1u);
  detail::put_u32(os, s.coords == Coordinates::Raw ? 0u : 1u);
  detail::put_u32(os, static_cast<std::uint32_t>(s.post.blocks.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(s.z.size()));
  detail::put_section(os, "THMU", s.theta_mean);
  detail::put_section(os, "THS2", s.theta_var);
  for (const auto& b : s.post.blocks) {
    detail::put_section(os, "VMEA", b.mean);
    detail::put_section(os, "VFAC", b.factor);
  }
  for (const auto& z : s.z) detail::put_section(os, "ZIND", z);
  if (!os) throw Error("failed writing " + path);
}

inline TrainedState read_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kStateMagic, 8) != 0) {
    throw Error(path + ": not a state file");
  }
  const auto version = detail::get_u32(is);
  if (version != detail::kStateVersion) throw Error(path + ": unsupported version " + std::to_string(version));
  TrainedState s;
  s.prior = detail::get_u32(is) == 0 ? Prior::LMC : Prior::CPM;
  s.coords = detail::get_u32(is) == 0 ? Coordinates::Raw : Coordinates::Whitened;
  const auto nb = detail::get_u32(is);
  const auto nz = detail::get_u32(is);
  s.theta_mean = detail::get_section(is, "THMU");
  s.theta_var = detail::get_section(is, "THS2");
  for (std::uint32_t b = 0; b < nb; ++b) {
    VariationalBlock blk;
    blk.mean = detail::get_section(is, "VMEA");
    blk.factor = detail::get_section(is, "VFAC");
    s.post.blocks.push_back(std::move(blk));
  }
  for (std::uint32_t b = 0; b < nz; ++b) s.z.push_back(detail::get_section(is, "ZIND"));
  return s;
}

// ---------------------------------------------------------------------------
// Training

struct MetricsRow {
  int iter = 0;
  double nelbo = 0.0;
  std::vector<double> nlpd;  // empty except at evaluation iterations
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<MetricsRow> metrics;
  TrainedState state;
  double final_nelbo = 0.0;        // full training set, theta at its MAP point
  std::vector<double> final_nlpd;  // per output, test set
  std::uint64_t clamp_events = 0;
  long rejections = 0;
  double seconds = 0.0;
};

/// Invariants checked after every step.
inline void check_step_invariants(const TrainedState& s, const ExploratoryDist* q) {
  if (q) {
    if ((q->p.array() < 0.0).any()) throw Error("invariant violated: p < 0");
    if (!(q->sigma2.array() > 0.0).all()) throw Error("invariant violated: sigma2 <= 0");
  }
  for (const auto& b : s.post.blocks) {
    if (!b.factor.allFinite() || !(b.factor.diagonal().array() > 0.0).all()) {
      throw Error("invariant violated: V not PD");
    }
  }
  if (!s.theta_mean.allFinite()) throw Error("theta is not finite");
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t c = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      s += x;
      ++c;
    }
  }
  return c ? s / static_cast<double>(c) : std::numeric_limits<double>::quiet_NaN();
}

/// Trains one seed. Random streams: 1 initialization, 2 minibatches,
/// 3 optimizer, 4 final objective, 1000 + t evaluation at iteration t.
inline SeedResult train_seed(const RunConfig& rc, const Dataset& train, const Dataset& test,
                             std::uint64_t seed) {
  SeedResult res;
  res.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t clamp0 = clamp_events();
  try {
    const ModelConfig cfg = model_config(rc, train.likelihoods);
    ExpectationOptions eo;
    eo.mc_samples = rc.s_f;
    const SviProblem problem(cfg, train, eo);
    Rng init_rng = make_rng(seed, 1);
    TrainedState st = initial_state(cfg, train.X, init_rng);
    EpochSampler sampler(train.size(), static_cast<std::size_t>(rc.batch_size), make_rng(seed, 2));
    Rng opt_rng = make_rng(seed, 3);

    ExploratoryDist q;
    FngState fng;
    FngOptions fo{rc.steps, rc.lambda1, rc.s_theta, rc.sqrt_p, rc.precision_momentum};
    AdamState adam;
    HybState hyb;
    FirstOrderOptions first{rc.optimizer == OptimizerKind::SGD ? FirstOrder::SGD : FirstOrder::Adam,
                            rc.optimizer == OptimizerKind::SGD ? rc.sgd_lr : rc.adam_lr, {}};
    HybOptions ho{rc.hyb_beta, rc.hyb_lr, {}};
    if (rc.optimizer == OptimizerKind::FNG) {
      q = ExploratoryDist::from_variance(st.theta_mean, VectorXd::Constant(st.theta_mean.size(), rc.init_sigma2),
                                         rc.lambda1);
    }

    for (int it = 1; it <= rc.max_iters; ++it) {
      const MiniBatch batch = sampler.next_batch();
      StepInfo info;
      switch (rc.optimizer) {
        case OptimizerKind::FNG:
          info = fng_step(problem, batch, st.post, q, fng, fo, opt_rng);
          st.theta_mean = q.mu;
          st.theta_var = q.sigma2;
          break;
        case OptimizerKind::HYB:
          info = hyb_step(problem, batch, st.theta_mean, st.post, hyb, ho, opt_rng);
          break;
        case OptimizerKind::SGD:
        case OptimizerKind::Adam:
          info = first_order_step(problem, batch, st.theta_mean, st.post, adam, first, opt_rng);
          break;
      }
      res.rejections += info.rejections;
      if (!std::isfinite(info.nelbo)) throw Error("NELBO became non-finite at iteration " + std::to_string(it));
      check_step_invariants(st, rc.optimizer == OptimizerKind::FNG ? &q : nullptr);
      MetricsRow row{it, info.nelbo, {}};
      if (it % rc.eval_every == 0) {
        Rng er = make_rng(seed, 1000 + static_cast<std::uint64_t>(it));
        row.nlpd = test_nlpd(cfg, test, st.post, problem.layout.unpack(st.theta_mean), rc.nlpd_samples, er);
      }
      res.metrics.push_back(std::move(row));
    }

    const ModelParams map = problem.layout.unpack(st.theta_mean);
    st.z = map.z;
    Rng fr = make_rng(seed, 4);
    res.final_nelbo = nelbo(cfg, train, MiniBatch::full(train.size()), st.post, map, eo, fr);
    Rng nr = make_rng(seed, 5);
    res.final_nlpd = test_nlpd(cfg, test, st.post, map, rc.nlpd_samples, nr);
    res.state = std::move(st);
    res.ok = true;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  res.clamp_events = clamp_events() - clamp0;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline std::string format_double(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_metrics(const std::string& path, const SeedResult& r, int num_outputs) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path);
  os << "iter,nelbo";
  for (int d = 1; d <= num_outputs; ++d) os << ",nlpd_out_" << d;
  os << '\n';
  for (const auto& row : r.metrics) {
    os << row.iter << ',' << format_double(row.nelbo);
    for (int d = 0; d < num_outputs; ++d) {
      os << ',';
      if (!row.nlpd.empty()) os << format_double(row.nlpd[static_cast<std::size_t>(d)]);
    }
    os << '\n';
  }
}

struct RunSummary {
  std::vector<SeedResult> seeds;
  int exit_code = 0;
};

/// Trains every seed (in parallel when workers > 1) and writes the run
/// directory: config.echo, manifest.json, seed_<s>/metrics.csv and
/// seed_<s>/state.bin.
inline RunSummary run_experiment(RunConfig rc, const std::string& out_dir) {
  rc.validate();
  auto [train, test] = load_data(rc);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream os(fs::path(out_dir) / "config.echo");
    os << echo_config(rc);
  }
  RunSummary summary;
  summary.seeds.resize(rc.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rc.seeds.size(); i = next++) {
      summary.seeds[i] = train_seed(rc, train, test, rc.seeds[i]);
    }
  };
  const int nw = std::min<int>(rc.workers, static_cast<int>(rc.seeds.size()));
  if (nw <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  nlohmann::json manifest;
  manifest["optimizer"] = to_string(rc.optimizer);
  manifest["prior"] = to_string(rc.prior);
  manifest["num_outputs"] = train.num_outputs();
  manifest["train_size"] = train.size();
  manifest["test_size"] = test.size();
  std::size_t ok = 0;
  for (const auto& r : summary.seeds) {
    const fs::path dir = fs::path(out_dir) / ("seed_" + std::to_string(r.seed));
    fs::create_directories(dir);
    write_metrics((dir / "metrics.csv").string(), r, train.num_outputs());
    nlohmann::json e;
    e["seed"] = r.seed;
    e["status"] = r.ok ? "ok" : "failed";
    e["seconds"] = r.seconds;
    e["clamp_events"] = r.clamp_events;
    e["rejections"] = r.rejections;
    if (r.ok) {
      write_state((dir / "state.bin").string(), r.state);
      e["final_nelbo"] = r.final_nelbo;
      nlohmann::json nl = nlohmann::json::array();
      for (double v : r.final_nlpd) nl.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("NA"));
      e["final_nlpd"] = nl;
      e["final_mean_nlpd"] = mean_of(r.final_nlpd);
      ++ok;
    } else {
      e["error"] = r.error;
    }
    manifest["seeds"].push_back(e);
  }
  std::ofstream(fs::path(out_dir) / "manifest.json") << manifest.dump(2) << '\n';
  summary.exit_code = ok == 0 ? 3 : 0;
  return summary;
}

/// Per-output test NLPD of a saved state at theta = mu. Outputs without
/// test observations yield NaN.
inline std::vector<double> evaluate_state(RunConfig rc, const TrainedState& s, std::uint64_t seed) {
  auto [train, test] = load_data(rc);
  ModelConfig cfg = model_config(rc, train.likelihoods);
  cfg.coords = s.coords;
  const ThetaLayout layout(cfg);
  if (s.theta_mean.size() != layout.size() || s.prior != cfg.prior) {
    throw Error("state does not match the configured model");
  }
  Rng rng = make_rng(seed, 5);
  return test_nlpd(cfg, test, s.post, layout.unpack(s.theta_mean), rc.nlpd_samples, rng);
}

}  // namespace hetmogp

#endif
