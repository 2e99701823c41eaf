// Command-line front end: run, evaluate, demo, generate.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "hetmogp/hetmogp.hpp"

namespace {

using namespace hetmogp;

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const RunConfig rc = parse_run_config(ConfigDoc::load(config_path));
  const auto summary = run_experiment(rc, out_dir);
  for (const auto& s : summary.seeds) {
    std::cout << "seed " << s.seed << ": ";
    if (s.ok) {
      std::cout << "final nelbo " << s.final_nelbo << ", mean nlpd " << mean_of(s.final_nlpd) << " ("
                << std::fixed << std::setprecision(1) << s.seconds << " s)" << std::defaultfloat
                << std::setprecision(6) << '\n';
    } else {
      std::cout << "FAILED: " << s.error << '\n';
    }
  }
  return summary.exit_code;
}

int cmd_evaluate(const std::string& run_dir, std::uint64_t seed) {
  namespace fs = std::filesystem;
  const RunConfig rc = parse_run_config(ConfigDoc::load((fs::path(run_dir) / "config.echo").string()));
  const auto state = read_state((fs::path(run_dir) / ("seed_" + std::to_string(seed)) / "state.bin").string());
  const auto nlpd = evaluate_state(rc, state, seed);
  std::cout << "output,nlpd\n" << std::setprecision(10);
  for (std::size_t d = 0; d < nlpd.size(); ++d) {
    std::cout << d + 1 << ',';
    if (std::isfinite(nlpd[d])) {
      std::cout << nlpd[d];
    } else {
      std::cout << "NA";
    }
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous multi-output Gaussian processes"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run";
  auto* run = app.add_subcommand("run", "train every seed listed in a config file");
  run->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", out_dir, "run directory");

  std::string run_dir;
  std::uint64_t eval_seed = 1;
  auto* evaluate = app.add_subcommand("evaluate", "test NLPD of a saved state");
  evaluate->add_option("run_dir", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("-s,--seed", eval_seed, "seed whose state to load");

  VoDemoOptions demo_opts;
  std::string kl = "on", demo_out = "-";
  int baseline_iters = 0;
  auto* demo = app.add_subcommand("demo", "1-D variational optimization trajectory");
  demo->add_option("--kl", kl, "KL penalty on|off")->check(CLI::IsMember({"on", "off"}));
  demo->add_option("--mu0", demo_opts.mu0);
  demo->add_option("--sigma0", demo_opts.sigma0)->check(CLI::PositiveNumber);
  demo->add_option("--lambda", demo_opts.lambda);
  demo->add_option("--iters", demo_opts.iterations);
  demo->add_option("--alpha", demo_opts.alpha)->check(CLI::PositiveNumber);
  demo->add_option("--samples", demo_opts.samples)->check(CLI::PositiveNumber);
  demo->add_option("--seed", demo_opts.seed);
  demo->add_option("--baseline", baseline_iters, "also emit a Newton descent path of this length");
  demo->add_option("-o,--out", demo_out, "trajectory CSV ('-' for stdout)");

  std::string toy = "T1", gen_out = "data.csv";
  int gen_n = 400, gen_p = 1;
  std::uint64_t gen_seed = 0;
  auto* generate = app.add_subcommand("generate", "write a toy dataset as CSV plus JSON metadata");
  generate->add_option("--toy", toy)->check(CLI::IsMember({"T1", "T2", "T3"}));
  generate->add_option("-N,--N", gen_n)->check(CLI::PositiveNumber);
  generate->add_option("-P,--P", gen_p)->check(CLI::PositiveNumber);
  generate->add_option("--seed", gen_seed);
  generate->add_option("-o,--out", gen_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir);
    if (*evaluate) return cmd_evaluate(run_dir, eval_seed);
    if (*demo) {
      demo_opts.use_kl = kl == "on";
      const auto traj = vo_demo(multimodal_objective(), demo_opts);
      std::ofstream file;
      if (demo_out != "-") file.open(demo_out);
      std::ostream& os = demo_out == "-" ? std::cout : file;
      os << std::setprecision(12) << "iter,mu,sigma,g_mu\n";
      for (const auto& p : traj) os << p.iter << ',' << p.mu << ',' << p.sigma << ',' << p.g_mu << '\n';
      if (baseline_iters > 0) {
        const auto path = newton_baseline(multimodal_objective(), demo_opts.mu0, baseline_iters);
        std::cerr << "baseline end point: " << path.back() << '\n';
      }
      return 0;
    }
    if (*generate) {
      const auto t = generate_toy(parse_toy(toy), gen_p, gen_n, gen_seed);
      write_csv(gen_out, t.data);
      std::ofstream(gen_out + ".json") << t.metadata.dump(2) << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
