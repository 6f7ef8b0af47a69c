// nefctl: command-line driver for the nef experiments.
//
//   nefctl run <config> [--seed N] [--out path] [--parallel-clients]
//   nefctl grid <config> --eps 1e-4 --step 500 --kmax 20000
//   nefctl check <config>
//   nefctl gen-data --n 20 --d 10 --seed 0 --out data.libsvm
//   nefctl compare <configA> <configB> [--seed N] [--out path]

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nef/nef.hpp"

namespace {

constexpr int kUsageError = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool parallel = false;

  void apply(nef::ExperimentConfig& cfg) const {
    if (seed) cfg.run.seed = *seed;
    if (!out.empty()) cfg.run.out = out;
    if (parallel) cfg.run.parallel_clients = true;
  }
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--out", o.out, "Output CSV path");
  cmd->add_flag("--parallel-clients", o.parallel, "Run client steps on worker threads");
}

int cmd_run(const std::string& path, const Overrides& o) {
  nef::ExperimentConfig cfg = nef::load_config(path);
  o.apply(cfg);
  const bool to_stdout = cfg.run.out.empty();
  const nef::RunRecord rec = nef::run_experiment(cfg);
  if (to_stdout) {
    nef::write_csv(rec, std::cout, nef::to_text(cfg));
  } else {
    std::cerr << "wrote " << rec.rows.size() << " rows to " << cfg.run.out
              << "; min ||grad f||^2 = " << rec.min_grad_norm_sq() << '\n';
  }
  return 0;
}

int cmd_grid(const std::string& path, const Overrides& o, std::optional<double> eps, std::int64_t step,
             std::int64_t kmax) {
  nef::ExperimentConfig cfg = nef::load_config(path);
  o.apply(cfg);
  try {
    std::cout << nef::grid_search_K(cfg, eps.value_or(cfg.run.epsilon), step, kmax) << '\n';
  } catch (const nef::GridSearchError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}

int cmd_check(const std::string& path, const Overrides& o) {
  nef::ExperimentConfig cfg = nef::load_config(path);
  o.apply(cfg);
  const nef::CheckReport report = nef::check_suite(cfg);
  std::cout << report;
  return report.all_passed() ? 0 : 1;
}

int cmd_gen_data(std::size_t n, std::size_t d, std::uint64_t seed, const std::string& out) {
  nef::RngStream rng = nef::seeded_rng(seed);
  const nef::Dataset ds = nef::generate_synthetic(n, d, rng);
  if (out.empty()) {
    nef::write_libsvm(std::cout, ds);
    return 0;
  }
  std::ofstream file(out, std::ios::binary);
  if (!file) throw nef::Error("cannot open '" + out + "' for writing");
  nef::write_libsvm(file, ds);
  return file ? 0 : 1;
}

int cmd_compare(const std::string& path_a, const std::string& path_b, const Overrides& o) {
  nef::ExperimentConfig a = nef::load_config(path_a);
  nef::ExperimentConfig b = nef::load_config(path_b);
  Overrides shared = o;
  shared.out.clear();
  shared.apply(a);
  shared.apply(b);
  const nef::Comparison c = nef::compare(a, b);
  const std::string comment = "A: " + path_a + "\nB: " + path_b + "\nseed = " + std::to_string(a.run.seed);
  if (o.out.empty()) {
    nef::write_comparison_csv(c, std::cout, comment);
    return 0;
  }
  std::ofstream file(o.out, std::ios::binary);
  if (!file) throw nef::Error("cannot open '" + o.out + "' for writing");
  nef::write_comparison_csv(c, file, comment);
  std::cerr << "final ||grad f||^2: A = " << c.a.rows.back().grad_norm_sq
            << ", B = " << c.b.rows.back().grad_norm_sq << '\n';
  return file ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalized error-feedback experiments"};
  app.require_subcommand(1);

  Overrides run_o, grid_o, check_o, cmp_o;
  std::string run_cfg, grid_cfg, check_cfg, cmp_a, cmp_b;

  auto* run = app.add_subcommand("run", "Run one experiment and emit its CSV");
  run->add_option("config", run_cfg, "Config file")->required();
  add_overrides(run, run_o);

  std::optional<double> eps;
  std::int64_t step = 500;
  std::int64_t kmax = 20000;
  auto* grid = app.add_subcommand("grid", "Smallest K on a grid reaching min ||grad f||^2 < eps");
  grid->add_option("config", grid_cfg, "Config file")->required();
  grid->add_option("--eps", eps, "Target on ||grad f||^2 (default: run.epsilon)");
  grid->add_option("--step", step, "Grid step")->check(CLI::PositiveNumber);
  grid->add_option("--kmax", kmax, "Largest K tried")->check(CLI::PositiveNumber);
  add_overrides(grid, grid_o);

  auto* check = app.add_subcommand("check", "Run the verification suite");
  check->add_option("config", check_cfg, "Config file")->required();
  add_overrides(check, check_o);

  std::size_t gen_n = 20;
  std::size_t gen_d = 10;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset in LIBSVM format");
  gen->add_option("--n", gen_n, "Rows")->check(CLI::PositiveNumber);
  gen->add_option("--d", gen_d, "Features")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--out", gen_out, "Output path (default stdout)");

  auto* cmp = app.add_subcommand("compare", "Run two configs on shared data and emit a joint CSV");
  cmp->add_option("configA", cmp_a, "First config")->required();
  cmp->add_option("configB", cmp_b, "Second config")->required();
  add_overrides(cmp, cmp_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsageError;
  }

  try {
    if (*run) return cmd_run(run_cfg, run_o);
    if (*grid) return cmd_grid(grid_cfg, grid_o, eps, step, kmax);
    if (*check) return cmd_check(check_cfg, check_o);
    if (*gen) return cmd_gen_data(gen_n, gen_d, gen_seed, gen_out);
    if (*cmp) return cmd_compare(cmp_a, cmp_b, cmp_o);
  } catch (const nef::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}
