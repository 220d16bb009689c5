#include "mixupe/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mixupe/config.hpp"
#include "mixupe/harness.hpp"
#include "mixupe/rng.hpp"
#include "mixupe/synth.hpp"
#include "mixupe/theory.hpp"

namespace mixupe {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailure = 1;
constexpr int kExitConfigError = 2;

struct CommonFlags {
  std::string config;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
};

ExperimentConfig load_config(const CommonFlags& flags) {
  ExperimentConfig cfg = parse_experiment_config(flags.config);
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (!flags.seeds.empty()) cfg.seeds = flags.seeds;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config, "experiment config");
  if (config_required) opt->required();
  cmd->add_option("--out-dir", flags.out_dir, "output directory override");
  cmd->add_option("--seed", flags.seeds, "seed override (repeatable)")
      ->delimiter(',');
}

int cmd_train(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  const auto runs = run_experiment(cfg);
  double err = 0.0;
  for (const auto& r : runs) err += r.summary.test_error_at_best_val;
  err /= static_cast<double>(runs.size());
  std::printf("method=%s seeds=%zu mean test error (best-val) = %.4f\n",
              method_name(cfg.method), runs.size(), err);
  return kExitOk;
}

int cmd_grid(const CommonFlags& flags, std::vector<double> alpha_grid,
             std::vector<double> eta_grid) {
  ExperimentConfig cfg = load_config(flags);
  if (alpha_grid.empty())
    alpha_grid = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0};
  if (eta_grid.empty()) eta_grid = {0.0001, 0.001, 0.01, 0.1, 1.0};
  const Dataset ds = load_configured_dataset(cfg);
  const GridResult grid = grid_search(cfg, alpha_grid, eta_grid, ds);
  const GridCell& best = grid.table[grid.best_index];
  std::printf("grid cells: %zu\n", grid.table.size());
  std::printf("selected alpha=%g eta=%g val_acc=%.4f test_err=%.4f\n",
              best.alpha, best.eta, best.mean_val_accuracy,
              best.mean_test_error);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_grid_csv(grid, cfg.out_dir + "/" + cfg.name + "_grid.csv");
  }
  return kExitOk;
}

int cmd_ablate(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  const Dataset ds = load_configured_dataset(cfg);
  const auto rows = ablation_suite(cfg, ds);
  for (const auto& r : rows)
    std::printf("%-14s mean_test_error=%.4f (+-%.4f)\n",
                method_name(r.method), r.mean_test_error, r.std_test_error);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_ablation_csv(rows, cfg.out_dir + "/" + cfg.name + "_ablation.csv");
  }
  return kExitOk;
}

// Bundled tiny tanh fixture for the verification subcommands.
struct TinyFixture {
  MlpModel model;
  Tensor xs;
  Tensor ys;
};

// Fixture calibrated so the Beta(20,1) gap ladder decays monotonically:
// tanh 4-6-3 net at seed 7 with inputs of scale 0.4.
TinyFixture make_tiny_fixture() {
  MlpSpec spec;
  spec.input_dim = 4;
  spec.hidden_dims = {6};
  spec.output_dim = 3;
  spec.hidden_activation = Activation::tanh;
  TinyFixture fx;
  fx.model = MlpModel::init(spec, 7);
  Rng rng(7);
  const std::size_t n = 10;
  std::vector<double> x(n * 4), y(n * 3, 0.0);
  for (auto& v : x) v = 0.4 * rng.normal();
  for (std::size_t i = 0; i < n; ++i) y[i * 3 + rng.uniform_index(3)] = 1.0;
  fx.xs = Tensor::from_flat(n, 4, std::move(x));
  fx.ys = Tensor::from_flat(n, 3, std::move(y));
  return fx;
}

int cmd_verify_taylor(const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  TinyFixture fx = make_tiny_fixture();
  const std::vector<double> a_grid{0.01, 0.02, 0.04, 0.08, 0.16};

  bool all_ok = true;
  for (int order = 1; order <= 3; ++order) {
    ExpansionReport rep = verify_pointwise_taylor(
        fx.model, fx.xs.row_detached(0), fx.ys.row_detached(0),
        fx.xs.row_detached(1), order, a_grid);
    write_expansion_csv(rep, out_dir + "/taylor_pointwise_K" +
                                 std::to_string(order) + ".csv");
    std::printf("pointwise K=%d remainder_slope=%.3f (need >= %.1f) %s\n",
                order, rep.remainder_slope, order + 0.7,
                rep.passed ? "ok" : "FAILED");
    all_ok = all_ok && rep.passed;
  }

  DecompositionOptions opt;
  opt.mc_samples = 20000;
  DecompositionReport rep = verify_mixup_decomposition(
      fx.model, fx.xs, fx.ys, BetaParams{20.0, 1.0}, opt);
  write_decomposition_csv(rep, out_dir + "/taylor_decomposition.csv");
  std::printf(
      "decomposition gaps K=1..4: %.3e %.3e %.3e %.3e (non-increasing: %s)\n",
      rep.abs_gap[0], rep.abs_gap[1], rep.abs_gap[2], rep.abs_gap[3],
      rep.gaps_nonincreasing ? "yes" : "NO");
  std::printf("quadrature vs MC: %.6f vs %.6f (3se=%.2e) %s\n", rep.lhs_pairs,
              rep.mc_lhs, 3.0 * rep.mc_se,
              rep.mc_within_3se ? "ok" : "FAILED");
  all_ok = all_ok && rep.gaps_nonincreasing && rep.mc_within_3se &&
           rep.quadrature_converged;
  return all_ok ? kExitOk : kExitRunFailure;
}

int cmd_verify_approx(int instances) {
  // q vs q-hat under the conditions that make them equal: bias-free ReLU
  // net, zero-mean direction target.
  Rng rng(4242);
  double max_q_gap = 0.0, max_homog_gap = 0.0;
  for (int t = 0; t < instances; ++t) {
    MlpSpec spec;
    spec.input_dim = 3 + rng.uniform_index(5);
    spec.hidden_dims = {4 + rng.uniform_index(5), 4 + rng.uniform_index(5)};
    spec.output_dim = 2 + rng.uniform_index(3);
    spec.hidden_activation = Activation::relu;
    spec.homogeneous = true;
    MlpModel model = MlpModel::init(spec, rng.next_u64());

    std::vector<double> xv(spec.input_dim);
    for (auto& v : xv) v = rng.normal();
    Tensor x = Tensor::from_flat(1, spec.input_dim, xv);
    std::vector<double> yv(spec.output_dim, 0.0);
    yv[rng.uniform_index(spec.output_dim)] = 1.0;
    Tensor y = Tensor::from_flat(1, spec.output_dim, yv);
    Tensor mean_x = Tensor::zeros(1, spec.input_dim);

    const double q = q_exact(model, x, y, mean_x);
    const double qh = q_hat(model.forward_detached(x), y).value();
    max_q_gap = std::max(max_q_gap, std::fabs(q - qh));

    Tensor jac = jacobian_rows(
        [&model](const Tensor& in) { return model.forward_detached(in); }, x);
    Tensor f = model.forward_detached(x);
    for (std::size_t j = 0; j < f.cols(); ++j) {
      double jx = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c)
        jx += jac.at(j, c) * x.at(0, c);
      max_homog_gap = std::max(max_homog_gap, std::fabs(jx - f.at(0, j)));
    }
  }
  std::printf("instances=%d max |q - q_hat| = %.3e, max |Jx - f| = %.3e\n",
              instances, max_q_gap, max_homog_gap);
  const bool ok = max_q_gap < 1e-9 && max_homog_gap < 1e-9;
  std::printf("verify-approx: %s\n", ok ? "ok" : "FAILED");
  return ok ? kExitOk : kExitRunFailure;
}

int cmd_track_alpha(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  if (cfg.alpha_trace_every == 0) cfg.alpha_trace_every = 10;
  if (cfg.out_dir.empty())
    throw ConfigError("track-alpha needs an out_dir (config or --out-dir)");
  const auto runs = run_experiment(cfg);
  for (const auto& r : runs) {
    if (r.alpha_trace.empty()) continue;
    std::printf("seed %llu: min alpha at iteration 0 = %.6f\n",
                static_cast<unsigned long long>(r.seed),
                r.alpha_trace.front().min_alpha);
  }
  return kExitOk;
}

int cmd_bounds(const std::string& path) {
  KeyValueConfig kv = KeyValueConfig::parse_file(path);
  BoundInputs b;
  b.lipschitz_A = kv.get_double("lipschitz_A");
  b.gamma = kv.get_double("gamma");
  b.data_radius = kv.get_double("data_radius");
  b.n = kv.get_double("n");
  b.delta = kv.get_double("delta");
  b.uniform_bound = kv.get_double("uniform_bound");
  b.eta = kv.get_double("eta");
  b.eta_hat = kv.get_double("eta_hat");
  b.xi = kv.get_double("xi");
  b.empirical_l_mix = kv.get_double("empirical_l_mix");
  kv.reject_unknown_keys();

  const double bound = bound_mixupe(b);
  const BoundComparison cmp = bound_compare(b);
  std::printf("%-24s %.6g\n", "generalization bound", bound);
  std::printf("%-24s %.6g\n", "complexity (this)", cmp.mixupe_complexity);
  std::printf("%-24s %.6g\n", "complexity (norm ball)",
              cmp.vanilla_complexity);
  std::printf("%-24s %s\n", "shrink condition",
              cmp.shrink_condition_holds ? "holds" : "violated");
  return kExitOk;
}

int cmd_gen_data(const std::string& out_dir) {
  for (const auto& name : synth::all_names())
    synth::write_to_dir(synth::by_name(name), out_dir);
  std::printf("wrote %zu datasets to %s\n", synth::all_names().size(),
              out_dir.c_str());
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"Mixup/MixupE training and verification toolkit"};
  app.require_subcommand(1);

  CommonFlags train_flags, grid_flags, ablate_flags, track_flags;
  std::vector<double> alpha_grid, eta_grid;
  std::string verify_out = "out";
  int approx_instances = 100;
  std::string bounds_config;
  std::string gen_dir = "data";

  auto* train = app.add_subcommand("train", "train one method on a dataset");
  add_common(train, train_flags, true);

  auto* grid = app.add_subcommand("grid", "hyperparameter grid search");
  add_common(grid, grid_flags, true);
  grid->add_option("--alpha-grid", alpha_grid, "alpha values")
      ->delimiter(',');
  grid->add_option("--eta-grid", eta_grid, "eta values")->delimiter(',');

  auto* ablate =
      app.add_subcommand("ablate", "erm / mixup / erm+reg / mixupe arms");
  add_common(ablate, ablate_flags, true);

  auto* vt = app.add_subcommand(
      "verify-taylor", "pointwise + distributional expansion checks");
  vt->add_option("--out-dir", verify_out, "report directory");

  auto* va = app.add_subcommand("verify-approx",
                                "q vs q-hat equivalence suite");
  va->add_option("--instances", approx_instances, "random instances");

  auto* ta = app.add_subcommand("track-alpha",
                                "minimum alpha coefficient trace");
  add_common(ta, track_flags, true);

  auto* bounds =
      app.add_subcommand("bounds", "generalization bound calculators");
  bounds->add_option("--config", bounds_config, "scalar inputs file")
      ->required();

  auto* gen = app.add_subcommand("gen-data", "write bundled datasets");
  gen->add_option("--out-dir", gen_dir, "target directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags);
    if (grid->parsed()) return cmd_grid(grid_flags, alpha_grid, eta_grid);
    if (ablate->parsed()) return cmd_ablate(ablate_flags);
    if (vt->parsed()) return cmd_verify_taylor(verify_out);
    if (va->parsed()) return cmd_verify_approx(approx_instances);
    if (ta->parsed()) return cmd_track_alpha(track_flags);
    if (bounds->parsed()) return cmd_bounds(bounds_config);
    if (gen->parsed()) return cmd_gen_data(gen_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const RunError& e) {
    std::cerr << "run failed: " << e.what() << " (epoch " << e.epoch
              << ", batch " << e.batch << ", lambda " << e.lambda
              << ", eta_hat " << e.eta_hat << ")\n";
    return kExitRunFailure;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kExitRunFailure;
  }
  return kExitConfigError;
}

}  // namespace mixupe
