#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mixupe/cli.hpp"
#include "mixupe/harness.hpp"
#include "mixupe/synth.hpp"

using namespace mixupe;

namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("mixupe_harness_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small, fast configuration shared by the behavioural tests.
ExperimentConfig small_cfg(Method method) {
  ExperimentConfig cfg;
  cfg.name = "t";
  cfg.synth_dataset = "petals";
  cfg.method = method;
  cfg.hidden_dims = {16, 16};
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.seeds = {0, 1};
  cfg.mix = {1.0, 1.0};
  cfg.eta = 0.01;
  return cfg;
}

bool rows_identical(const std::vector<RunMetrics>& a,
                    const std::vector<RunMetrics>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows.size() != b[i].rows.size()) return false;
    for (std::size_t e = 0; e < a[i].rows.size(); ++e) {
      const EpochRow& x = a[i].rows[e];
      const EpochRow& y = b[i].rows[e];
      if (x.train_loss_total != y.train_loss_total) return false;
      if (x.train_l_mix != y.train_l_mix) return false;
      if (x.train_r != y.train_r) return false;
      if (x.eta_hat_mean != y.eta_hat_mean) return false;
      if (x.train_error != y.train_error) return false;
      if (x.val_error != y.val_error) return false;
      if (x.test_error != y.test_error) return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config text parsing and validation") {
    const std::string text =
        "config_version = 1\n"
        "name = demo\n"
        "synth_dataset = petals\n"
        "method = mixupe\n"
        "hidden_dims = 8, 8\n"
        "alpha = 0.5\n"
        "eta = 0.01\n"
        "epochs = 2\n"
        "batch_size = 16\n"
        "seeds = 0, 1\n";
    ExperimentConfig cfg = parse_experiment_config_text(text, "<test>");
    CHECK(cfg.method == Method::mixupe);
    CHECK(cfg.mix.alpha == 0.5);
    CHECK(cfg.mix.beta == 0.5);  // beta defaults to alpha
    CHECK(cfg.hidden_dims == std::vector<std::size_t>{8, 8});

    CHECK_THROWS_AS(
        parse_experiment_config_text("config_version = 2\n", "<test>"),
        ConfigError);
    CHECK_THROWS_AS(parse_experiment_config_text(
                        text + "unknown_key = 1\n", "<test>"),
                    ConfigError);
    CHECK_THROWS_AS(
        parse_experiment_config_text(
            "config_version = 1\nsynth_dataset = petals\n"
            "method = mixup\nbatch_size = 1\n",
            "<test>"),
        ConfigError);  // mixing needs batch_size >= 2
    CHECK_THROWS_AS(parse_experiment_config("/nonexistent/path.cfg"),
                    ConfigError);
  }

  TEST_CASE("runs are bitwise reproducible, including files") {
    ExperimentConfig cfg = small_cfg(Method::mixupe);
    cfg.seeds = {0};
    const auto d1 = temp_dir("repro1");
    const auto d2 = temp_dir("repro2");

    cfg.out_dir = d1.string();
    run_experiment(cfg);
    cfg.out_dir = d2.string();
    run_experiment(cfg);

    CHECK(slurp((d1 / "t_seed0.csv").string()) ==
          slurp((d2 / "t_seed0.csv").string()));
    fs::remove_all(d1);
    fs::remove_all(d2);
  }

  TEST_CASE("metrics header is stable") {
    CHECK(std::string(kMetricsHeader) ==
          "epoch,train_loss_total,train_l_mix,train_R,eta_hat_mean,"
          "train_error,val_error,test_error");
    ExperimentConfig cfg = small_cfg(Method::erm);
    cfg.seeds = {0};
    cfg.epochs = 1;
    const auto dir = temp_dir("header");
    cfg.out_dir = dir.string();
    run_experiment(cfg);
    const std::string csv = slurp((dir / "t_seed0.csv").string());
    CHECK(csv.substr(0, csv.find('\n')) == kMetricsHeader);
    fs::remove_all(dir);
  }

  TEST_CASE("mixupe with eta 0 equals mixup, metric for metric") {
    ExperimentConfig mixupe_cfg = small_cfg(Method::mixupe);
    mixupe_cfg.eta = 0.0;
    ExperimentConfig mixup_cfg = small_cfg(Method::mixup);

    Dataset ds = load_configured_dataset(mixupe_cfg);
    const auto a = run_experiment(mixupe_cfg, ds);
    const auto b = run_experiment(mixup_cfg, ds);
    CHECK(rows_identical(a, b));
  }

  TEST_CASE("mixup with a point mass at lambda 1 equals erm") {
    ExperimentConfig mixup_cfg = small_cfg(Method::mixup);
    mixup_cfg.forced_lambda = 1.0;
    ExperimentConfig erm_cfg = small_cfg(Method::erm);

    Dataset ds = load_configured_dataset(mixup_cfg);
    const auto a = run_experiment(mixup_cfg, ds);
    const auto b = run_experiment(erm_cfg, ds);
    CHECK(rows_identical(a, b));
  }

  TEST_CASE("erm_plus_reg with eta 0 equals erm") {
    ExperimentConfig reg_cfg = small_cfg(Method::erm_plus_reg);
    reg_cfg.eta = 0.0;
    ExperimentConfig erm_cfg = small_cfg(Method::erm);

    Dataset ds = load_configured_dataset(reg_cfg);
    CHECK(rows_identical(run_experiment(reg_cfg, ds),
                         run_experiment(erm_cfg, ds)));
  }

  TEST_CASE("erm drives a separable toy set to zero test error") {
    ExperimentConfig cfg;
    cfg.synth_dataset = "separable_toy";
    cfg.method = Method::erm;
    cfg.hidden_dims = {128, 128};
    cfg.epochs = 60;
    cfg.batch_size = 32;
    cfg.seeds = {0};
    cfg.optimizer.learning_rate = 0.005;
    const auto runs = run_experiment(cfg);
    CHECK(runs[0].summary.final_test_error == 0.0);
  }

  TEST_CASE("two-stream mixing trains and differs from permutation mixing") {
    ExperimentConfig perm_cfg = small_cfg(Method::mixup);
    ExperimentConfig two_cfg = perm_cfg;
    two_cfg.mix_style = MixStyle::two_stream;
    Dataset ds = load_configured_dataset(perm_cfg);
    const auto a = run_experiment(perm_cfg, ds);
    const auto b = run_experiment(two_cfg, ds);
    CHECK_FALSE(rows_identical(a, b));
  }

  TEST_CASE("alpha trace length is floor(iters / every) + 1") {
    ExperimentConfig cfg = small_cfg(Method::mixup);
    cfg.seeds = {0};
    cfg.alpha_trace_every = 3;
    cfg.alpha_trace_probe = 8;
    Dataset ds = load_configured_dataset(cfg);
    const auto runs = run_experiment(cfg, ds);
    // petals: 150 rows, 70% train = 105 -> 4 batches of 32 per epoch,
    // 3 epochs -> 12 iterations; trace at 0,3,6,9,12.
    const std::size_t total_iters = 12;
    REQUIRE(runs[0].alpha_trace.size() ==
            total_iters / cfg.alpha_trace_every + 1);
    CHECK(runs[0].alpha_trace.front().iteration == 0);
    CHECK(runs[0].alpha_trace.back().iteration == 12);
  }

  TEST_CASE("grid with a single cell reproduces run_experiment") {
    ExperimentConfig cfg = small_cfg(Method::mixupe);
    Dataset ds = load_configured_dataset(cfg);
    GridResult grid = grid_search(cfg, {1.0}, {0.01}, ds);
    REQUIRE(grid.table.size() == 1);
    const auto runs = run_experiment(cfg, ds);
    double acc = 0.0, err = 0.0;
    for (const auto& r : runs) {
      acc += 1.0 - r.summary.val_error_at_best;
      err += r.summary.test_error_at_best_val;
    }
    CHECK(grid.table[0].mean_val_accuracy ==
          doctest::Approx(acc / runs.size()).epsilon(1e-15));
    CHECK(grid.table[0].mean_test_error ==
          doctest::Approx(err / runs.size()).epsilon(1e-15));
  }

  TEST_CASE("grid table size and eta collapse for mixup") {
    ExperimentConfig cfg = small_cfg(Method::mixupe);
    cfg.epochs = 1;
    cfg.seeds = {0};
    Dataset ds = load_configured_dataset(cfg);
    GridResult grid = grid_search(cfg, {0.1, 1.0}, {0.001, 0.1}, ds);
    CHECK(grid.table.size() == 4);

    ExperimentConfig mix_cfg = small_cfg(Method::mixup);
    mix_cfg.epochs = 1;
    mix_cfg.seeds = {0};
    GridResult flat = grid_search(mix_cfg, {0.1, 1.0}, {0.001, 0.1}, ds);
    CHECK(flat.table.size() == 2);  // eta axis collapses
  }

  TEST_CASE("grid selection tie breaks toward smaller eta then alpha") {
    // Identical metrics in every cell (epochs so short the model ties):
    // force ties by reusing one seed and eta-independent method (mixup
    // ignores eta internally, cells differ only in alpha ordering).
    ExperimentConfig cfg = small_cfg(Method::mixupe);
    cfg.eta = 0.0;
    cfg.epochs = 1;
    cfg.seeds = {0};
    Dataset ds = load_configured_dataset(cfg);
    // eta = 0 cells across different eta values would differ; instead tie
    // across alpha with a forced lambda so mixing is alpha-independent.
    cfg.forced_lambda = 1.0;
    GridResult grid = grid_search(cfg, {2.0, 0.5}, {0.0, 0.0}, ds);
    REQUIRE(grid.table.size() == 4);
    // All four cells have identical accuracy; smallest eta (0.0) then
    // smallest alpha (0.5) should win.
    CHECK(grid.best_config.mix.alpha == 0.5);
    CHECK(grid.best_config.eta == 0.0);
  }

  TEST_CASE("ablation has four arms with shared seeds") {
    ExperimentConfig cfg = small_cfg(Method::mixupe);
    cfg.epochs = 2;
    Dataset ds = load_configured_dataset(cfg);
    const auto rows = ablation_suite(cfg, ds);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].method == Method::erm);
    CHECK(rows[1].method == Method::mixup);
    CHECK(rows[2].method == Method::erm_plus_reg);
    CHECK(rows[3].method == Method::mixupe);
    for (const auto& r : rows)
      CHECK(r.per_seed_test_error.size() == cfg.seeds.size());
  }

  TEST_CASE("cli: missing config exits 2 and names the path") {
    CHECK(cli_main({"train", "--config", "missing.file"}) == 2);
  }

  TEST_CASE("cli: bad subcommand exits 2") {
    CHECK(cli_main({"frobnicate"}) == 2);
  }

  TEST_CASE("cli: train smoke run writes metrics") {
    const auto dir = temp_dir("cli_train");
    const std::string cfg_path = (dir / "run.cfg").string();
    {
      std::ofstream os(cfg_path);
      os << "config_version = 1\n"
            "name = smoke\n"
            "synth_dataset = petals\n"
            "method = mixupe\n"
            "hidden_dims = 8,8\n"
            "alpha = 1.0\n"
            "eta = 0.001\n"
            "epochs = 2\n"
            "batch_size = 32\n"
            "seeds = 0\n";
    }
    CHECK(cli_main({"train", "--config", cfg_path, "--out-dir",
                    (dir / "out").string()}) == 0);
    CHECK(fs::exists(dir / "out" / "smoke_seed0.csv"));
    CHECK(fs::exists(dir / "out" / "smoke_seed0.summary.json"));
    fs::remove_all(dir);
  }

  TEST_CASE("cli: verify-taylor writes reports and exits 0") {
    const auto dir = temp_dir("cli_vt");
    CHECK(cli_main({"verify-taylor", "--out-dir", dir.string()}) == 0);
    CHECK(fs::exists(dir / "taylor_pointwise_K1.csv"));
    CHECK(fs::exists(dir / "taylor_decomposition.csv"));
    fs::remove_all(dir);
  }

  TEST_CASE("cli: verify-approx smoke") {
    CHECK(cli_main({"verify-approx", "--instances", "10"}) == 0);
  }

  TEST_CASE("cli: bounds fixture with gamma 0") {
    const auto dir = temp_dir("cli_bounds");
    const std::string path = (dir / "bounds.cfg").string();
    {
      std::ofstream os(path);
      os << "lipschitz_A = 1.0\ngamma = 0.0\ndata_radius = 1.0\nn = 100\n"
            "delta = 0.05\nuniform_bound = 1.0\neta = 1.0\neta_hat = 1.0\n"
            "xi = 1.0\nempirical_l_mix = 0.5\n";
    }
    CHECK(cli_main({"bounds", "--config", path}) == 0);
    fs::remove_all(dir);
  }

  TEST_CASE("cli: gen-data writes the bundled datasets") {
    const auto dir = temp_dir("cli_gen");
    CHECK(cli_main({"gen-data", "--out-dir", dir.string()}) == 0);
    CHECK(fs::exists(dir / "petals.csv"));
    CHECK(fs::exists(dir / "petals.spec.json"));
    CHECK(fs::exists(dir / "levers.csv"));
    CHECK(fs::exists(dir / "glyphs.csv"));
    fs::remove_all(dir);
  }

  TEST_CASE("track-alpha via cli produces a trace file") {
    const auto dir = temp_dir("cli_track");
    const std::string cfg_path = (dir / "run.cfg").string();
    {
      std::ofstream os(cfg_path);
      os << "config_version = 1\n"
            "name = trace\n"
            "synth_dataset = petals\n"
            "method = mixup\n"
            "hidden_dims = 8,8\n"
            "alpha = 1.0\n"
            "epochs = 1\n"
            "batch_size = 32\n"
            "seeds = 0\n"
            "alpha_trace_every = 2\n"
            "alpha_trace_probe = 8\n";
    }
    CHECK(cli_main({"track-alpha", "--config", cfg_path, "--out-dir",
                    (dir / "out").string()}) == 0);
    CHECK(fs::exists(dir / "out" / "trace_seed0_alpha_trace.csv"));
    fs::remove_all(dir);
  }

  TEST_CASE("sigmoid head trains a single-logit model on binary data") {
    // Inline two-class blob table.
    std::ostringstream csv;
    Rng rng(5);
    for (int i = 0; i < 80; ++i) {
      const int cls = i % 2;
      for (int j = 0; j < 3; ++j)
        csv << (cls ? 1.5 : -1.5) + rng.normal() << ",";
      csv << (cls ? "pos" : "neg") << "\n";
    }
    DatasetSpec spec;
    spec.columns.push_back({"f0", ColumnKind::continuous, {}});
    spec.columns.push_back({"f1", ColumnKind::continuous, {}});
    spec.columns.push_back({"f2", ColumnKind::continuous, {}});
    spec.columns.push_back({"class", ColumnKind::label, {"neg", "pos"}});
    std::istringstream is(csv.str());
    Dataset ds = build_dataset(load_csv(is, spec), {});

    ExperimentConfig cfg;
    cfg.synth_dataset = "petals";  // placeholder; ds passed directly
    cfg.method = Method::mixupe;
    cfg.head = Head::sigmoid;
    cfg.hidden_dims = {16};
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.seeds = {0};
    cfg.eta = 0.01;
    const auto runs = run_experiment(cfg, ds);
    CHECK(runs[0].rows.back().train_error < 0.2);
    CHECK(runs[0].summary.final_test_error <= 0.5);

    // Degeneracy holds under the sigmoid head too.
    ExperimentConfig a = cfg;
    a.eta = 0.0;
    ExperimentConfig b = cfg;
    b.method = Method::mixup;
    CHECK(rows_identical(run_experiment(a, ds), run_experiment(b, ds)));

    // A three-class dataset cannot drive the sigmoid head.
    ExperimentConfig bad = cfg;
    Dataset petals = synth::load(synth::make_petals(), {});
    CHECK_THROWS_AS(run_experiment(bad, petals), ConfigError);
  }

  TEST_CASE("run aborts with diagnostics on a non-finite loss") {
    ExperimentConfig cfg = small_cfg(Method::erm);
    cfg.seeds = {0};
    cfg.optimizer.kind = OptimizerSpec::Kind::sgd_momentum;
    cfg.optimizer.learning_rate = 1e12;  // guaranteed blow-up
    Dataset ds = load_configured_dataset(cfg);
    CHECK_THROWS_AS(run_experiment(cfg, ds), RunError);
  }
}
