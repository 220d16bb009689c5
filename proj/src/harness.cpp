#include "mixupe/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mixupe/config.hpp"
#include "mixupe/rng.hpp"
#include "mixupe/synth.hpp"

namespace mixupe {

const char* kMetricsHeader =
    "epoch,train_loss_total,train_l_mix,train_R,eta_hat_mean,train_error,"
    "val_error,test_error";

Method method_from_string(const std::string& s) {
  if (s == "erm") return Method::erm;
  if (s == "mixup") return Method::mixup;
  if (s == "mixupe") return Method::mixupe;
  if (s == "erm_plus_reg") return Method::erm_plus_reg;
  throw ConfigError("unknown method '" + s + "'");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::erm: return "erm";
    case Method::mixup: return "mixup";
    case Method::mixupe: return "mixupe";
    case Method::erm_plus_reg: return "erm_plus_reg";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  if (dataset_path.empty() != dataset_spec_path.empty())
    throw ConfigError("dataset and dataset_spec must be given together");
  if (dataset_path.empty() && synth_dataset.empty())
    throw ConfigError("no dataset configured");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const bool mixes = method == Method::mixup || method == Method::mixupe;
  if (mixes && batch_size < 2)
    throw ConfigError("mixing methods need batch_size >= 2");
  if (seeds.empty()) throw ConfigError("need at least one seed");
  if (eta < 0.0) throw ConfigError("eta must be >= 0");
  if (mixes) mixupe::validate(mix);
  if (forced_lambda && (*forced_lambda < 0.0 || *forced_lambda > 1.0))
    throw ConfigError("force_lambda must be in [0, 1]");
}

namespace {

std::vector<std::size_t> to_size_list(const std::vector<double>& v) {
  std::vector<std::size_t> out;
  for (double d : v) {
    if (d < 1 || d != std::floor(d))
      throw ConfigError("hidden_dims must be positive integers");
    out.push_back(static_cast<std::size_t>(d));
  }
  return out;
}

}  // namespace

ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin) {
  KeyValueConfig kv = KeyValueConfig::parse_string(text, origin);
  const std::int64_t version = kv.get_int("config_version");
  if (version != 1)
    throw ConfigError(origin + ": unsupported config_version " +
                      std::to_string(version));

  ExperimentConfig cfg;
  cfg.name = kv.get_string("name", "run");
  cfg.dataset_path = kv.get_string("dataset", "");
  cfg.dataset_spec_path = kv.get_string("dataset_spec", "");
  cfg.synth_dataset = kv.get_string("synth_dataset", "");
  cfg.method = method_from_string(kv.get_string("method", "erm"));
  cfg.hidden_dims =
      to_size_list(kv.get_double_list("hidden_dims", {128, 128}));
  cfg.activation =
      activation_from_string(kv.get_string("activation", "relu"));
  cfg.homogeneous = kv.get_bool("homogeneous", false);
  cfg.mix.alpha = kv.get_double("alpha", 1.0);
  cfg.mix.beta = kv.get_double("beta", cfg.mix.alpha);
  cfg.eta = kv.get_double("eta", 0.0);
  const std::string head = kv.get_string("head", "softmax");
  if (head == "softmax") cfg.head = Head::softmax;
  else if (head == "sigmoid") cfg.head = Head::sigmoid;
  else throw ConfigError(origin + ": unknown head '" + head + "'");
  const std::string mode = kv.get_string("reg_mode", "approximate");
  if (mode == "approximate") cfg.reg_mode = RegMode::approximate;
  else if (mode == "exact") cfg.reg_mode = RegMode::exact;
  else throw ConfigError(origin + ": unknown reg_mode '" + mode + "'");
  const std::string style = kv.get_string("mix_style", "permutation");
  if (style == "permutation") cfg.mix_style = MixStyle::permutation;
  else if (style == "two_stream") cfg.mix_style = MixStyle::two_stream;
  else throw ConfigError(origin + ": unknown mix_style '" + style + "'");
  if (kv.has("force_lambda"))
    cfg.forced_lambda = kv.get_double("force_lambda");

  const std::string opt = kv.get_string("optimizer", "adam");
  if (opt == "adam") cfg.optimizer.kind = OptimizerSpec::Kind::adam;
  else if (opt == "sgd_momentum")
    cfg.optimizer.kind = OptimizerSpec::Kind::sgd_momentum;
  else throw ConfigError(origin + ": unknown optimizer '" + opt + "'");
  cfg.optimizer.learning_rate = kv.get_double("learning_rate", 0.001);
  cfg.optimizer.momentum = kv.get_double("momentum", 0.9);
  cfg.epochs = static_cast<int>(kv.get_int("epochs", 25));
  cfg.batch_size = static_cast<std::size_t>(kv.get_int("batch_size", 100));
  cfg.seeds = kv.get_uint_list("seeds", {0, 1, 2, 3, 4});

  const auto fr =
      kv.get_double_list("split_fractions", {0.7, 0.15, 0.15});
  if (fr.size() != 3)
    throw ConfigError(origin + ": split_fractions needs 3 values");
  cfg.data.fractions = {fr[0], fr[1], fr[2]};
  cfg.data.seed = static_cast<std::uint64_t>(kv.get_int("split_seed", 0));
  cfg.data.stratified = kv.get_bool("stratified", true);
  cfg.data.standardize = kv.get_bool("standardize", true);

  cfg.alpha_trace_every =
      static_cast<std::size_t>(kv.get_int("alpha_trace_every", 0));
  cfg.alpha_trace_probe =
      static_cast<std::size_t>(kv.get_int("alpha_trace_probe", 32));
  cfg.out_dir = kv.get_string("out_dir", "");

  kv.reject_unknown_keys();
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_experiment_config_text(text, path);
}

Dataset load_configured_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  if (!cfg.synth_dataset.empty())
    return synth::load(synth::by_name(cfg.synth_dataset), cfg.data);
  return load_dataset(cfg.dataset_path, cfg.dataset_spec_path, cfg.data);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

// The sigmoid head drives a single logit: two-class one-hot labels
// collapse to the second-category indicator column.
Tensor head_targets(const Tensor& onehot, Head head) {
  if (head == Head::softmax) return onehot;
  if (onehot.cols() != 2)
    throw ConfigError("sigmoid head needs a two-class dataset, got " +
                      std::to_string(onehot.cols()) + " classes");
  std::vector<double> col(onehot.rows());
  for (std::size_t r = 0; r < onehot.rows(); ++r) col[r] = onehot.at(r, 1);
  return Tensor::from_flat(onehot.rows(), 1, std::move(col));
}

}  // namespace

EvalResult evaluate_split(const MlpModel& model, const Dataset& ds, Split s,
                          Head head) {
  const auto idx = ds.indices_of(s);
  EvalResult out;
  if (idx.empty()) return out;
  auto [x, raw_y] = ds.gather(idx);
  Tensor y = head_targets(raw_y, head);
  Tensor logits = model.forward_detached(x);
  out.loss = loss_h(logits, y, head).value();
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::size_t pred = 0, truth = 0;
    if (logits.cols() == 1) {
      pred = logits.at(r, 0) > 0.0;
      truth = y.at(r, 0) > 0.5;
    } else {
      for (std::size_t c = 1; c < logits.cols(); ++c)
        if (logits.at(r, c) > logits.at(r, pred)) pred = c;
      for (std::size_t c = 1; c < y.cols(); ++c)
        if (y.at(r, c) > y.at(r, truth)) truth = c;
    }
    if (pred != truth) ++wrong;
  }
  out.error = static_cast<double>(wrong) / static_cast<double>(idx.size());
  return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kTagShuffle = 0x7368756646ULL;
constexpr std::uint64_t kTagMix = 0x6d697853ULL;
constexpr std::uint64_t kTagProbe = 0x70726f6265ULL;

RunMetrics run_single_seed(const ExperimentConfig& cfg, const Dataset& ds,
                           std::uint64_t seed) {
  const auto t_start = std::chrono::steady_clock::now();

  MlpSpec arch;
  arch.input_dim = ds.dim();
  arch.hidden_dims = cfg.hidden_dims;
  arch.output_dim = cfg.head == Head::sigmoid ? 1 : ds.n_classes();
  arch.hidden_activation = cfg.activation;
  arch.homogeneous = cfg.homogeneous;
  if (cfg.head == Head::sigmoid && ds.n_classes() != 2)
    throw ConfigError("sigmoid head needs a two-class dataset");
  MlpModel model = MlpModel::init(arch, seed);

  auto params = model.parameters();
  Optimizer optimizer(cfg.optimizer, params);

  const auto train_idx = ds.indices_of(Split::train);
  const std::size_t n_train = train_idx.size();
  if (n_train == 0) throw ConfigError("train split is empty");

  // The mixing stream is separate from the shuffle stream so that methods
  // which never draw mixing randomness (erm) see identical batches.
  Rng mix_rng(derive_seed(seed, kTagMix));

  const bool mixes =
      cfg.method == Method::mixup || cfg.method == Method::mixupe;
  const double eta =
      (cfg.method == Method::mixupe || cfg.method == Method::erm_plus_reg)
          ? cfg.eta
          : 0.0;

  // Probe subset for the alpha trace: the first probe-size train rows.
  Tensor probe_x, probe_y;
  if (cfg.alpha_trace_every > 0) {
    std::vector<std::size_t> probe_idx(
        train_idx.begin(),
        train_idx.begin() +
            std::min(cfg.alpha_trace_probe, train_idx.size()));
    auto gathered = ds.gather(probe_idx);
    probe_x = gathered.first;
    probe_y = head_targets(gathered.second, cfg.head);
  }

  RunMetrics metrics;
  metrics.seed = seed;
  std::uint64_t iteration = 0;
  auto maybe_trace = [&]() {
    if (cfg.alpha_trace_every == 0) return;
    if (iteration % cfg.alpha_trace_every != 0) return;
    metrics.alpha_trace.push_back(alpha_trace_point(
        model, probe_x, probe_y, ds.mean_x, iteration, cfg.head));
  };
  maybe_trace();  // iteration 0: fresh initialization

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, kTagShuffle, epoch));
    const auto order = shuffle_rng.permutation(n_train);
    // Second loader for the two-stream mixing form: its own shuffle of
    // the same split, read at the same batch positions.
    std::vector<std::size_t> order2;
    if (mixes && cfg.mix_style == MixStyle::two_stream) {
      Rng partner_rng(derive_seed(seed, kTagMix, epoch));
      order2 = partner_rng.permutation(n_train);
    }

    double sum_total = 0.0, sum_lmix = 0.0, sum_r = 0.0, sum_eta_hat = 0.0;
    std::size_t n_batches = 0;

    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, n_train);
      std::vector<std::size_t> batch_idx;
      batch_idx.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k)
        batch_idx.push_back(train_idx[order[k]]);
      auto [x, raw_y] = ds.gather(batch_idx);
      Tensor y = head_targets(raw_y, cfg.head);

      Tensor loss;
      LossBreakdown bd;
      try {
        if (mixes) {
          MixupeOptions opt;
          opt.beta = cfg.mix;
          opt.eta = (cfg.method == Method::mixupe) ? eta : 0.0;
          opt.head = cfg.head;
          opt.mode = cfg.reg_mode;
          opt.mean_x = ds.mean_x;
          opt.forced_lambda = cfg.forced_lambda;
          if (!order2.empty()) {
            std::vector<std::size_t> partner_idx;
            partner_idx.reserve(stop - start);
            for (std::size_t k = start; k < stop; ++k)
              partner_idx.push_back(train_idx[order2[k]]);
            auto [x2, y2] = ds.gather(partner_idx);
            opt.partner = PartnerBatch{x2, head_targets(y2, cfg.head)};
          }
          std::tie(loss, bd) = mixupe_loss(model, x, y, opt, mix_rng);
        } else {
          Tensor l_std = loss_h(model.forward(x), y, cfg.head);
          bd.lambda_used = 1.0;
          bd.l_mix = l_std.value();
          if (eta > 0.0) {
            Tensor r = regularizer_R(model, x, y, cfg.mix, cfg.reg_mode,
                                     ds.mean_x, cfg.head);
            bd.r_term = r.value();
            bd.expected_a_lambda = expected_a_lambda(cfg.mix);
            Tensor unscaled = add(l_std, scale(r, eta));
            const double denom = std::fabs(unscaled.value());
            bd.eta_hat = denom == 0.0 ? 1.0 : std::fabs(bd.l_mix) / denom;
            loss = scale(unscaled, bd.eta_hat);
            bd.total = loss.value();
          } else {
            bd.eta_hat = 1.0;
            bd.total = bd.l_mix;
            loss = l_std;
          }
        }
        backward(loss);
        optimizer.step(params);
      } catch (const NonFiniteError& e) {
        throw RunError(std::string("non-finite loss: ") + e.what(), epoch,
                       n_batches, bd.lambda_used, bd.eta_hat);
      }

      sum_total += bd.total;
      sum_lmix += bd.l_mix;
      sum_r += bd.r_term;
      sum_eta_hat += bd.eta_hat;
      ++n_batches;
      ++iteration;
      maybe_trace();
    }

    EpochRow row;
    row.epoch = epoch;
    row.train_loss_total = sum_total / n_batches;
    row.train_l_mix = sum_lmix / n_batches;
    row.train_r = sum_r / n_batches;
    row.eta_hat_mean = sum_eta_hat / n_batches;
    row.train_error = evaluate_split(model, ds, Split::train, cfg.head).error;
    const EvalResult val = evaluate_split(model, ds, Split::val, cfg.head);
    const EvalResult test = evaluate_split(model, ds, Split::test, cfg.head);
    row.val_error = val.error;
    row.test_error = test.error;
    metrics.rows.push_back(row);
  }

  // Summary.
  std::size_t best = 0;
  for (std::size_t e = 1; e < metrics.rows.size(); ++e)
    if (metrics.rows[e].val_error < metrics.rows[best].val_error) best = e;
  metrics.summary.best_val_epoch = static_cast<int>(best);
  metrics.summary.val_error_at_best = metrics.rows[best].val_error;
  metrics.summary.test_error_at_best_val = metrics.rows[best].test_error;
  metrics.summary.final_train_loss_std =
      evaluate_split(model, ds, Split::train, cfg.head).loss;
  metrics.summary.final_val_loss_std =
      evaluate_split(model, ds, Split::val, cfg.head).loss;
  metrics.summary.final_test_loss_std =
      evaluate_split(model, ds, Split::test, cfg.head).loss;
  metrics.summary.final_train_error = metrics.rows.back().train_error;
  metrics.summary.final_test_error = metrics.rows.back().test_error;
  metrics.summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    t_start)
          .count();
  return metrics;
}

std::string run_file_stem(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.out_dir + "/" + cfg.name + "_seed" + std::to_string(seed);
}

}  // namespace

std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg,
                                       const Dataset& ds) {
  cfg.validate();
  if (!cfg.out_dir.empty())
    std::filesystem::create_directories(cfg.out_dir);
  std::vector<RunMetrics> out;
  for (std::uint64_t seed : cfg.seeds) {
    RunMetrics m = run_single_seed(cfg, ds, seed);
    if (!cfg.out_dir.empty()) {
      write_metrics_csv(m, run_file_stem(cfg, seed) + ".csv");
      write_summary_json(m, run_file_stem(cfg, seed) + ".summary.json");
      if (!m.alpha_trace.empty())
        write_alpha_trace_csv(m.alpha_trace,
                              run_file_stem(cfg, seed) + "_alpha_trace.csv");
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, load_configured_dataset(cfg));
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const RunMetrics& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << kMetricsHeader << "\n";
  for (const auto& r : m.rows) {
    os << r.epoch << "," << num(r.train_loss_total) << ","
       << num(r.train_l_mix) << "," << num(r.train_r) << ","
       << num(r.eta_hat_mean) << "," << num(r.train_error) << ","
       << num(r.val_error) << "," << num(r.test_error) << "\n";
  }
  if (!os) throw IoError("write failure on '" + path + "'");
}

void write_summary_json(const RunMetrics& m, const std::string& path) {
  nlohmann::json j;
  j["seed"] = m.seed;
  j["best_val_epoch"] = m.summary.best_val_epoch;
  j["val_error_at_best"] = m.summary.val_error_at_best;
  j["test_error_at_best_val"] = m.summary.test_error_at_best_val;
  j["final_train_loss_std"] = m.summary.final_train_loss_std;
  j["final_val_loss_std"] = m.summary.final_val_loss_std;
  j["final_test_loss_std"] = m.summary.final_test_loss_std;
  j["final_train_error"] = m.summary.final_train_error;
  j["final_test_error"] = m.summary.final_test_error;
  j["wall_seconds"] = m.summary.wall_seconds;
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// grid search
// ---------------------------------------------------------------------------

GridResult grid_search(const ExperimentConfig& tmpl,
                       const std::vector<double>& alpha_grid,
                       const std::vector<double>& eta_grid,
                       const Dataset& ds) {
  if (alpha_grid.empty() || eta_grid.empty())
    throw ConfigError("grid_search: empty grid");
  const bool uses_eta = tmpl.method == Method::mixupe ||
                        tmpl.method == Method::erm_plus_reg;
  const bool uses_alpha =
      tmpl.method == Method::mixup || tmpl.method == Method::mixupe;
  const std::vector<double> alphas = uses_alpha ? alpha_grid
                                                : std::vector<double>{0.0};
  const std::vector<double> etas =
      uses_eta ? eta_grid : std::vector<double>{0.0};

  GridResult result;
  for (double alpha : alphas) {
    for (double eta : etas) {
      GridCell cell;
      cell.alpha = alpha;
      cell.eta = eta;
      ExperimentConfig cfg = tmpl;
      cfg.out_dir.clear();  // grid cells stay in memory
      if (uses_alpha) {
        cfg.mix.alpha = alpha;
        cfg.mix.beta = alpha;
      }
      cfg.eta = eta;
      try {
        const auto runs = run_experiment(cfg, ds);
        double acc = 0.0, err = 0.0;
        for (const auto& run : runs) {
          acc += 1.0 - run.summary.val_error_at_best;
          err += run.summary.test_error_at_best_val;
        }
        cell.mean_val_accuracy = acc / static_cast<double>(runs.size());
        cell.mean_test_error = err / static_cast<double>(runs.size());
      } catch (const RunError& e) {
        cell.failed = true;
        cell.fail_reason = e.what();
      }
      result.table.push_back(std::move(cell));
    }
  }

  // Selection: best mean validation accuracy; ties prefer smaller eta,
  // then smaller alpha.
  bool found = false;
  for (std::size_t i = 0; i < result.table.size(); ++i) {
    const GridCell& c = result.table[i];
    if (c.failed) continue;
    if (!found) {
      result.best_index = i;
      found = true;
      continue;
    }
    const GridCell& b = result.table[result.best_index];
    if (c.mean_val_accuracy > b.mean_val_accuracy ||
        (c.mean_val_accuracy == b.mean_val_accuracy &&
         (c.eta < b.eta || (c.eta == b.eta && c.alpha < b.alpha)))) {
      result.best_index = i;
    }
  }
  if (!found) throw RunError("every grid cell failed", 0, 0, 0.0, 1.0);

  result.best_config = tmpl;
  const GridCell& best = result.table[result.best_index];
  if (uses_alpha) {
    result.best_config.mix.alpha = best.alpha;
    result.best_config.mix.beta = best.alpha;
  }
  result.best_config.eta = best.eta;
  return result;
}

void write_grid_csv(const GridResult& grid, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "alpha,eta,mean_val_accuracy,mean_test_error,failed\n";
  for (const auto& c : grid.table) {
    os << num(c.alpha) << "," << num(c.eta) << "," << num(c.mean_val_accuracy)
       << "," << num(c.mean_test_error) << "," << (c.failed ? 1 : 0) << "\n";
  }
  os << "# selected alpha=" << num(grid.table[grid.best_index].alpha)
     << " eta=" << num(grid.table[grid.best_index].eta) << "\n";
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

std::vector<AblationRow> ablation_suite(const ExperimentConfig& base,
                                        const Dataset& ds) {
  const Method arms[4] = {Method::erm, Method::mixup, Method::erm_plus_reg,
                          Method::mixupe};
  std::vector<AblationRow> rows;
  for (Method m : arms) {
    ExperimentConfig cfg = base;
    cfg.method = m;
    cfg.out_dir.clear();
    AblationRow row;
    row.method = m;
    const auto runs = run_experiment(cfg, ds);
    for (const auto& run : runs)
      row.per_seed_test_error.push_back(run.summary.test_error_at_best_val);
    double mean = 0.0;
    for (double e : row.per_seed_test_error) mean += e;
    mean /= static_cast<double>(row.per_seed_test_error.size());
    double var = 0.0;
    for (double e : row.per_seed_test_error) var += (e - mean) * (e - mean);
    var /= static_cast<double>(row.per_seed_test_error.size());
    row.mean_test_error = mean;
    row.std_test_error = std::sqrt(var);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "method,mean_test_error,std_test_error\n";
  for (const auto& r : rows)
    os << method_name(r.method) << "," << num(r.mean_test_error) << ","
       << num(r.std_test_error) << "\n";
}

}  // namespace mixupe
