#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixupe/data.hpp"
#include "mixupe/mixup.hpp"
#include "mixupe/nn.hpp"
#include "mixupe/theory.hpp"

namespace mixupe {

enum class Method { erm, mixup, mixupe, erm_plus_reg };

Method method_from_string(const std::string& s);
const char* method_name(Method m);

enum class MixStyle { permutation, two_stream };

struct ExperimentConfig {
  std::string name = "run";
  std::string dataset_path;
  std::string dataset_spec_path;
  /// Built-in generator name used instead of the CSV paths when set.
  std::string synth_dataset;

  Method method = Method::erm;
  std::vector<std::size_t> hidden_dims{128, 128};
  Activation activation = Activation::relu;
  bool homogeneous = false;

  BetaParams mix{1.0, 1.0};
  double eta = 0.0;
  Head head = Head::softmax;
  RegMode reg_mode = RegMode::approximate;
  MixStyle mix_style = MixStyle::permutation;
  std::optional<double> forced_lambda;  // degenerate-case hook

  OptimizerSpec optimizer;
  int epochs = 25;
  std::size_t batch_size = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  DatasetOptions data;
  std::size_t alpha_trace_every = 0;  // 0 = off
  std::size_t alpha_trace_probe = 32;
  std::string out_dir;  // empty = no files written

  void validate() const;
};

/// Documented schema, versioned via `config_version = 1`.
ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin);

struct EpochRow {
  int epoch = 0;
  double train_loss_total = 0.0;  // mean training objective over batches
  double train_l_mix = 0.0;
  double train_r = 0.0;
  double eta_hat_mean = 0.0;
  double train_error = 0.0;  // standard split evaluations
  double val_error = 0.0;
  double test_error = 0.0;
};

struct RunSummary {
  int best_val_epoch = 0;
  double val_error_at_best = 0.0;
  double test_error_at_best_val = 0.0;
  // Standard (unmixed) cross-entropy on each split after the last epoch;
  // the train/test loss comparisons between methods read these.
  double final_train_loss_std = 0.0;
  double final_val_loss_std = 0.0;
  double final_test_loss_std = 0.0;
  double final_train_error = 0.0;
  double final_test_error = 0.0;
  double wall_seconds = 0.0;
};

struct RunMetrics {
  std::uint64_t seed = 0;
  std::vector<EpochRow> rows;
  RunSummary summary;
  std::vector<AlphaTrace> alpha_trace;
};

/// Training aborted on a non-finite loss; carries the spot it happened.
class RunError : public std::runtime_error {
 public:
  RunError(const std::string& what, int epoch, std::size_t batch,
           double lambda, double eta_hat)
      : std::runtime_error(what),
        epoch(epoch),
        batch(batch),
        lambda(lambda),
        eta_hat(eta_hat) {}
  int epoch;
  std::size_t batch;
  double lambda;
  double eta_hat;
};

Dataset load_configured_dataset(const ExperimentConfig& cfg);

/// One deterministic training run per seed. Metrics files are written when
/// cfg.out_dir is set: <out_dir>/<name>_seed<k>.csv (+ .summary.json,
/// + _alpha_trace.csv when tracing).
std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg,
                                       const Dataset& ds);
std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg);

extern const char* kMetricsHeader;
void write_metrics_csv(const RunMetrics& m, const std::string& path);
void write_summary_json(const RunMetrics& m, const std::string& path);

// ---------------------------------------------------------------------------
// grid search and ablation
// ---------------------------------------------------------------------------

struct GridCell {
  double alpha = 0.0;
  double eta = 0.0;
  bool failed = false;
  std::string fail_reason;
  double mean_val_accuracy = 0.0;   // at per-run best-val epochs
  double mean_test_error = 0.0;     // at per-run best-val epochs
};

struct GridResult {
  std::vector<GridCell> table;  // alpha-major, eta-minor order
  std::size_t best_index = 0;
  ExperimentConfig best_config;
};

/// Trains every (alpha, eta) combination over all seeds and selects by
/// mean validation accuracy; ties break toward smaller eta then smaller
/// alpha. Methods without eta (erm, mixup) collapse the eta axis.
GridResult grid_search(const ExperimentConfig& tmpl,
                       const std::vector<double>& alpha_grid,
                       const std::vector<double>& eta_grid, const Dataset& ds);

void write_grid_csv(const GridResult& grid, const std::string& path);

struct AblationRow {
  Method method = Method::erm;
  double mean_test_error = 0.0;
  double std_test_error = 0.0;
  std::vector<double> per_seed_test_error;
};

/// Four arms (erm, mixup, erm_plus_reg, mixupe) with shared seeds and the
/// hyperparameters from `base`.
std::vector<AblationRow> ablation_suite(const ExperimentConfig& base,
                                        const Dataset& ds);

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::string& path);

// Split evaluation helpers shared with tests.
struct EvalResult {
  double loss = 0.0;   // standard unmixed loss_h
  double error = 0.0;  // argmax error rate
};
EvalResult evaluate_split(const MlpModel& model, const Dataset& ds, Split s,
                          Head head);

}  // namespace mixupe
