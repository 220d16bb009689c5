#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mixupe/mixup.hpp"
#include "mixupe/nn.hpp"
#include "mixupe/quadrature.hpp"

namespace mixupe {

// ---------------------------------------------------------------------------
// Scalar path machinery.
//
// Every Taylor statement checked here is contracted along one mixing
// direction, so the k-th order tensor term reduces to the k-th derivative
// of the scalar map a -> loss(x_i + a * (x' - x_i)). Derivatives come from
// central finite-difference stencils with two rounds of Richardson
// extrapolation over step halvings, which keeps orders up to 4 well above
// the roundoff floor at step sizes ~1e-2.
// ---------------------------------------------------------------------------

struct DerivEstimate {
  double value = 0.0;
  double error = 0.0;  // |last - previous| extrapolation difference
};

/// Derivatives 1..k of a scalar function at 0. Steps base_h, base_h/2,
/// base_h/4; each order extrapolated independently.
std::vector<DerivEstimate> derivatives_of_path(
    const std::function<double(double)>& phi, int k, double base_h = 1e-2);

/// Per-sample loss along the mixing path:
/// loss(theta, (x_i + a (x' - x_i), y_i)), evaluated exactly.
double path_loss(const MlpModel& model, const Tensor& x_i, const Tensor& y_i,
                 const Tensor& x_prime, double a, Head head = Head::softmax);

/// Derivatives of path_loss at a = 0. Orders >= 2 require a smooth
/// activation; requesting them on a ReLU model is rejected.
std::vector<DerivEstimate> directional_derivatives(
    const MlpModel& model, const Tensor& x_i, const Tensor& y_i,
    const Tensor& x_prime, int k, Head head = Head::softmax,
    double base_h = 1e-2);

/// d/da path_loss at a, via the reverse-mode input gradient dotted with
/// the direction. Cross-oracle for the k = 1 stencil.
double path_loss_derivative_autodiff(const MlpModel& model, const Tensor& x_i,
                                     const Tensor& y_i, const Tensor& x_prime,
                                     double a, Head head = Head::softmax);

struct ExpansionReport {
  int order = 0;                       // truncation order K
  std::vector<double> a_values;
  std::vector<DerivEstimate> derivatives;  // k = 1..K at a = 0
  double base_loss = 0.0;              // loss at a = 0
  // per_order_terms[k-1][j] = (a_j^k / k!) * d_k
  std::vector<std::vector<double>> per_order_terms;
  std::vector<double> truncated_sum;
  std::vector<double> exact_loss;
  std::vector<double> remainder;       // exact - truncated
  std::vector<double> term_slopes;     // fitted log-log slope per order
  double remainder_slope = 0.0;
  bool remainder_slope_ok = false;     // slope >= K + 0.7
  bool term_slopes_ok = false;         // each within k +- 0.3
  bool passed = false;
  bool remainder_at_floor = false;     // all remainders below roundoff floor
};

/// Taylor check for an arbitrary scalar path (test hook for polynomial
/// oracles).
ExpansionReport verify_path_taylor(const std::function<double(double)>& phi,
                                   int order,
                                   const std::vector<double>& a_grid,
                                   double base_h = 1e-2);

ExpansionReport verify_pointwise_taylor(const MlpModel& model,
                                        const Tensor& x_i, const Tensor& y_i,
                                        const Tensor& x_prime, int order,
                                        const std::vector<double>& a_grid,
                                        Head head = Head::softmax);

void write_expansion_csv(const ExpansionReport& report,
                         const std::string& path);

// ---------------------------------------------------------------------------
// Distributional decomposition: the mixed empirical loss against the
// truncated directional-derivative correction, with the lambda expectation
// taken by Gauss-Legendre quadrature against the Beta / Beta-mixture
// densities and cross-checked by Monte Carlo.
// ---------------------------------------------------------------------------

struct DecompositionOptions {
  int quad_nodes = 64;
  int max_order = 4;
  std::optional<double> point_mass_lambda;  // degenerate check hook
  int mc_samples = 0;                       // 0 = skip the MC cross-check
  std::uint64_t mc_seed = 1;
  double deriv_base_h = 1e-2;
};

struct DecompositionReport {
  double l_std = 0.0;
  double lhs_pairs = 0.0;     // mixed inputs and mixed labels, Beta(a,b)
  double lhs_mixture = 0.0;   // unmixed label form under the Beta mixture
  std::array<double, 4> rhs{};         // truncation K = 1..4
  std::array<double, 4> abs_gap{};     // |lhs_pairs - rhs[K-1]|
  std::array<double, 4> a_moments{};   // E[(1-lambda)^k] under the mixture
  bool gaps_nonincreasing = false;
  double quad_drift = 0.0;    // change under node doubling
  bool quadrature_converged = false;
  double mc_lhs = 0.0;
  double mc_se = 0.0;
  bool mc_within_3se = true;  // true when MC was skipped
};

/// xs: n x d inputs, ys: n x C one-hot (or soft) targets, n small.
DecompositionReport verify_mixup_decomposition(
    const MlpModel& model, const Tensor& xs, const Tensor& ys,
    const BetaParams& p, const DecompositionOptions& opt = {},
    Head head = Head::softmax);

void write_decomposition_csv(const DecompositionReport& report,
                             const std::string& path);

// ---------------------------------------------------------------------------
// Signed per-class coefficients of the first-order term, and the trace of
// their minimum over a probe set during training.
// ---------------------------------------------------------------------------

/// alpha_j = (g(f(x_i))_j - y_ij) * cosine(J_row_j, mean_x - x_i).
/// A zero-norm Jacobian row (or zero direction) contributes cosine 0.
std::vector<double> alpha_coefficients(const MlpModel& model,
                                       const Tensor& x_i, const Tensor& y_i,
                                       const Tensor& mean_x,
                                       Head head = Head::softmax);

struct AlphaTrace {
  std::uint64_t iteration = 0;
  double min_alpha = 0.0;
  double frac_negative = 0.0;
};

AlphaTrace alpha_trace_point(const MlpModel& model, const Tensor& probe_x,
                             const Tensor& probe_y, const Tensor& mean_x,
                             std::uint64_t iteration,
                             Head head = Head::softmax);

void write_alpha_trace_csv(const std::vector<AlphaTrace>& trace,
                           const std::string& path);

// ---------------------------------------------------------------------------
// Generalization-bound calculators.
// ---------------------------------------------------------------------------

struct BoundInputs {
  double lipschitz_A = 1.0;     // L_A
  double gamma = 0.0;           // sup |q-hat| constraint level
  double data_radius = 1.0;     // bound on ||x||^2
  double n = 1.0;               // sample count
  double delta = 0.05;          // confidence
  double uniform_bound = 1.0;   // B
  double eta = 0.0;
  double eta_hat = 1.0;
  double xi = 1.0;              // vanilla parameter-norm bound
  double empirical_l_mix = 0.0;
};

void validate(const BoundInputs& b);

/// eta_hat L_mix + 2 eta_hat eta L_A gamma X / (sqrt(n) (1 + L_A))
///   + B sqrt(log(1/delta) / (2n)).
double bound_mixupe(const BoundInputs& b);

struct BoundComparison {
  double mixupe_complexity = 0.0;   // L_A gamma X / ((1 + L_A) sqrt(n))
  double vanilla_complexity = 0.0;  // L_A sqrt(xi X / n)
  bool shrink_condition_holds = false;  // gamma sqrt(X) <= (1+L_A) sqrt(xi)
};

BoundComparison bound_compare(const BoundInputs& b);

/// Least-squares slope of log|y| against log x (helper shared with tests).
double fit_loglog_slope(const std::vector<double>& x,
                        const std::vector<double>& y);

}  // namespace mixupe
