#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "mixupe/nn.hpp"
#include "mixupe/rng.hpp"
#include "mixupe/tensor.hpp"

namespace mixupe {

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
};

void validate(const BetaParams& p);

enum class Head { softmax, sigmoid };

/// Batch mixed against a permutation of itself with a single lambda.
struct MixedBatch {
  Tensor x_mixed;  // m x d
  Tensor y_mixed;  // m x C
  double lambda = 1.0;
  std::vector<std::size_t> permutation;
};

/// Per-batch record of the scaled joint objective.
struct LossBreakdown {
  double l_mix = 0.0;
  double r_term = 0.0;
  double eta_hat = 1.0;
  double total = 0.0;
  double expected_a_lambda = 0.0;
  double lambda_used = 1.0;
};

/// Beta(alpha, beta) draw in the open interval (0, 1), built from two
/// log-space Gamma draws so that tiny shape parameters stay finite.
double sample_beta(const BetaParams& p, Rng& rng);

/**
 * Mean residual mixing weight E[1 - lambda] under the mixture
 * (a/(a+b)) Beta(a+1, b) + (b/(a+b)) Beta(b+1, a); closed form
 * 2ab / ((a+b)(a+b+1)). For Beta(a, a) this equals 1 - (a+1)/(2a+1).
 */
double expected_a_lambda(const BetaParams& p);

/// Convex combination of the batch with a random permutation of itself.
/// lambda == 1 returns the originals bit-for-bit.
MixedBatch mix_batch(const Tensor& x, const Tensor& y, double lambda,
                     Rng& rng);
MixedBatch mix_batch_with_permutation(const Tensor& x, const Tensor& y,
                                      double lambda,
                                      std::vector<std::size_t> permutation);

/// Two-stream form: the partner rows come from an independently shuffled
/// second pass over the data instead of a permutation of the batch. The
/// returned permutation field is empty.
MixedBatch mix_two_stream(const Tensor& x, const Tensor& y,
                          const Tensor& x_partner, const Tensor& y_partner,
                          double lambda);

/**
 * Mean over the batch of h(f) - y^T f. The softmax head (C >= 2) uses the
 * shifted log-sum-exp; the sigmoid head requires C == 1 and uses a stable
 * softplus. Equals conventional cross-entropy when y rows sum to 1.
 */
Tensor loss_h(const Tensor& logits, const Tensor& y, Head head);

/// Derivative of the head h at the logits: softmax or sigmoid rows.
Tensor head_gradient_rows(const Tensor& logits, Head head);

/**
 * First-order directional-derivative term
 *   q(x_i) = (g(f(x_i)) - y_i)^T J_f(x_i) (mean_x - x_i)
 * evaluated with the exact reverse-mode Jacobian. Value only.
 */
double q_exact(const MlpModel& model, const Tensor& x_i, const Tensor& y_i,
               const Tensor& mean_x, Head head = Head::softmax);

/// Derivative-free approximation (y_i - g(f_i))^T f_i as a differentiable
/// scalar; gradients flow through the logits (and through g).
Tensor q_hat(const Tensor& logits_i, const Tensor& y_i,
             Head head = Head::softmax);

/// Per-sample q-hat column (m x 1), differentiable.
Tensor q_hat_rows(const Tensor& logits, const Tensor& y,
                  Head head = Head::softmax);

enum class RegMode { exact, approximate };

/**
 * R = E[a_lambda] * mean_i |q~(x_i)|. Approximate mode runs one extra
 * forward pass on the original batch and is differentiable; exact mode
 * evaluates per-sample Jacobians and returns a constant scalar (used by
 * the verification suites, not for training).
 */
Tensor regularizer_R(const MlpModel& model, const Tensor& x_batch,
                     const Tensor& y_batch, const BetaParams& p, RegMode mode,
                     const std::optional<Tensor>& mean_x,
                     Head head = Head::softmax);

struct PartnerBatch {
  Tensor x;
  Tensor y;
};

struct MixupeOptions {
  BetaParams beta;
  double eta = 0.0;
  Head head = Head::softmax;
  RegMode mode = RegMode::approximate;
  std::optional<Tensor> mean_x;  // required by exact mode
  // Two-stream mixing partner; permutation mixing when absent.
  std::optional<PartnerBatch> partner;
  // Test/degeneracy hooks: pin the draw instead of sampling.
  std::optional<double> forced_lambda;
  std::optional<std::vector<std::size_t>> forced_permutation;
};

/**
 * Scaled joint objective eta_hat * (L_mix + eta R) with eta_hat computed
 * from detached magnitudes (constant under differentiation). eta == 0
 * short-circuits to the plain Mixup loss, bit-for-bit, skipping the extra
 * forward pass. A zero |L_mix + eta R| falls back to eta_hat = 1.
 */
std::pair<Tensor, LossBreakdown> mixupe_loss(const MlpModel& model,
                                             const Tensor& x, const Tensor& y,
                                             const MixupeOptions& opt,
                                             Rng& rng);

}  // namespace mixupe
