#include "mixupe/mixup.hpp"

#include <cmath>
#include <limits>

namespace mixupe {

void validate(const BetaParams& p) {
  if (!(p.alpha > 0.0) || !(p.beta > 0.0))
    throw ConfigError("beta parameters must be positive");
}

double sample_beta(const BetaParams& p, Rng& rng) {
  validate(p);
  const double lx = rng.log_gamma_draw(p.alpha);
  const double ly = rng.log_gamma_draw(p.beta);
  // x/(x+y) as a sigmoid of the log ratio; exact in the tails.
  double lam = 1.0 / (1.0 + std::exp(ly - lx));
  const double lo = std::numeric_limits<double>::min();
  const double hi = std::nexttoward(1.0, 0.0);
  if (lam < lo) lam = lo;
  if (lam > hi) lam = hi;
  return lam;
}

double expected_a_lambda(const BetaParams& p) {
  validate(p);
  const double s = p.alpha + p.beta;
  return 2.0 * p.alpha * p.beta / (s * (s + 1.0));
}

MixedBatch mix_batch_with_permutation(const Tensor& x, const Tensor& y,
                                      double lambda,
                                      std::vector<std::size_t> permutation) {
  if (x.rows() != y.rows())
    throw ShapeError("mix_batch: x has " + std::to_string(x.rows()) +
                     " rows, y has " + std::to_string(y.rows()));
  const std::size_t m = x.rows();
  if (permutation.size() != m)
    throw ShapeError("mix_batch: permutation size mismatch");

  MixedBatch out;
  out.lambda = lambda;
  out.permutation = std::move(permutation);
  if (lambda == 1.0) {
    out.x_mixed = x.detached();
    out.y_mixed = y.detached();
    return out;
  }
  const double a = 1.0 - lambda;
  std::vector<double> xm(x.size()), ym(y.size());
  const auto& xd = x.data();
  const auto& yd = y.data();
  const std::size_t d = x.cols(), c = y.cols();
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t pr = out.permutation[r];
    for (std::size_t j = 0; j < d; ++j)
      xm[r * d + j] = lambda * xd[r * d + j] + a * xd[pr * d + j];
    for (std::size_t j = 0; j < c; ++j)
      ym[r * c + j] = lambda * yd[r * c + j] + a * yd[pr * c + j];
  }
  out.x_mixed = Tensor::from_flat(m, d, std::move(xm));
  out.y_mixed = Tensor::from_flat(m, c, std::move(ym));
  return out;
}

MixedBatch mix_batch(const Tensor& x, const Tensor& y, double lambda,
                     Rng& rng) {
  return mix_batch_with_permutation(x, y, lambda, rng.permutation(x.rows()));
}

MixedBatch mix_two_stream(const Tensor& x, const Tensor& y,
                          const Tensor& x_partner, const Tensor& y_partner,
                          double lambda) {
  if (x.rows() != y.rows() || x_partner.rows() != y_partner.rows() ||
      x.rows() != x_partner.rows() || x.cols() != x_partner.cols() ||
      y.cols() != y_partner.cols())
    throw ShapeError("mix_two_stream: stream shapes do not line up");

  MixedBatch out;
  out.lambda = lambda;
  if (lambda == 1.0) {
    out.x_mixed = x.detached();
    out.y_mixed = y.detached();
    return out;
  }
  const double a = 1.0 - lambda;
  std::vector<double> xm(x.size()), ym(y.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    xm[i] = lambda * x.data()[i] + a * x_partner.data()[i];
  for (std::size_t i = 0; i < y.size(); ++i)
    ym[i] = lambda * y.data()[i] + a * y_partner.data()[i];
  out.x_mixed = Tensor::from_flat(x.rows(), x.cols(), std::move(xm));
  out.y_mixed = Tensor::from_flat(y.rows(), y.cols(), std::move(ym));
  return out;
}

Tensor loss_h(const Tensor& logits, const Tensor& y, Head head) {
  if (logits.rows() != y.rows() || logits.cols() != y.cols())
    throw ShapeError("loss_h: logits and targets differ in shape");
  if (head == Head::softmax && logits.cols() < 2)
    throw ShapeError("loss_h: softmax head requires C >= 2");
  if (head == Head::sigmoid && logits.cols() != 1)
    throw ShapeError("loss_h: sigmoid head requires C == 1");

  const double inv_m = 1.0 / static_cast<double>(logits.rows());
  Tensor h_term = (head == Head::softmax)
                      ? sum(log_sum_exp_rows(logits))
                      : sum(softplus(logits));
  return scale(sub(h_term, sum(mul(y, logits))), inv_m);
}

Tensor head_gradient_rows(const Tensor& logits, Head head) {
  return head == Head::softmax ? softmax_rows(logits) : sigmoid(logits);
}

double q_exact(const MlpModel& model, const Tensor& x_i, const Tensor& y_i,
               const Tensor& mean_x, Head head) {
  if (x_i.rows() != 1 || y_i.rows() != 1)
    throw ShapeError("q_exact: expects single-row x_i and y_i");
  if (mean_x.rows() != 1 || mean_x.cols() != x_i.cols())
    throw ShapeError("q_exact: mean_x must be 1 x d");

  Tensor logits = model.forward_detached(x_i);
  Tensor g = head_gradient_rows(logits, head).detached();
  Tensor jac = jacobian_rows(
      [&model](const Tensor& in) { return model.forward_detached(in); }, x_i);

  const std::size_t d = x_i.cols();
  const std::size_t out_dim = logits.cols();
  double q = 0.0;
  for (std::size_t j = 0; j < out_dim; ++j) {
    double dir_dot = 0.0;
    for (std::size_t k = 0; k < d; ++k)
      dir_dot += jac.at(j, k) * (mean_x.at(0, k) - x_i.at(0, k));
    q += (g.at(0, j) - y_i.at(0, j)) * dir_dot;
  }
  return q;
}

Tensor q_hat_rows(const Tensor& logits, const Tensor& y, Head head) {
  Tensor residual = sub(y, head_gradient_rows(logits, head));
  return row_sum(mul(residual, logits));
}

Tensor q_hat(const Tensor& logits_i, const Tensor& y_i, Head head) {
  if (logits_i.rows() != 1)
    throw ShapeError("q_hat: expects a single-row logits tensor");
  return q_hat_rows(logits_i, y_i, head);
}

Tensor regularizer_R(const MlpModel& model, const Tensor& x_batch,
                     const Tensor& y_batch, const BetaParams& p, RegMode mode,
                     const std::optional<Tensor>& mean_x, Head head) {
  if (x_batch.rows() == 0) throw ShapeError("regularizer_R: empty batch");
  const double ea = expected_a_lambda(p);
  const std::size_t m = x_batch.rows();

  if (mode == RegMode::approximate) {
    Tensor logits = model.forward(x_batch);
    return scale(sum(abs(q_hat_rows(logits, y_batch, head))),
                 ea / static_cast<double>(m));
  }

  if (!mean_x)
    throw std::invalid_argument("regularizer_R: exact mode requires mean_x");
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    acc += std::fabs(q_exact(model, x_batch.row_detached(i),
                             y_batch.row_detached(i), *mean_x, head));
  }
  return Tensor::fill(1, 1, ea * acc / static_cast<double>(m));
}

std::pair<Tensor, LossBreakdown> mixupe_loss(const MlpModel& model,
                                             const Tensor& x, const Tensor& y,
                                             const MixupeOptions& opt,
                                             Rng& rng) {
  validate(opt.beta);
  if (opt.eta < 0.0) throw ConfigError("eta must be >= 0");

  const double lambda =
      opt.forced_lambda ? *opt.forced_lambda : sample_beta(opt.beta, rng);
  MixedBatch mixed;
  if (opt.partner) {
    mixed = mix_two_stream(x, y, opt.partner->x, opt.partner->y, lambda);
  } else if (opt.forced_permutation) {
    mixed = mix_batch_with_permutation(x, y, lambda, *opt.forced_permutation);
  } else {
    mixed = mix_batch(x, y, lambda, rng);
  }

  Tensor l_mix = loss_h(model.forward(mixed.x_mixed), mixed.y_mixed, opt.head);

  LossBreakdown bd;
  bd.lambda_used = lambda;
  bd.expected_a_lambda = expected_a_lambda(opt.beta);
  bd.l_mix = l_mix.value();

  if (opt.eta == 0.0) {
    bd.r_term = 0.0;
    bd.eta_hat = 1.0;
    bd.total = bd.l_mix;
    return {l_mix, bd};
  }

  Tensor r = regularizer_R(model, x, y, opt.beta, opt.mode, opt.mean_x,
                           opt.head);
  bd.r_term = r.value();
  Tensor unscaled = add(l_mix, scale(r, opt.eta));
  const double denom = std::fabs(unscaled.value());
  bd.eta_hat = (denom == 0.0) ? 1.0 : std::fabs(bd.l_mix) / denom;
  Tensor total = scale(unscaled, bd.eta_hat);
  bd.total = total.value();
  return {total, bd};
}

}  // namespace mixupe
