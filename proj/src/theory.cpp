#include "mixupe/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace mixupe {

namespace {

double factorial(int k) {
  double f = 1.0;
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

/// Central stencil of order k at step h from cached values
/// phi(-2h), phi(-h), phi(0), phi(h), phi(2h).
double stencil(int k, double h, double m2, double m1, double c0, double p1,
               double p2) {
  switch (k) {
    case 1: return (p1 - m1) / (2.0 * h);
    case 2: return (p1 - 2.0 * c0 + m1) / (h * h);
    case 3: return (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h * h * h);
    case 4: return (p2 - 4.0 * p1 + 6.0 * c0 - 4.0 * m1 + m2) / (h * h * h * h);
    default: throw std::invalid_argument("stencil order must be 1..4");
  }
}

}  // namespace

std::vector<DerivEstimate> derivatives_of_path(
    const std::function<double(double)>& phi, int k, double base_h) {
  if (k < 1 || k > 4)
    throw std::invalid_argument("derivatives_of_path: order must be 1..4");
  if (!(base_h > 0.0))
    throw std::invalid_argument("derivatives_of_path: step must be positive");

  // All stencils over three step levels read phi at multiples of base_h/4:
  // 0, +-1, +-2, +-4, +-8 quarters.
  const double q = base_h / 4.0;
  const int offsets[9] = {-8, -4, -2, -1, 0, 1, 2, 4, 8};
  double val[17];  // indexed by offset + 8
  for (int o : offsets) val[o + 8] = phi(q * o);

  std::vector<DerivEstimate> out;
  for (int order = 1; order <= k; ++order) {
    // Neville tableau over the step halvings. Halving trades truncation
    // error for roundoff (the k = 3, 4 stencils divide by h^3, h^4), so
    // the deepest extrapolant is not automatically the best; keep the
    // entry with the smallest bracketed error instead.
    double tab[3][3];
    for (int lvl = 0; lvl < 3; ++lvl) {
      const int step = 4 >> lvl;  // 4, 2, 1 quarters
      const double h = q * step;
      tab[0][lvl] = stencil(order, h, val[8 - 2 * step], val[8 - step],
                            val[8], val[8 + step], val[8 + 2 * step]);
    }
    DerivEstimate best{tab[0][0], std::fabs(tab[0][1] - tab[0][0])};
    double power = 4.0;  // error series in even powers of h
    for (int j = 1; j < 3; ++j) {
      for (int lvl = j; lvl < 3; ++lvl) {
        tab[j][lvl] =
            (power * tab[j - 1][lvl] - tab[j - 1][lvl - 1]) / (power - 1.0);
        const double err =
            std::max(std::fabs(tab[j][lvl] - tab[j - 1][lvl]),
                     std::fabs(tab[j][lvl] - tab[j - 1][lvl - 1]));
        if (err < best.error) best = {tab[j][lvl], err};
      }
      power *= 4.0;
    }
    out.push_back(best);
  }
  return out;
}

namespace {

// ReLU breaks C^K only when it is actually applied somewhere.
bool nonsmooth(const MlpModel& model) {
  return !model.spec().hidden_dims.empty() &&
         model.spec().hidden_activation == Activation::relu;
}

Tensor path_point(const Tensor& x_i, const Tensor& x_prime, double a) {
  if (x_i.rows() != 1 || x_prime.rows() != 1 ||
      x_i.cols() != x_prime.cols())
    throw ShapeError("path: x_i and x_prime must be 1 x d");
  std::vector<double> p(x_i.cols());
  for (std::size_t c = 0; c < x_i.cols(); ++c)
    p[c] = x_i.at(0, c) + a * (x_prime.at(0, c) - x_i.at(0, c));
  return Tensor::from_flat(1, x_i.cols(), std::move(p));
}

}  // namespace

double path_loss(const MlpModel& model, const Tensor& x_i, const Tensor& y_i,
                 const Tensor& x_prime, double a, Head head) {
  Tensor x = path_point(x_i, x_prime, a);
  return loss_h(model.forward_detached(x), y_i, head).value();
}

std::vector<DerivEstimate> directional_derivatives(const MlpModel& model,
                                                   const Tensor& x_i,
                                                   const Tensor& y_i,
                                                   const Tensor& x_prime,
                                                   int k, Head head,
                                                   double base_h) {
  if (k >= 2 && nonsmooth(model))
    throw std::invalid_argument(
        "directional derivatives of order >= 2 need a smooth activation; "
        "ReLU models support order 1 only");
  auto phi = [&](double a) { return path_loss(model, x_i, y_i, x_prime, a, head); };
  return derivatives_of_path(phi, k, base_h);
}

double path_loss_derivative_autodiff(const MlpModel& model, const Tensor& x_i,
                                     const Tensor& y_i, const Tensor& x_prime,
                                     double a, Head head) {
  Tensor x = path_point(x_i, x_prime, a).detached_with_grad();
  Tensor loss = loss_h(model.forward_detached(x), y_i, head);
  backward(loss);
  const auto& gx = x.grad();
  double acc = 0.0;
  for (std::size_t c = 0; c < x_i.cols(); ++c)
    acc += gx[c] * (x_prime.at(0, c) - x_i.at(0, c));
  return acc;
}

double fit_loglog_slope(const std::vector<double>& x,
                        const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_loglog_slope: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(std::fabs(y[i]));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

ExpansionReport verify_path_taylor(const std::function<double(double)>& phi,
                                   int order,
                                   const std::vector<double>& a_grid,
                                   double base_h) {
  if (a_grid.empty())
    throw std::invalid_argument("verify_path_taylor: empty a grid");
  for (double a : a_grid)
    if (!(a > 0.0 && a <= 0.5))
      throw std::invalid_argument("verify_path_taylor: a must be in (0, 0.5]");

  ExpansionReport rep;
  rep.order = order;
  rep.a_values = a_grid;
  rep.derivatives = derivatives_of_path(phi, order, base_h);
  rep.base_loss = phi(0.0);

  rep.per_order_terms.assign(order, std::vector<double>(a_grid.size(), 0.0));
  rep.truncated_sum.resize(a_grid.size());
  rep.exact_loss.resize(a_grid.size());
  rep.remainder.resize(a_grid.size());
  for (std::size_t j = 0; j < a_grid.size(); ++j) {
    const double a = a_grid[j];
    double acc = rep.base_loss;
    double apow = 1.0;
    for (int k = 1; k <= order; ++k) {
      apow *= a;
      const double term = apow / factorial(k) * rep.derivatives[k - 1].value;
      rep.per_order_terms[k - 1][j] = term;
      acc += term;
    }
    rep.truncated_sum[j] = acc;
    rep.exact_loss[j] = phi(a);
    rep.remainder[j] = rep.exact_loss[j] - acc;
  }

  // Per-order slopes are exact powers by construction; fit them anyway so
  // the report carries the observed numbers.
  rep.term_slopes.resize(order);
  rep.term_slopes_ok = true;
  for (int k = 1; k <= order; ++k) {
    bool all_zero = true;
    for (double t : rep.per_order_terms[k - 1])
      if (t != 0.0) all_zero = false;
    if (all_zero) {
      rep.term_slopes[k - 1] = std::numeric_limits<double>::quiet_NaN();
      continue;  // vanishing derivative: no scaling to check
    }
    rep.term_slopes[k - 1] =
        fit_loglog_slope(rep.a_values, rep.per_order_terms[k - 1]);
    if (std::fabs(rep.term_slopes[k - 1] - k) > 0.3) rep.term_slopes_ok = false;
  }

  // Remainder decay: drop points at the roundoff floor before fitting.
  const double floor =
      1e-13 * std::max(1.0, std::fabs(rep.base_loss));
  std::vector<double> ax, ry;
  for (std::size_t j = 0; j < a_grid.size(); ++j) {
    if (std::fabs(rep.remainder[j]) > floor) {
      ax.push_back(a_grid[j]);
      ry.push_back(rep.remainder[j]);
    }
  }
  if (ax.size() < 2) {
    // Machine-exact expansion (polynomial path): nothing left to fit.
    rep.remainder_at_floor = true;
    rep.remainder_slope = std::numeric_limits<double>::quiet_NaN();
    rep.remainder_slope_ok = true;
  } else {
    rep.remainder_slope = fit_loglog_slope(ax, ry);
    rep.remainder_slope_ok = rep.remainder_slope >= order + 0.7;
  }
  rep.passed = rep.remainder_slope_ok && rep.term_slopes_ok;
  return rep;
}

ExpansionReport verify_pointwise_taylor(const MlpModel& model,
                                        const Tensor& x_i, const Tensor& y_i,
                                        const Tensor& x_prime, int order,
                                        const std::vector<double>& a_grid,
                                        Head head) {
  if (order >= 2 && nonsmooth(model))
    throw std::invalid_argument(
        "pointwise Taylor check with order >= 2 needs a smooth activation");
  auto phi = [&](double a) { return path_loss(model, x_i, y_i, x_prime, a, head); };
  return verify_path_taylor(phi, order, a_grid);
}

void write_expansion_csv(const ExpansionReport& rep, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.precision(17);
  os << "a,order,term_value,truncated_sum,exact,remainder\n";
  for (std::size_t j = 0; j < rep.a_values.size(); ++j) {
    for (int k = 1; k <= rep.order; ++k) {
      os << rep.a_values[j] << "," << k << ","
         << rep.per_order_terms[k - 1][j] << "," << rep.truncated_sum[j]
         << "," << rep.exact_loss[j] << "," << rep.remainder[j] << "\n";
    }
  }
  os << "# remainder_slope=" << rep.remainder_slope;
  os << " term_slopes=";
  for (int k = 1; k <= rep.order; ++k) {
    os << rep.term_slopes[k - 1];
    if (k != rep.order) os << "|";
  }
  os << " passed=" << (rep.passed ? 1 : 0) << "\n";
  if (!os) throw IoError("write failure on '" + path + "'");
}

// ---------------------------------------------------------------------------
// distributional decomposition
// ---------------------------------------------------------------------------

namespace {

double single_loss(const MlpModel& model, const Tensor& x, const Tensor& y,
                   Head head) {
  return loss_h(model.forward_detached(x), y, head).value();
}

/// Mean over all ordered pairs of the mixed-pair loss at a fixed lambda
/// (mixed labels, the literal Mixup objective).
double pairs_loss_at_lambda(const MlpModel& model, const Tensor& xs,
                            const Tensor& ys, double lambda, Head head) {
  const std::size_t n = xs.rows();
  const std::size_t d = xs.cols();
  const std::size_t c = ys.cols();
  double acc = 0.0;
  std::vector<double> xbuf(d), ybuf(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t t = 0; t < d; ++t)
        xbuf[t] = lambda * xs.at(i, t) + (1.0 - lambda) * xs.at(j, t);
      for (std::size_t t = 0; t < c; ++t)
        ybuf[t] = lambda * ys.at(i, t) + (1.0 - lambda) * ys.at(j, t);
      acc += single_loss(model, Tensor::from_flat(1, d, xbuf),
                         Tensor::from_flat(1, c, ybuf), head);
    }
  }
  return acc / static_cast<double>(n * n);
}

/// Mean over all ordered pairs of loss(x_i + (1-lambda)(x_j - x_i), y_i):
/// the unmixed-label form whose lambda lives under the Beta mixture.
double mixture_loss_at_lambda(const MlpModel& model, const Tensor& xs,
                              const Tensor& ys, double lambda, Head head) {
  const std::size_t n = xs.rows();
  const double a = 1.0 - lambda;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor xi = xs.row_detached(i);
    Tensor yi = ys.row_detached(i);
    for (std::size_t j = 0; j < n; ++j) {
      Tensor xj = xs.row_detached(j);
      acc += path_loss(model, xi, yi, xj, a, head);
    }
  }
  return acc / static_cast<double>(n * n);
}

}  // namespace

DecompositionReport verify_mixup_decomposition(const MlpModel& model,
                                               const Tensor& xs,
                                               const Tensor& ys,
                                               const BetaParams& p,
                                               const DecompositionOptions& opt,
                                               Head head) {
  validate(p);
  if (opt.max_order < 1 || opt.max_order > 4)
    throw std::invalid_argument("decomposition: max_order must be 1..4");
  if (nonsmooth(model))
    throw std::invalid_argument("decomposition needs a smooth activation");
  const std::size_t n = xs.rows();
  if (n == 0 || n > 64)
    throw std::invalid_argument("decomposition: n must be in [1, 64]");

  DecompositionReport rep;

  // Standard loss.
  double lstd = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    lstd += single_loss(model, xs.row_detached(i), ys.row_detached(i), head);
  rep.l_std = lstd / static_cast<double>(n);

  // Lambda expectations.
  auto pairs_fn = [&](double lam) {
    return pairs_loss_at_lambda(model, xs, ys, lam, head);
  };
  auto mixture_fn = [&](double lam) {
    return mixture_loss_at_lambda(model, xs, ys, lam, head);
  };

  if (opt.point_mass_lambda) {
    const double lam = *opt.point_mass_lambda;
    rep.lhs_pairs = pairs_fn(lam);
    rep.lhs_mixture = mixture_fn(lam);
    for (int k = 1; k <= 4; ++k)
      rep.a_moments[k - 1] = std::pow(1.0 - lam, k);
    rep.quad_drift = 0.0;
    rep.quadrature_converged = true;
  } else {
    const QuadratureRule rule = gauss_legendre_01(opt.quad_nodes);
    const QuadratureRule rule2 = gauss_legendre_01(2 * opt.quad_nodes);
    rep.lhs_pairs = beta_expectation(pairs_fn, p.alpha, p.beta, rule);
    const double lhs2 = beta_expectation(pairs_fn, p.alpha, p.beta, rule2);
    rep.quad_drift = std::fabs(lhs2 - rep.lhs_pairs);
    rep.quadrature_converged = rep.quad_drift <= 1e-6;
    rep.lhs_mixture = mixture_expectation(mixture_fn, p, rule);
    for (int k = 1; k <= 4; ++k) {
      const int kk = k;
      rep.a_moments[k - 1] = mixture_expectation(
          [kk](double lam) { return std::pow(1.0 - lam, kk); }, p, rule);
    }
  }

  // Directional derivatives for every ordered pair; the i == j path is
  // constant so its derivatives are exactly zero.
  std::array<double, 4> mean_dk{};
  for (std::size_t i = 0; i < n; ++i) {
    Tensor xi = xs.row_detached(i);
    Tensor yi = ys.row_detached(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      auto dk = directional_derivatives(model, xi, yi, xs.row_detached(j),
                                        opt.max_order, head, opt.deriv_base_h);
      for (int k = 1; k <= opt.max_order; ++k)
        mean_dk[k - 1] += dk[k - 1].value;
    }
  }
  for (int k = 1; k <= opt.max_order; ++k)
    mean_dk[k - 1] /= static_cast<double>(n * n);

  double correction = 0.0;
  for (int k = 1; k <= 4; ++k) {
    if (k <= opt.max_order)
      correction += rep.a_moments[k - 1] / factorial(k) * mean_dk[k - 1];
    rep.rhs[k - 1] = rep.l_std + correction;
    rep.abs_gap[k - 1] = std::fabs(rep.lhs_pairs - rep.rhs[k - 1]);
  }
  rep.gaps_nonincreasing = true;
  for (int k = 1; k < opt.max_order; ++k)
    if (rep.abs_gap[k] > rep.abs_gap[k - 1] + 1e-12)
      rep.gaps_nonincreasing = false;

  // Monte-Carlo cross-check of the pairwise LHS.
  if (opt.mc_samples > 0 && !opt.point_mass_lambda) {
    Rng rng(opt.mc_seed);
    const std::size_t d = xs.cols();
    const std::size_t c = ys.cols();
    std::vector<double> xbuf(d), ybuf(c);
    double s1 = 0.0, s2 = 0.0;
    for (int t = 0; t < opt.mc_samples; ++t) {
      const double lam = sample_beta(p, rng);
      const std::size_t i = rng.uniform_index(n);
      const std::size_t j = rng.uniform_index(n);
      for (std::size_t u = 0; u < d; ++u)
        xbuf[u] = lam * xs.at(i, u) + (1.0 - lam) * xs.at(j, u);
      for (std::size_t u = 0; u < c; ++u)
        ybuf[u] = lam * ys.at(i, u) + (1.0 - lam) * ys.at(j, u);
      const double v = single_loss(model, Tensor::from_flat(1, d, xbuf),
                                   Tensor::from_flat(1, c, ybuf), head);
      s1 += v;
      s2 += v * v;
    }
    const double mn = s1 / opt.mc_samples;
    const double var_pop = std::max(0.0, s2 / opt.mc_samples - mn * mn);
    const double var_sample =
        var_pop * opt.mc_samples / std::max(1, opt.mc_samples - 1);
    rep.mc_lhs = mn;
    rep.mc_se = std::sqrt(var_sample / opt.mc_samples);
    rep.mc_within_3se = std::fabs(mn - rep.lhs_pairs) <= 3.0 * rep.mc_se;
  }
  return rep;
}

void write_decomposition_csv(const DecompositionReport& rep,
                             const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.precision(17);
  os << "quantity,value\n";
  os << "l_std," << rep.l_std << "\n";
  os << "lhs_pairs," << rep.lhs_pairs << "\n";
  os << "lhs_mixture," << rep.lhs_mixture << "\n";
  for (int k = 1; k <= 4; ++k) {
    os << "rhs_K" << k << "," << rep.rhs[k - 1] << "\n";
    os << "abs_gap_K" << k << "," << rep.abs_gap[k - 1] << "\n";
    os << "a_moment_" << k << "," << rep.a_moments[k - 1] << "\n";
  }
  os << "quad_drift," << rep.quad_drift << "\n";
  os << "mc_lhs," << rep.mc_lhs << "\n";
  os << "mc_se," << rep.mc_se << "\n";
  os << "gaps_nonincreasing," << (rep.gaps_nonincreasing ? 1 : 0) << "\n";
  if (!os) throw IoError("write failure on '" + path + "'");
}

// ---------------------------------------------------------------------------
// alpha coefficients
// ---------------------------------------------------------------------------

std::vector<double> alpha_coefficients(const MlpModel& model,
                                       const Tensor& x_i, const Tensor& y_i,
                                       const Tensor& mean_x, Head head) {
  if (x_i.rows() != 1 || y_i.rows() != 1)
    throw ShapeError("alpha_coefficients: expects single-row inputs");
  Tensor logits = model.forward_detached(x_i);
  Tensor g = head_gradient_rows(logits, head).detached();
  Tensor jac = jacobian_rows(
      [&model](const Tensor& in) { return model.forward_detached(in); }, x_i);

  const std::size_t d = x_i.cols();
  const std::size_t out_dim = logits.cols();
  std::vector<double> dir(d);
  double dir_norm2 = 0.0;
  for (std::size_t t = 0; t < d; ++t) {
    dir[t] = mean_x.at(0, t) - x_i.at(0, t);
    dir_norm2 += dir[t] * dir[t];
  }
  const double dir_norm = std::sqrt(dir_norm2);

  std::vector<double> alpha(out_dim, 0.0);
  for (std::size_t j = 0; j < out_dim; ++j) {
    double row_norm2 = 0.0, dot = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      const double v = jac.at(j, t);
      row_norm2 += v * v;
      dot += v * dir[t];
    }
    const double row_norm = std::sqrt(row_norm2);
    const double denom = row_norm * dir_norm;
    const double cosine = (denom == 0.0) ? 0.0 : dot / denom;
    alpha[j] = (g.at(0, j) - y_i.at(0, j)) * cosine;
  }
  return alpha;
}

AlphaTrace alpha_trace_point(const MlpModel& model, const Tensor& probe_x,
                             const Tensor& probe_y, const Tensor& mean_x,
                             std::uint64_t iteration, Head head) {
  AlphaTrace t;
  t.iteration = iteration;
  t.min_alpha = std::numeric_limits<double>::infinity();
  std::size_t negatives = 0, count = 0;
  for (std::size_t i = 0; i < probe_x.rows(); ++i) {
    const auto alpha = alpha_coefficients(model, probe_x.row_detached(i),
                                          probe_y.row_detached(i), mean_x,
                                          head);
    for (double a : alpha) {
      t.min_alpha = std::min(t.min_alpha, a);
      if (a < 0.0) ++negatives;
      ++count;
    }
  }
  t.frac_negative =
      count == 0 ? 0.0 : static_cast<double>(negatives) / count;
  return t;
}

void write_alpha_trace_csv(const std::vector<AlphaTrace>& trace,
                           const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.precision(17);
  os << "iteration,min_alpha,frac_negative\n";
  for (const auto& t : trace)
    os << t.iteration << "," << t.min_alpha << "," << t.frac_negative << "\n";
  if (!os) throw IoError("write failure on '" + path + "'");
}

// ---------------------------------------------------------------------------
// bound calculators
// ---------------------------------------------------------------------------

void validate(const BoundInputs& b) {
  if (!(b.lipschitz_A > 0.0) || !(b.data_radius > 0.0) || !(b.n > 0.0) ||
      !(b.uniform_bound > 0.0) || !(b.xi > 0.0))
    throw ConfigError("bound inputs must be positive");
  if (!(b.delta > 0.0 && b.delta < 1.0))
    throw ConfigError("delta must be in (0, 1)");
  if (b.gamma < 0.0 || b.eta < 0.0 || b.eta_hat < 0.0)
    throw ConfigError("gamma, eta, eta_hat must be >= 0");
}

double bound_mixupe(const BoundInputs& b) {
  validate(b);
  const double complexity = 2.0 * b.eta_hat * b.eta * b.lipschitz_A *
                            b.gamma * b.data_radius /
                            (std::sqrt(b.n) * (1.0 + b.lipschitz_A));
  const double confidence =
      b.uniform_bound * std::sqrt(std::log(1.0 / b.delta) / (2.0 * b.n));
  return b.eta_hat * b.empirical_l_mix + complexity + confidence;
}

BoundComparison bound_compare(const BoundInputs& b) {
  validate(b);
  BoundComparison out;
  out.mixupe_complexity = b.lipschitz_A * b.gamma * b.data_radius /
                          ((1.0 + b.lipschitz_A) * std::sqrt(b.n));
  out.vanilla_complexity =
      b.lipschitz_A * std::sqrt(b.xi * b.data_radius / b.n);
  out.shrink_condition_holds =
      b.gamma * std::sqrt(b.data_radius) <=
      (1.0 + b.lipschitz_A) * std::sqrt(b.xi);
  return out;
}

}  // namespace mixupe
