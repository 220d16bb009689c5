#include "mixupe/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mixupe {

QuadratureRule gauss_legendre_01(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre_01: n >= 1");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);

  // Roots of P_n on (-1, 1); symmetric, so only the lower half is solved.
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    // Chebyshev-like initial guess.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 64; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // Map [-1,1] -> [0,1].
    rule.nodes[i] = 0.5 * (1.0 - x);  // x descending -> nodes ascending
    rule.weights[i] = 0.5 * w;
    rule.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    rule.weights[n - 1 - i] = 0.5 * w;
  }
  return rule;
}

double log_beta_function(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double beta_pdf(double alpha, double beta, double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  const double lp = (alpha - 1.0) * std::log(x) +
                    (beta - 1.0) * std::log1p(-x) -
                    log_beta_function(alpha, beta);
  return std::exp(lp);
}

double beta_expectation(const std::function<double(double)>& fn, double alpha,
                        double beta, const QuadratureRule& rule) {
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double lam = rule.nodes[i];
    acc += rule.weights[i] * fn(lam) * beta_pdf(alpha, beta, lam);
  }
  return acc;
}

double mixture_expectation(const std::function<double(double)>& fn,
                           const BetaParams& p, const QuadratureRule& rule) {
  const double s = p.alpha + p.beta;
  const double w1 = p.alpha / s;
  const double w2 = p.beta / s;
  return w1 * beta_expectation(fn, p.alpha + 1.0, p.beta, rule) +
         w2 * beta_expectation(fn, p.beta + 1.0, p.alpha, rule);
}

}  // namespace mixupe
