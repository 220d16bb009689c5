#pragma once

#include <functional>
#include <vector>

#include "mixupe/mixup.hpp"

namespace mixupe {

/// Nodes and weights on [0, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule mapped from [-1, 1] to [0, 1]; nodes by Newton
/// iteration on the Legendre recurrence.
QuadratureRule gauss_legendre_01(int n);

double log_beta_function(double a, double b);
double beta_pdf(double alpha, double beta, double x);

/// integral over (0,1) of fn(lambda) * Beta(alpha, beta) pdf.
double beta_expectation(const std::function<double(double)>& fn, double alpha,
                        double beta, const QuadratureRule& rule);

/// Expectation of fn(lambda) under the two-component Beta mixture
/// (a/(a+b)) Beta(a+1, b) + (b/(a+b)) Beta(b+1, a).
double mixture_expectation(const std::function<double(double)>& fn,
                           const BetaParams& p, const QuadratureRule& rule);

}  // namespace mixupe
