#pragma once

#include "fedbilevel/types.hpp"

namespace fedbilevel::prox {

/// Value and gradient of a Moreau envelope.
struct Envelope {
  double value = 0.0;
  ModelVector gradient;
};

/// Componentwise sign(x) * max(0, |x| - mu): the prox of mu * ||.||_1.
ModelVector soft_threshold(const ModelVector& x, double mu);

/// Huber function H_mu(t): t^2/(2 mu) for |t| <= mu, |t| - mu/2 otherwise.
double huber(double t, double mu);

/// Moreau envelope of ||.||_1 with parameter mu. The value is the sum of
/// Huber terms; the gradient is (x - soft_threshold(x, mu)) / mu.
Envelope moreau_l1(const ModelVector& x, double mu);

/// Log-sum penalty sum_i log(1 + |x_i| / epsilon).
double lsp_value(const ModelVector& x, double epsilon);

/// Closed-form prox of the log-sum penalty with parameter mu.
///
/// Only valid in the regime sqrt(mu) <= epsilon, where the scalar
/// subproblem is strictly convex on each half-line; outside it this throws.
ModelVector prox_lsp(const ModelVector& x, double mu, double epsilon);

/// Moreau envelope of the log-sum penalty:
/// value = lsp(p) + ||x - p||^2 / (2 mu), gradient = (x - p) / mu, p = prox.
Envelope moreau_lsp(const ModelVector& x, double mu, double epsilon);

}  // namespace fedbilevel::prox
