#include "fedbilevel/prox.hpp"

#include <cmath>
#include <string>

namespace fedbilevel::prox {
namespace {

void check_mu(double mu) {
  require(mu > 0.0 && std::isfinite(mu), "prox: mu must be positive");
}

void check_lsp_regime(double mu, double epsilon) {
  check_mu(mu);
  require(epsilon > 0.0, "prox_lsp: epsilon must be positive");
  if (std::sqrt(mu) > epsilon) {
    throw PreconditionError(
        "prox_lsp: closed form requires sqrt(mu) <= epsilon (mu=" +
        std::to_string(mu) + ", epsilon=" + std::to_string(epsilon) + ")");
  }
}

double prox_lsp_scalar(double t, double mu, double epsilon) {
  const double a = std::abs(t);
  if (a <= mu / epsilon) return 0.0;
  const double root = std::sqrt((a + epsilon) * (a + epsilon) - 4.0 * mu);
  return std::copysign((a - epsilon + root) / 2.0, t);
}

}  // namespace

ModelVector soft_threshold(const ModelVector& x, double mu) {
  check_mu(mu);
  ModelVector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double shrunk = std::abs(x[i]) - mu;
    out[i] = shrunk > 0.0 ? std::copysign(shrunk, x[i]) : 0.0;
  }
  return out;
}

double huber(double t, double mu) {
  const double a = std::abs(t);
  return a <= mu ? t * t / (2.0 * mu) : a - mu / 2.0;
}

Envelope moreau_l1(const ModelVector& x, double mu) {
  check_mu(mu);
  Envelope env;
  for (Eigen::Index i = 0; i < x.size(); ++i) env.value += huber(x[i], mu);
  env.gradient = (x - soft_threshold(x, mu)) / mu;
  return env;
}

double lsp_value(const ModelVector& x, double epsilon) {
  require(epsilon > 0.0, "lsp_value: epsilon must be positive");
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    total += std::log1p(std::abs(x[i]) / epsilon);
  return total;
}

ModelVector prox_lsp(const ModelVector& x, double mu, double epsilon) {
  check_lsp_regime(mu, epsilon);
  ModelVector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out[i] = prox_lsp_scalar(x[i], mu, epsilon);
  return out;
}

Envelope moreau_lsp(const ModelVector& x, double mu, double epsilon) {
  const ModelVector p = prox_lsp(x, mu, epsilon);
  const ModelVector diff = x - p;
  Envelope env;
  env.value = lsp_value(p, epsilon) + diff.squaredNorm() / (2.0 * mu);
  env.gradient = diff / mu;
  return env;
}

}  // namespace fedbilevel::prox
