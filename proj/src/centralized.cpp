#include "fedbilevel/centralized.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>

namespace fedbilevel {
namespace {

ModelVector project(const ProblemInstance& instance, const ModelVector& x) {
  return instance.feasibleSet ? instance.feasibleSet->project(x) : x;
}

double checked_smoothness(const RegularizedObjective& objective) {
  const double l = objective.smoothness();
  if (!(l > 0.0) || !std::isfinite(l)) {
    throw PreconditionError(
        "accelerated gradient needs a finite positive smoothness constant "
        "L_h + eta L_f");
  }
  return l;
}

// Shared (A, b) and common outer center when every client holds the same
// l2 residual and the same 0.5 ||x - c||^2; otherwise nothing.
std::optional<std::pair<const L2ResidualData*, ModelVector>> l2_residual_shape(
    const ProblemInstance& instance) {
  const L2ResidualData* first = nullptr;
  std::optional<ModelVector> center;
  for (const auto& c : instance.clients) {
    const auto* inner = std::get_if<L2ResidualData>(&c.inner.payload());
    const auto* outer = std::get_if<QuadraticData>(&c.outer.payload());
    if (!inner || !outer) return std::nullopt;
    const Eigen::Index n = outer->center.size();
    if (outer->hessian != Matrix::Identity(n, n)) return std::nullopt;
    if (!first) {
      first = inner;
      center = outer->center;
    } else if (inner->a != first->a || inner->b != first->b ||
               outer->center != *center) {
      return std::nullopt;
    }
  }
  if (!first || instance.feasibleSet) return std::nullopt;
  return std::make_pair(first, *center);
}

}  // namespace

AgmResult run_agm_convex(const RegularizedObjective& objective,
                         const ModelVector& x0, int iterations,
                         const std::optional<ModelVector>& xStarEta,
                         const IterateHook& hook) {
  require(iterations >= 1, "run_agm_convex: K must be >= 1");
  const double l = checked_smoothness(objective);
  const ProblemInstance& instance = objective.instance();

  ModelVector x = project(instance, x0);
  ModelVector y = x;
  double t = 1.0;
  for (int k = 0; k < iterations; ++k) {
    const ModelVector next = project(instance, y - objective.gradient(y) / l);
    const double tNext = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / tNext) * (next - x);
    x = next;
    t = tNext;
    if (hook) hook(k + 1, x);
  }

  AgmResult out;
  out.xHat = x;
  out.iterations = iterations;
  if (xStarEta) {
    const double k1 = static_cast<double>(iterations) + 1.0;
    out.errEtaBound = 2.0 * l * (x0 - *xStarEta).squaredNorm() / (k1 * k1);
  }
  return out;
}

AgmResult run_agm_strongly_convex(const RegularizedObjective& objective,
                                  const ModelVector& x0, int iterations,
                                  const std::optional<ModelVector>& xStarEta,
                                  const IterateHook& hook) {
  require(iterations >= 1, "run_agm_strongly_convex: K must be >= 1");
  const ProblemInstance& instance = objective.instance();
  const double mu = objective.strong_convexity();
  if (!(instance.constants.muF > 0.0) || !(mu > 0.0)) {
    throw PreconditionError(
        "run_agm_strongly_convex requires mu_f > 0 and eta > 0");
  }
  const double l = checked_smoothness(objective);
  const double kappa = std::max(l / mu, 1.0);
  const double sq = std::sqrt(kappa);
  const double beta = (sq - 1.0) / (sq + 1.0);

  ModelVector x = project(instance, x0);
  ModelVector y = x;
  for (int k = 0; k < iterations; ++k) {
    const ModelVector next = project(instance, y - objective.gradient(y) / l);
    y = next + beta * (next - x);
    x = next;
    if (hook) hook(k + 1, x);
  }

  AgmResult out;
  out.xHat = x;
  out.iterations = iterations;
  if (xStarEta) {
    const double start = objective.value(x0) - objective.value(*xStarEta) +
                         0.5 * mu * (x0 - *xStarEta).squaredNorm();
    out.errEtaBound = std::pow(1.0 - 1.0 / sq, iterations) * std::max(start, 0.0);
  }
  return out;
}

ModelVector gradient_descent(const RegularizedObjective& objective,
                             const ModelVector& x0, double step, int iterations,
                             std::vector<ModelVector>* trajectory) {
  require(iterations >= 0, "gradient_descent: iterations must be >= 0");
  const ProblemInstance& instance = objective.instance();
  const auto n = static_cast<double>(instance.client_count());
  ModelVector x = x0;
  if (trajectory) trajectory->push_back(x);
  for (int k = 0; k < iterations; ++k) {
    ModelVector sum = ModelVector::Zero(x.size());
    for (std::size_t i = 0; i < instance.client_count(); ++i)
      sum += step * objective.client_gradient(i, x);
    x -= sum / n;
    if (trajectory) trajectory->push_back(x);
  }
  return x;
}

RegularizedOptimum solve_regularized(const RegularizedObjective& objective,
                                     int maxIterations) {
  const ProblemInstance& instance = objective.instance();
  const double eta = objective.eta();

  if (auto exact = quadratic_regularized_optimum(instance, eta)) return *exact;

  if (instance.feasibleSet &&
      instance.feasibleSet->kind == FeasibleSet::Kind::Ball) {
    const auto inner = global_quadratic_form(instance, Level::Inner);
    const auto outer = global_quadratic_form(instance, Level::Outer);
    if (inner && outer) {
      const Matrix h = inner->hessian + eta * outer->hessian;
      const ModelVector c = -(inner->linear + eta * outer->linear);
      RegularizedOptimum out;
      out.x = trust_region_solve(h, c, instance.feasibleSet->radius);
      out.value = objective.value(out.x);
      return out;
    }
  }

  if (eta > 0.0) {
    if (auto shape = l2_residual_shape(instance)) {
      return l2_residual_regularized_optimum(shape->first->a, shape->first->b,
                                             shape->second, eta);
    }
  }

  // Generic fallback: accelerated gradient to a tight gradient-mapping norm.
  const double l = checked_smoothness(objective);
  const bool strong = objective.strong_convexity() > 0.0;
  ModelVector x = project(instance, ModelVector::Zero(instance.dimension));
  const double scale = std::max(1.0, objective.gradient(x).norm());
  const int chunk = 500;
  for (int done = 0; done < maxIterations; done += chunk) {
    x = strong ? run_agm_strongly_convex(objective, x, chunk).xHat
               : run_agm_convex(objective, x, chunk).xHat;
    const ModelVector mapped = project(instance, x - objective.gradient(x) / l);
    if (l * (x - mapped).norm() <= 1e-12 * scale) {
      return RegularizedOptimum{mapped, objective.value(mapped)};
    }
  }
  throw Error("solve_regularized: accelerated gradient did not reach the "
              "1e-12 tolerance within " + std::to_string(maxIterations) +
              " iterations and no exact oracle applies");
}

double measure_err_eta(const RegularizedObjective& objective,
                       const ModelVector& candidate,
                       const RegularizedOptimum& optimum) {
  const double gap = objective.value(candidate) - optimum.value;
  const double tol = 1e-10 * (1.0 + std::abs(optimum.value));
  if (gap < -tol) {
    throw Error("measure_err_eta: candidate beats the reference optimum by " +
                std::to_string(-gap) + "; reference is inaccurate");
  }
  return std::max(gap, 0.0);
}

double measure_err_eta(const RegularizedObjective& objective,
                       const ModelVector& candidate) {
  return measure_err_eta(objective, candidate, solve_regularized(objective));
}

}  // namespace fedbilevel
