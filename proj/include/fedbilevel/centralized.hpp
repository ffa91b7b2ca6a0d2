#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "fedbilevel/oracles.hpp"
#include "fedbilevel/urs.hpp"

namespace fedbilevel {

/// Called with (k, x_k) after iteration k = 1..K.
using IterateHook = std::function<void(int, const ModelVector&)>;

struct AgmResult {
  ModelVector xHat;
  /// A-priori bound on f_eta(xHat) - f_eta*, when a reference minimizer was
  /// available to evaluate it.
  std::optional<double> errEtaBound;
  int iterations = 0;
};

/// FISTA with step 1/L_eta on f_eta, projected onto the instance's feasible
/// set when it has one. The bound is 2 L_eta ||x0 - x*_eta||^2 / (K+1)^2.
AgmResult run_agm_convex(const RegularizedObjective& objective,
                         const ModelVector& x0, int iterations,
                         const std::optional<ModelVector>& xStarEta = std::nullopt,
                         const IterateHook& hook = {});

/// Constant-momentum scheme for the eta mu_f strongly convex case with
/// kappa_eta = (eta L_f + L_h) / (eta mu_f). The bound is
/// (1 - 1/sqrt(kappa_eta))^K (f_eta(x0) - f_eta* + (eta mu_f/2)||x0 - x*_eta||^2).
AgmResult run_agm_strongly_convex(
    const RegularizedObjective& objective, const ModelVector& x0,
    int iterations, const std::optional<ModelVector>& xStarEta = std::nullopt,
    const IterateHook& hook = {});

/// Plain gradient descent. The step is applied to each client gradient
/// before averaging, so the iteration coincides bit for bit with a
/// full-participation one-step federated round.
ModelVector gradient_descent(const RegularizedObjective& objective,
                             const ModelVector& x0, double step, int iterations,
                             std::vector<ModelVector>* trajectory = nullptr);

/// Minimizer of f_eta: closed form for unconstrained quadratics, the dual
/// oracle for the l2-residual family, otherwise accelerated gradient run to
/// a 1e-12 gradient-mapping tolerance. Throws if that run does not converge.
RegularizedOptimum solve_regularized(const RegularizedObjective& objective,
                                     int maxIterations = 200000);

/// f_eta(x) - f_eta*, floored at 0 within solver tolerance. Throws if the
/// value is clearly negative, which means f_eta* was not accurate.
double measure_err_eta(const RegularizedObjective& objective,
                       const ModelVector& candidate);
double measure_err_eta(const RegularizedObjective& objective,
                       const ModelVector& candidate,
                       const RegularizedOptimum& optimum);

}  // namespace fedbilevel
