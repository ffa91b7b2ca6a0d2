#pragma once

#include <optional>

#include "fedbilevel/problems.hpp"
#include "fedbilevel/types.hpp"

namespace fedbilevel {

/// Moore-Penrose pseudoinverse via SVD, dropping singular values below
/// 1e-12 * sigma_max.
Matrix pseudo_inverse(const Matrix& a);

/// Numerical rank with the same threshold as pseudo_inverse.
Eigen::Index numerical_rank(const Matrix& a);

/// Smallest singular value above the rank threshold.
double smallest_nonzero_singular_value(const Matrix& a);

/// Euclidean projection y - A^+(A y - b) onto {x : A x = b}. Throws if b is
/// not in range(A) to 1e-10 (relative to 1 + ||b||).
ModelVector affine_projection(const Matrix& a, const ModelVector& b,
                              const ModelVector& y);

double distance_to_affine(const AffineSolutionSet& set, const ModelVector& x);

/// Distance to X*_h using whatever ground truth the instance carries.
std::optional<double> distance_to_solution_set(const ProblemInstance& instance,
                                               const ModelVector& x);

/// Global minimizer of 0.5 u'Hu - c'u over ||u|| <= radius for symmetric H
/// (possibly indefinite). Generic case by bisection on the multiplier; the
/// hard case is completed along the bottom eigenvector.
ModelVector trust_region_solve(const Matrix& h, const ModelVector& c,
                               double radius);

enum class OuterKind {
  /// f = 0.5 ||x||^2.
  MinNorm,
  /// f = 0.5 ||x - shift||^2.
  ShiftedNorm,
  /// f = ||x||_1, exact by vertex enumeration for n <= 12.
  L1,
  /// Use the instance's own outer objective, which must be quadratic.
  Instance,
};

struct BilevelReference {
  ModelVector xStar;
  double fStar = 0.0;
  double hStar = 0.0;
  double gradNormAtStar = 0.0;
};

BilevelReference bilevel_reference(const ProblemInstance& instance,
                                   OuterKind kind = OuterKind::Instance,
                                   const ModelVector& shift = {});

struct Metrics {
  double f = 0.0;
  double h = 0.0;
  std::optional<double> fGap;
  std::optional<double> hGap;
  std::optional<double> dist;
};

/// Global f and h at x; gaps and the distance to X*_h only when the instance
/// (and, for fGap, the reference) provide them.
Metrics metrics(const ProblemInstance& instance, const ModelVector& x,
                const BilevelReference* reference = nullptr);

struct RegularizedOptimum {
  ModelVector x;
  double value = 0.0;
};

/// Global quadratic model of the client means, when every client objective
/// at the given level has one.
std::optional<QuadraticForm> global_quadratic_form(
    const ProblemInstance& instance, Level which);

/// Exact minimizer of h + eta f when both levels are quadratic and there is
/// no constraint set. Requires the regularized Hessian to be positive
/// definite.
std::optional<RegularizedOptimum> quadratic_regularized_optimum(
    const ProblemInstance& instance, double eta);

/// Exact minimizer of ||A x - b|| + (eta/2) ||x - center||^2 through its dual,
/// a convex quadratic over the unit ball.
RegularizedOptimum l2_residual_regularized_optimum(const Matrix& a,
                                                   const ModelVector& b,
                                                   const ModelVector& center,
                                                   double eta);

}  // namespace fedbilevel
