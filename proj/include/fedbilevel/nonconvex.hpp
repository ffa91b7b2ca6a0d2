#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fedbilevel/fedsim.hpp"
#include "fedbilevel/problems.hpp"
#include "fedbilevel/urs.hpp"

namespace fedbilevel {

/// Parameters of the federated projection solve. The inner objective is
/// h + eta g with g(x) = 0.5 ||x - y||^2, scheduled by the strongly convex
/// R-FedAvg rule with mu = L = 1.
struct InnerScheduleParams {
  double p = 2.0;
  double a = 2.0 / 3.0;
  double b = 1.0 / 3.0;
  int K = 1;
  /// Participating clients per round; 0 means all.
  std::size_t S = 0;
  std::optional<double> gammaGlobal;
  bool enforceCaps = true;
  GradientOracle oracle;
  std::size_t workers = 1;
};

enum class ProjectionMode {
  /// Inexact projection by R-FedAvg (the scheme itself).
  Federated,
  /// Exact projection from the instance's affine ground truth.
  ExactOracle,
};

struct OuterConfig {
  double lambda = 0.5;
  /// Outer step; 0 selects the largest admissible value.
  double gamma = 0.0;
  int T = 1;
  InnerScheduleParams inner;
  ProjectionMode projection = ProjectionMode::Federated;
  /// Start inner run t at the previous inexact projection.
  bool warmStart = true;
  /// Starting point y^0; zeros when empty.
  ModelVector y0;
};

struct InnerProjectionResult {
  ModelVector xEta;
  std::optional<double> innerHGap;
  int rounds = 0;
  Schedule schedule;
};

/// Largest outer step the analysis admits: 3 lambda / (4 (L_f lambda + 2)).
double max_outer_step(double lambda, double lF);

/// Inexact projection of y onto X*_h by R_t rounds of R-FedAvg.
InnerProjectionResult inner_projection(const ProblemInstance& instance,
                                       const ModelVector& y, int rounds,
                                       const InnerScheduleParams& params,
                                       std::uint64_t seed,
                                       const ModelVector& warmStart = {});

/// y - gamma (grad f(y) + (y - xEta) / lambda).
ModelVector outer_step(const ModelVector& y, const ModelVector& gradF,
                       const ModelVector& xEta, double lambda, double gamma);

struct TwoLoopIterate {
  int t = 0;
  int rounds = 0;
  /// ||grad f(y) + (y - xEta)/lambda||^2 at the pre-step iterate y^t.
  double gradMapNormSq = 0.0;
  std::optional<double> exactGradMapNormSq;
  /// dist(xEta, X*_h).
  std::optional<double> distToXh;
  /// f(y) + dist(y, X*_h)^2 / lambda.
  std::optional<double> F;
  std::optional<double> innerHGap;
  /// ||xEta - Proj(y)||.
  std::optional<double> projectionError;
};

struct TwoLoopResult {
  /// y^0 .. y^T.
  std::vector<ModelVector> trajectory;
  std::vector<TwoLoopIterate> iterations;
  std::vector<ModelVector> projections;
  int tStar = 0;
  double gradMapNormSqAtTStar = 0.0;
  std::optional<double> exactGradMapNormSqAtTStar;
  /// Expectation over the uniform draw of T*.
  double meanGradMapNormSq = 0.0;
  long long totalInnerRounds = 0;
  double gamma = 0.0;
  bool gammaClamped = false;
};

/// Outer iterations t = 1..T with R_t = max(t, 1) inner rounds each.
TwoLoopResult run_two_loop(const ProblemInstance& instance,
                           const LocalObjective& fOuter,
                           const OuterConfig& config, std::uint64_t seed);

}  // namespace fedbilevel
