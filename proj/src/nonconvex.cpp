#include "fedbilevel/nonconvex.hpp"

#include <algorithm>
#include <string>

#include "fedbilevel/oracles.hpp"

namespace fedbilevel {

double max_outer_step(double lambda, double lF) {
  require(lambda > 0.0, "lambda must be > 0");
  require(lF >= 0.0, "L_f must be >= 0");
  return 3.0 * lambda / (4.0 * (lF * lambda + 2.0));
}

InnerProjectionResult inner_projection(const ProblemInstance& instance,
                                       const ModelVector& y, int rounds,
                                       const InnerScheduleParams& params,
                                       std::uint64_t seed,
                                       const ModelVector& warmStart) {
  require(rounds >= 1, "inner_projection: R_t must be >= 1");
  require(y.size() == instance.dimension, "inner_projection: y has the wrong dimension");

  // g(x) = 0.5 ||x - y||^2 is 1-smooth and 1-strongly convex.
  const ProblemInstance inner =
      with_outer(instance, LocalObjective::squared_distance(y));

  ScheduleParams sp;
  sp.R = rounds;
  sp.K = params.K;
  sp.S = params.S == 0 ? inner.client_count() : params.S;
  sp.p = params.p;
  ScheduleOverrides ov;
  ov.a = params.a;
  ov.b = params.b;
  ov.gammaGlobal = params.gammaGlobal;
  ov.enforceCaps = params.enforceCaps;

  InnerProjectionResult out;
  out.schedule = make_schedule(ScheduleRule::FedAvgStronglyConvex, inner, sp, ov);

  TrainingOptions options;
  options.method = Method::FedAvg;
  options.oracle = params.oracle;
  options.seed = seed;
  options.workers = params.workers;
  options.x0 = warmStart.size() == y.size() ? warmStart : y;
  TrainingResult run = run_training(inner, out.schedule, options);

  out.xEta = std::move(run.xBar);
  out.rounds = rounds;
  if (instance.groundTruth)
    out.innerHGap = instance.inner_value(out.xEta) - instance.groundTruth->hStar;
  return out;
}

ModelVector outer_step(const ModelVector& y, const ModelVector& gradF,
                       const ModelVector& xEta, double lambda, double gamma) {
  require(lambda > 0.0, "outer_step: lambda must be > 0");
  require(y.size() == gradF.size() && y.size() == xEta.size(),
          "outer_step: dimension mismatch");
  return y - gamma * (gradF + (y - xEta) / lambda);
}

TwoLoopResult run_two_loop(const ProblemInstance& instance,
                           const LocalObjective& fOuter,
                           const OuterConfig& config, std::uint64_t seed) {
  instance.validate();
  require(config.T >= 1, "run_two_loop: T must be >= 1");
  require(config.lambda > 0.0, "run_two_loop: lambda must be > 0");
  require(config.gamma >= 0.0, "run_two_loop: gamma must be >= 0");

  const Eigen::Index n = instance.dimension;
  const double lF = fOuter.smoothness(n);
  const double cap = max_outer_step(config.lambda, lF);

  TwoLoopResult result;
  result.gamma = config.gamma == 0.0 ? cap : config.gamma;
  if (result.gamma > cap) {
    result.gamma = cap;
    result.gammaClamped = true;
  }

  const bool haveAffine = instance.groundTruth && instance.groundTruth->affine;
  if (config.projection == ProjectionMode::ExactOracle && !haveAffine) {
    throw PreconditionError(
        "run_two_loop: exact projections need an affine ground truth");
  }
  auto exact_projection = [&](const ModelVector& v) {
    return affine_projection(instance.groundTruth->affine->a,
                             instance.groundTruth->affine->b, v);
  };

  ModelVector y = config.y0.size() == 0 ? ModelVector(ModelVector::Zero(n)) : config.y0;
  require(y.size() == n, "run_two_loop: y0 has the wrong dimension");
  result.trajectory.push_back(y);
  ModelVector previous;

  for (int t = 1; t <= config.T; ++t) {
    const int rounds = std::max(t, 1);
    TwoLoopIterate it;
    it.t = t;
    it.rounds = rounds;

    ModelVector xEta;
    if (config.projection == ProjectionMode::ExactOracle) {
      xEta = exact_projection(y);
      if (instance.groundTruth)
        it.innerHGap = instance.inner_value(xEta) - instance.groundTruth->hStar;
    } else {
      const std::uint64_t innerSeed = mix_seed(
          seed, static_cast<std::uint64_t>(t), 0,
          static_cast<std::uint64_t>(StreamPurpose::InnerRun));
      InnerProjectionResult proj = inner_projection(
          instance, y, rounds, config.inner, innerSeed,
          config.warmStart ? previous : ModelVector());
      xEta = std::move(proj.xEta);
      it.innerHGap = proj.innerHGap;
    }
    result.totalInnerRounds += rounds;

    const ModelVector gradF = fOuter.gradient(y);
    it.gradMapNormSq = (gradF + (y - xEta) / config.lambda).squaredNorm();
    if (haveAffine) {
      const ModelVector py = exact_projection(y);
      it.exactGradMapNormSq = (gradF + (y - py) / config.lambda).squaredNorm();
      it.distToXh = distance_to_affine(*instance.groundTruth->affine, xEta);
      it.F = fOuter.value(y) + (y - py).squaredNorm() / config.lambda;
      it.projectionError = (xEta - py).norm();
    } else {
      it.distToXh = distance_to_solution_set(instance, xEta);
    }

    y = outer_step(y, gradF, xEta, config.lambda, result.gamma);
    if (!all_finite(y)) throw DivergenceError("outer iterate is not finite", t);
    result.trajectory.push_back(y);
    result.projections.push_back(xEta);
    result.iterations.push_back(it);
    previous = std::move(xEta);
  }

  double total = 0.0;
  for (const auto& it : result.iterations) total += it.gradMapNormSq;
  result.meanGradMapNormSq = total / static_cast<double>(result.iterations.size());

  RngStream draw = RngStream::derive(seed, 0, 0, StreamPurpose::OuterSampling);
  const std::size_t pick = draw.uniform_index(result.iterations.size());
  result.tStar = result.iterations[pick].t - 1;
  result.gradMapNormSqAtTStar = result.iterations[pick].gradMapNormSq;
  result.exactGradMapNormSqAtTStar = result.iterations[pick].exactGradMapNormSq;
  return result;
}

}  // namespace fedbilevel
