#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedbilevel/centralized.hpp"
#include "test_oracles.hpp"

using namespace fedbilevel;

namespace {

// Single client with h = 0.5 (x - ch)' Hh (x - ch), f = 0.5 (x - cf)' Hf (x - cf).
ProblemInstance quad_instance(const Matrix& hh, const ModelVector& ch, const Matrix& hf,
                              const ModelVector& cf) {
  ProblemInstance p;
  p.name = "quad";
  p.dimension = hh.rows();
  p.clients.push_back({LocalObjective::quadratic(hf, cf), LocalObjective::quadratic(hh, ch)});
  p.constants.lH = Eigen::SelfAdjointEigenSolver<Matrix>(hh).eigenvalues().maxCoeff();
  p.constants.lF = Eigen::SelfAdjointEigenSolver<Matrix>(hf).eigenvalues().maxCoeff();
  p.constants.muF = Eigen::SelfAdjointEigenSolver<Matrix>(hf).eigenvalues().minCoeff();
  return p;
}

ModelVector closed_form_minimizer(const ProblemInstance& p, double eta) {
  const auto& qh = std::get<QuadraticData>(p.clients[0].inner.payload());
  const auto& qf = std::get<QuadraticData>(p.clients[0].outer.payload());
  const Matrix h = qh.hessian + eta * qf.hessian;
  return h.ldlt().solve(qh.hessian * qh.center + eta * qf.hessian * qf.center);
}

}  // namespace

TEST(AgmConvex, BoundFormula) {
  // L_h = L_f = 1, eta = 0.5, ||x0 - x*|| = 2, K = 9.
  const auto p = quad_instance(Matrix::Identity(1, 1), ModelVector::Zero(1),
                               Matrix::Identity(1, 1), ModelVector::Zero(1));
  const RegularizedObjective obj(p, 0.5);
  const auto r = run_agm_convex(obj, ModelVector::Constant(1, 2.0), 9, ModelVector::Zero(1));
  EXPECT_NEAR(*r.errEtaBound, 0.12, 1e-15);
}

TEST(AgmConvex, ConvergesOnScalarQuadratic) {
  // f_eta(x) = 0.5 (x - 3)^2 realized as h = 0.5 (x - 3)^2, eta -> f = 0.
  ProblemInstance p = quad_instance(Matrix::Identity(1, 1), ModelVector::Constant(1, 3.0),
                                    Matrix::Identity(1, 1), ModelVector::Zero(1));
  p = with_outer(p, LocalObjective::zero());
  const auto r = run_agm_convex(RegularizedObjective(p, 1.0), ModelVector::Zero(1), 200);
  EXPECT_NEAR(r.xHat[0], 3.0, 1e-8);
}

TEST(AgmConvex, EtaZeroSolvesInnerProblem) {
  Matrix hh(2, 2);
  hh << 2, 0.5, 0.5, 1;
  const ModelVector ch = (ModelVector(2) << 1, -1).finished();
  const auto p = quad_instance(hh, ch, Matrix::Identity(2, 2), ModelVector::Zero(2));
  const auto r = run_agm_convex(RegularizedObjective(p, 0.0), ModelVector::Zero(2), 500);
  EXPECT_LE((r.xHat - ch).norm(), 1e-8);
}

TEST(AgmStronglyConvex, DegenerateConditionNumber) {
  // L_h = 0 so kappa_eta = 1: the contraction factor is zero.
  const auto p = quad_instance(Matrix::Zero(1, 1), ModelVector::Zero(1),
                               Matrix::Identity(1, 1), ModelVector::Constant(1, 2.0));
  const RegularizedObjective obj(p, 1.0);
  const auto r = run_agm_strongly_convex(obj, ModelVector::Zero(1), 1, ModelVector::Constant(1, 2.0));
  EXPECT_EQ(*r.errEtaBound, 0.0);
  EXPECT_NEAR(r.xHat[0], 2.0, 1e-15);
}

TEST(AgmStronglyConvex, GeometricDecrease) {
  Matrix hh(2, 2);
  hh << 3, 1, 1, 2;
  const ModelVector ch = (ModelVector(2) << 1, 2).finished();
  const auto p = quad_instance(hh, ch, Matrix::Identity(2, 2), ModelVector::Zero(2));
  const double eta = 0.5;
  const RegularizedObjective obj(p, eta);
  const ModelVector xStar = closed_form_minimizer(p, eta);
  const double fStar = obj.value(xStar);
  const double kappa = obj.smoothness() / obj.strong_convexity();
  const double rate = 1 - 1 / std::sqrt(kappa);
  const ModelVector x0 = ModelVector::Constant(2, 5.0);
  const double start = obj.value(x0) - fStar + 0.5 * obj.strong_convexity() * (x0 - xStar).squaredNorm();
  double prevBound = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 50; ++k) {
    const auto r = run_agm_strongly_convex(obj, x0, k, xStar);
    const double gap = obj.value(r.xHat) - fStar;
    EXPECT_LE(gap, start * std::pow(rate, k) + 1e-14) << "k=" << k;
    EXPECT_LT(*r.errEtaBound, prevBound);
    prevBound = *r.errEtaBound;
  }
}

TEST(AgmStronglyConvex, RequiresMuF) {
  const auto p = quad_instance(Matrix::Identity(1, 1), ModelVector::Zero(1), Matrix::Zero(1, 1),
                               ModelVector::Zero(1));
  EXPECT_THROW(run_agm_strongly_convex(RegularizedObjective(p, 1.0), ModelVector::Zero(1), 5),
               PreconditionError);
}

TEST(MeasureErrEta, AtMinimizerIsZero) {
  const auto p = quad_instance(Matrix::Identity(2, 2), ModelVector::Ones(2),
                               Matrix::Identity(2, 2), ModelVector::Zero(2));
  const RegularizedObjective obj(p, 0.7);
  EXPECT_EQ(measure_err_eta(obj, closed_form_minimizer(p, 0.7)), 0.0);
}

TEST(MeasureErrEta, ScalarValue) {
  // f_eta(x) = 0.5 x^2.
  const auto p = with_outer(quad_instance(Matrix::Identity(1, 1), ModelVector::Zero(1),
                                          Matrix::Identity(1, 1), ModelVector::Zero(1)),
                            LocalObjective::zero());
  EXPECT_NEAR(measure_err_eta(RegularizedObjective(p, 1.0), ModelVector::Constant(1, 0.1)), 0.005,
              1e-15);
}

TEST(MeasureErrEta, ClosedFormAgreesWithAcceleratedSolve) {
  Matrix hh(3, 3);
  hh << 2, 0.3, 0, 0.3, 1, 0.2, 0, 0.2, 0.5;
  const auto p = quad_instance(hh, ModelVector::LinSpaced(3, -1, 1), Matrix::Identity(3, 3),
                               ModelVector::Ones(3));
  const RegularizedObjective obj(p, 0.3);
  const double exact = obj.value(closed_form_minimizer(p, 0.3));
  ModelVector x = ModelVector::Zero(3);
  x = run_agm_strongly_convex(obj, x, 2000).xHat;
  EXPECT_LE(std::abs(obj.value(x) - exact), 1e-10);
  EXPECT_LE(std::abs(solve_regularized(obj).value - exact), 1e-10);
}

TEST(SolveRegularized, GenericFallbackOnLogisticInner) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  Matrix u(20, 3);
  for (auto i = 0; i < u.size(); ++i) u.data()[i] = nd(gen);
  ModelVector lab(20);
  for (auto& v : lab) v = nd(gen) > 0 ? 1 : -1;
  ProblemInstance p;
  p.name = "logistic";
  p.dimension = 3;
  p.clients.push_back({LocalObjective::squared_distance(ModelVector::Zero(3)),
                       LocalObjective::logistic(u, lab, 0.0)});
  p.constants.lF = 1;
  p.constants.muF = 1;
  p.constants.lH = p.clients[0].inner.smoothness(3);
  const RegularizedObjective obj(p, 0.2);
  const auto opt = solve_regularized(obj);
  EXPECT_LE(obj.gradient(opt.x).norm(), 1e-10);
}

TEST(GradientDescent, TrajectoryLength) {
  const auto p = quad_instance(Matrix::Identity(2, 2), ModelVector::Ones(2),
                               Matrix::Identity(2, 2), ModelVector::Zero(2));
  std::vector<ModelVector> traj;
  gradient_descent(RegularizedObjective(p, 1.0), ModelVector::Zero(2), 0.1, 7, &traj);
  EXPECT_EQ(traj.size(), 8u);
}
