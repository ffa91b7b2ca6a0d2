#include <gtest/gtest.h>

#include <cmath>

#include "fedbilevel/nonconvex.hpp"
#include "fedbilevel/oracles.hpp"

using namespace fedbilevel;

namespace {

// h(x) = 0.5 (a'x - beta)^2 on one client: X*_h is the hyperplane a'x = beta.
ProblemInstance hyperplane(const ModelVector& a, double beta, std::size_t clients = 1) {
  Matrix rows(static_cast<Eigen::Index>(clients), a.size());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) rows.row(i) = a.transpose();
  return make_affine_ls_instance(rows, ModelVector::Constant(rows.rows(), beta), clients);
}

}  // namespace

TEST(OuterStep, DirectSubstitution) {
  const ModelVector y = (ModelVector(2) << 2, 0).finished();
  const ModelVector out = outer_step(y, ModelVector::Zero(2), ModelVector::Zero(2), 1.0, 0.5);
  EXPECT_EQ(out, (ModelVector(2) << 1, 0).finished());
}

TEST(OuterStep, ProjectionAtYIsGradientStep) {
  const ModelVector y = (ModelVector(2) << 1, -1).finished();
  const ModelVector g = (ModelVector(2) << 0.3, 0.2).finished();
  EXPECT_EQ(outer_step(y, g, y, 0.5, 0.1), ModelVector(y - 0.1 * g));
}

TEST(MaxOuterStep, Formula) {
  EXPECT_DOUBLE_EQ(max_outer_step(0.5, 100.0), 1.5 / (4 * 52.0));
}

TEST(InnerProjection, PointOnSolutionSetStaysPut) {
  const auto inst = make_overparam_ls(10, 4, 2, 3);
  const auto& s = *inst.groundTruth->affine;
  const ModelVector y = affine_projection(s.a, s.b, ModelVector::LinSpaced(10, -1, 1));
  InnerScheduleParams p;
  const auto r = inner_projection(inst, y, 1000, p, 5);
  EXPECT_LE((r.xEta - y).norm(), 0.05 * (1 + y.norm()));
}

TEST(InnerProjection, ZeroInnerReturnsY) {
  ProblemInstance inst = make_overparam_ls(4, 2, 1, 0);
  inst.clients[0].inner = LocalObjective::zero();
  inst.groundTruth.reset();
  const ModelVector y = (ModelVector(4) << 1, 2, 3, 4).finished();
  InnerScheduleParams p;
  p.enforceCaps = false;
  const auto r = inner_projection(inst, y, 50, p, 0);
  EXPECT_LE((r.xEta - y).norm(), 1e-12);
}

TEST(InnerProjection, ApproachesHyperplaneProjection) {
  const ModelVector a = (ModelVector(3) << 1, 2, -1).finished();
  const double beta = 2.0;
  const auto inst = hyperplane(a, beta);
  const ModelVector y = (ModelVector(3) << 3, -1, 0.5).finished();
  const ModelVector exact = y - a * (a.dot(y) - beta) / a.squaredNorm();
  InnerScheduleParams p;
  p.enforceCaps = false;
  double prev = std::numeric_limits<double>::infinity();
  for (int rounds : {10, 100, 1000, 10000}) {
    const auto r = inner_projection(inst, y, rounds, p, 1);
    const double err = (r.xEta - exact).norm();
    // What remains is the bias of the regularized minimizer, which shrinks with eta.
    const double eta = r.schedule.eta;
    const ModelVector regularized = y - a * (a.dot(y) - beta) / (a.squaredNorm() + eta);
    EXPECT_LT(err, prev) << rounds;
    EXPECT_LE(err, (regularized - exact).norm() + 2e-3) << rounds;
    prev = err;
  }
}

TEST(OuterStep, ExactProjectionsHalveDistance) {
  // X*_h = {x1 = 0}, f = 0, gamma / lambda = 0.5.
  Matrix a(1, 2);
  a << 1, 0;
  const ModelVector b = ModelVector::Zero(1);
  ModelVector y = (ModelVector(2) << 4, 1).finished();
  const ModelVector target = affine_projection(a, b, y);
  for (int t = 0; t < 10; ++t) {
    const double before = (y - target).norm();
    y = outer_step(y, ModelVector::Zero(2), affine_projection(a, b, y), 1.0, 0.5);
    EXPECT_NEAR((y - target).norm(), 0.5 * before, 1e-15);
  }
}

TEST(TwoLoop, ExactProjectionsContractAtClampedStep) {
  // The driver caps gamma at 3 lambda / 8 when L_f = 0, so the factor is 5/8.
  Matrix a(1, 2);
  a << 1, 0;
  const auto inst = make_affine_ls_instance(a, ModelVector::Zero(1), 1);
  OuterConfig c;
  c.lambda = 1.0;
  c.gamma = 0.5;
  c.T = 10;
  c.projection = ProjectionMode::ExactOracle;
  c.y0 = (ModelVector(2) << 4, 1).finished();
  const auto r = run_two_loop(inst, LocalObjective::zero(), c, 0);
  ASSERT_TRUE(r.gammaClamped);
  EXPECT_DOUBLE_EQ(r.gamma, 0.375);
  const ModelVector target = (ModelVector(2) << 0, 1).finished();
  for (std::size_t t = 1; t < r.trajectory.size(); ++t) {
    EXPECT_NEAR((r.trajectory[t] - target).norm(), 0.625 * (r.trajectory[t - 1] - target).norm(),
                1e-14);
  }
}

TEST(TwoLoop, ExactProjectionsContractAndFDecreases) {
  const auto inst = make_overparam_ls(8, 3, 1, 4);
  OuterConfig c;
  c.lambda = 0.5;
  c.T = 40;
  c.projection = ProjectionMode::ExactOracle;
  c.y0 = ModelVector::Constant(8, 2.0);
  const auto r = run_two_loop(inst, LocalObjective::zero(), c, 0);
  const double ratio = 1 - r.gamma / c.lambda;
  const double d0 = distance_to_affine(*inst.groundTruth->affine, c.y0);
  const double dT = distance_to_affine(*inst.groundTruth->affine, r.trajectory.back());
  EXPECT_LE(dT, std::pow(ratio, c.T) * d0 + 1e-12);
  for (std::size_t t = 1; t < r.iterations.size(); ++t) {
    const double f0 = *r.iterations[t - 1].F, f1 = *r.iterations[t].F;
    EXPECT_LE(f1, f0 + 1e-8 * (1 + std::abs(f0)));
  }
}

TEST(TwoLoop, SingleIteration) {
  const auto inst = make_overparam_ls(6, 2, 1, 0);
  OuterConfig c;
  c.T = 1;
  const auto r = run_two_loop(inst, LocalObjective::moreau_lsp(0.01, 0.1), c, 3);
  EXPECT_EQ(r.trajectory.size(), 2u);
  EXPECT_EQ(r.tStar, 0);
  EXPECT_EQ(r.totalInnerRounds, 1);
}

TEST(TwoLoop, GradientMappingConsistency) {
  // ||grad_hat F - grad F_exact|| <= ||e_t|| / lambda, e_t = xEta - Proj(y).
  const auto inst = make_overparam_ls(10, 4, 2, 6);
  OuterConfig c;
  c.T = 30;
  c.y0 = ModelVector::Constant(10, 0.5);
  const auto r = run_two_loop(inst, LocalObjective::moreau_lsp(0.01, 0.1), c, 8);
  for (const auto& it : r.iterations) {
    const double diff = std::abs(std::sqrt(it.gradMapNormSq) - std::sqrt(*it.exactGradMapNormSq));
    EXPECT_LE(diff, *it.projectionError / c.lambda + 1e-12);
  }
}

TEST(TwoLoop, RoundsFollowSchedule) {
  const auto inst = make_overparam_ls(6, 2, 2, 0);
  OuterConfig c;
  c.T = 12;
  const auto r = run_two_loop(inst, LocalObjective::moreau_lsp(0.01, 0.1), c, 1);
  long long total = 0;
  for (const auto& it : r.iterations) {
    EXPECT_EQ(it.rounds, std::max(it.t, 1));
    total += it.rounds;
  }
  EXPECT_EQ(r.totalInnerRounds, total);
  EXPECT_EQ(total, 12 * 13 / 2);
}

TEST(TwoLoop, OversizedStepIsClamped) {
  const auto inst = make_overparam_ls(6, 2, 1, 0);
  OuterConfig c;
  c.T = 2;
  c.gamma = 10.0;
  const auto r = run_two_loop(inst, LocalObjective::moreau_lsp(0.01, 0.1), c, 1);
  EXPECT_TRUE(r.gammaClamped);
  EXPECT_DOUBLE_EQ(r.gamma, max_outer_step(0.5, 100.0));
}

TEST(TwoLoop, ExactModeNeedsAffineGroundTruth) {
  auto inst = make_overparam_ls(6, 2, 1, 0);
  inst.groundTruth.reset();
  OuterConfig c;
  c.projection = ProjectionMode::ExactOracle;
  EXPECT_THROW(run_two_loop(inst, LocalObjective::zero(), c, 0), PreconditionError);
}
