#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedbilevel/urs.hpp"
#include "test_oracles.hpp"

using namespace fedbilevel;
namespace to = testing_oracles;

namespace {

// One client, h = 0.5 x^2, f = 0.5 (x - 1)^2.
ProblemInstance scalar_instance() {
  ProblemInstance p;
  p.name = "scalar";
  p.dimension = 1;
  p.clients.push_back({LocalObjective::squared_distance(ModelVector::Constant(1, 1.0)),
                       LocalObjective::squared_distance(ModelVector::Zero(1))});
  p.constants.lF = 1;
  p.constants.lH = 1;
  p.constants.muF = 1;
  return p;
}

}  // namespace

TEST(Compose, EtaZeroIsInnerGradient) {
  const auto inst = make_overparam_ls(8, 3, 2, 0);
  const auto obj = compose(inst, 0.0);
  const ModelVector x = ModelVector::LinSpaced(8, -1, 2);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_EQ(obj.client_gradient(i, x), grad_inner(inst, i, x));
}

TEST(Compose, ScalarFormula) {
  const auto inst = scalar_instance();
  EXPECT_DOUBLE_EQ(compose(inst, 0.5).gradient(ModelVector::Constant(1, 2.0))[0], 2.5);
}

TEST(Compose, FiniteDifferences) {
  const auto inst = make_overparam_ls(6, 3, 3, 2);
  const auto obj = compose(inst, 0.3);
  std::mt19937_64 gen(0);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 20; ++k) {
    ModelVector x(6);
    for (auto& v : x) v = nd(gen);
    const ModelVector fd =
        to::finite_difference([&](const ModelVector& y) { return obj.value(y); }, x);
    EXPECT_LE((obj.gradient(x) - fd).norm(), 1e-6 * std::max(1.0, fd.norm()));
  }
}

TEST(Compose, NegativeEtaRejected) {
  EXPECT_THROW(compose(scalar_instance(), -1.0), PreconditionError);
}

TEST(BgdRegularized, ZeroCase) {
  auto inst = scalar_instance();
  inst.constants.bgd = BgdConstants{0, 0, 1, 1, 0, 0};
  EXPECT_EQ(bgd_regularized(inst, 0.5).gSq, 0.0);
}

TEST(BgdRegularized, FormulaSubstitution) {
  auto inst = scalar_instance();
  inst.constants.bgd = BgdConstants{1, 2, 1, 1, 0.5, 0};
  const auto r = bgd_regularized(inst, 0.1);
  EXPECT_DOUBLE_EQ(r.gSq, 12.0);
  EXPECT_DOUBLE_EQ(r.bSq, 4.0);
}

TEST(BgdRegularized, MonotoneInEta) {
  auto inst = scalar_instance();
  inst.constants.lF = 3;
  inst.constants.bgd = BgdConstants{1, 1, 2, 1, 0, 0};
  double prev = 0;
  for (double eta = 0; eta <= 5; eta += 0.05) {
    const double b = bgd_regularized(inst, eta).bSq;
    EXPECT_GE(b, prev);
    prev = b;
  }
}

TEST(BgdRegularized, MissingMetadataThrows) {
  EXPECT_THROW(bgd_regularized(scalar_instance(), 0.1), PreconditionError);
}

TEST(Schedule, StronglyConvexRule) {
  const auto inst = scalar_instance();
  ScheduleParams p;
  p.R = 1000;
  p.K = 1;
  p.S = 1;
  ScheduleOverrides ov;
  ov.enforceCaps = false;
  const Schedule s = make_schedule(ScheduleRule::FedAvgStronglyConvex, inst, p, ov);
  EXPECT_NEAR(s.gammaTilde, 0.01, 1e-15);
  EXPECT_NEAR(s.eta, 2 * std::log(1000.0) / 10, 1e-12);
  EXPECT_NEAR(s.eta, 1.381551, 1e-6);
  EXPECT_NEAR(s.theta, 1.006956, 1e-6);
  EXPECT_NEAR(s.gammaGlobal, 1.0, 0);  // sqrt(N) with N = 1
  EXPECT_NEAR(s.gammaLocal, 0.01, 1e-15);
}

TEST(Schedule, ConvexRule) {
  const auto inst = scalar_instance();
  ScheduleParams p;
  p.R = 10000;
  ScheduleOverrides ov;
  ov.a = 0.5;
  ov.b = 0.25;
  ov.enforceCaps = false;
  const Schedule s = make_schedule(ScheduleRule::FedAvgConvex, inst, p, ov);
  EXPECT_NEAR(s.gammaTilde, 0.01, 1e-15);
  EXPECT_NEAR(s.eta, 0.1, 1e-15);
  EXPECT_EQ(s.theta, 1.0);
}

TEST(Schedule, ClampActivates) {
  auto inst = scalar_instance();
  inst.constants.lH = 1e6;  // tiny smoothness cap
  ScheduleParams p;
  p.R = 100;
  const Schedule s = make_schedule(ScheduleRule::FedAvgStronglyConvex, inst, p);
  EXPECT_TRUE(s.clamped);
  EXPECT_TRUE(s.capsExceeded);
  double cap = std::numeric_limits<double>::infinity();
  for (const auto& c : s.caps) cap = std::min(cap, c.value);
  EXPECT_DOUBLE_EQ(s.gammaLocal, cap);
  EXPECT_LT(s.gammaLocal, 1.0 / std::pow(100.0, 2.0 / 3.0));

  ScheduleOverrides off;
  off.enforceCaps = false;
  const Schedule u = make_schedule(ScheduleRule::FedAvgStronglyConvex, inst, p, off);
  EXPECT_FALSE(u.clamped);
  EXPECT_TRUE(u.capsExceeded);
}

TEST(Schedule, StronglyConvexRuleNeedsMuF) {
  auto inst = scalar_instance();
  inst.constants.muF = 0;
  try {
    make_schedule(ScheduleRule::ScaffoldStronglyConvex, inst, ScheduleParams{});
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("scaffold-sc"), std::string::npos);
  }
}

TEST(Schedule, ParseRoundTrip) {
  for (auto r : {ScheduleRule::FedAvgStronglyConvex, ScheduleRule::FedAvgConvex,
                 ScheduleRule::ScaffoldStronglyConvex, ScheduleRule::ScaffoldConvex,
                 ScheduleRule::Manual})
    EXPECT_EQ(parse_schedule_rule(to_string(r)), r);
  EXPECT_THROW(parse_schedule_rule("nope"), PreconditionError);
}

TEST(WeightedAverage, ThetaOneIsRunningMean) {
  WeightedAverage w(1.0, 1);
  for (double x : {3.0, 5.0, 10.0}) w.update(ModelVector::Constant(1, x));
  EXPECT_NEAR(w.mean()[0], 6.0, 1e-15);
}

TEST(WeightedAverage, ThetaTwoThreeUpdates) {
  WeightedAverage w(2.0, 1);
  for (double x : {0.0, 1.0, 2.0}) w = wavg_update(w, ModelVector::Constant(1, x));
  EXPECT_NEAR(w.mean()[0], 20.0 / 14.0, 1e-15);
}

TEST(WeightedAverage, MatchesExtendedPrecisionSum) {
  WeightedAverage w(2.0, 1);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  long double num = 0, den = 0;
  for (int r = 0; r < 50; ++r) {
    const double x = nd(gen);
    w.update(ModelVector::Constant(1, x));
    const long double weight = std::pow(2.0L, r);
    num += weight * x;
    den += weight;
  }
  const double ref = static_cast<double>(num / den);
  EXPECT_LE(std::abs(w.mean()[0] - ref), 1e-12 * std::abs(ref));
}

TEST(WeightedAverage, InfiniteThetaKeepsLastIterate) {
  WeightedAverage w(std::numeric_limits<double>::infinity(), 1);
  for (double x : {1.0, 2.0, 7.0}) w.update(ModelVector::Constant(1, x));
  EXPECT_EQ(w.mean()[0], 7.0);
}

TEST(GapBounds, CaseIBounds) {
  TheoremBoundInputs in;
  in.errEta = 0.02;
  in.M = 1;
  const auto r = theorem1_bounds(in, 0.1);
  EXPECT_NEAR(r.hGapUpper, 0.12, 1e-15);
  EXPECT_NEAR(r.fGapUpper, 0.2, 1e-15);
}

TEST(GapBounds, CaseIIIDistance) {
  TheoremBoundInputs in;
  in.errEta = 0.01;
  in.M = 1;
  in.muF = 1;
  in.alpha = 1;
  in.kappa = 1;
  in.gradNormAtStar = 1;
  const auto r = theorem1_bounds(in, 0.1);
  ASSERT_TRUE(r.caseIIIApplicable);
  EXPECT_NEAR(*r.caseIIIDistSqUpper, 0.2, 1e-15);
  EXPECT_NEAR(*r.caseIIIHGapUpper, 0.02, 1e-15);
}

TEST(GapBounds, ZeroErrorCollapses) {
  TheoremBoundInputs in;
  in.errEta = 0;
  in.M = 2;
  in.muF = 1;
  in.alpha = 1;
  in.kappa = 1;
  in.gradNormAtStar = 0.5;
  const auto r = theorem1_bounds(in, 0.2);
  EXPECT_EQ(r.fGapUpper, 0.0);
  EXPECT_NEAR(r.hGapUpper, 0.4, 1e-15);
  EXPECT_EQ(*r.caseIIIDistSqUpper, 0.0);
  EXPECT_EQ(*r.caseIIIHGapUpper, 0.0);
}

TEST(GapBounds, CaseIIIInapplicableAboveThreshold) {
  TheoremBoundInputs in;
  in.errEta = 0.01;
  in.alpha = 1;
  in.kappa = 1;
  in.gradNormAtStar = 1;
  const auto r = theorem1_bounds(in, 0.9);
  EXPECT_FALSE(r.caseIIIApplicable);
  bool noted = false;
  for (const auto& n : r.notes) noted |= n.find("Case iii inapplicable") != std::string::npos;
  EXPECT_TRUE(noted);
}
