#include "fedbilevel/urs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fedbilevel {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

RegularizedObjective::RegularizedObjective(const ProblemInstance& instance,
                                           double eta)
    : instance_(&instance), eta_(eta) {
  require(std::isfinite(eta) && eta >= 0.0,
          "regularization weight eta must be finite and >= 0");
}

ModelVector RegularizedObjective::client_gradient(std::size_t clientId,
                                                  const ModelVector& x) const {
  const ModelVector gh = grad_inner(*instance_, clientId, x);
  if (eta_ == 0.0) return gh;
  return gh + eta_ * grad_outer(*instance_, clientId, x);
}

ModelVector RegularizedObjective::client_stochastic_gradient(
    std::size_t clientId, const ModelVector& x, RngStream& rng,
    const SamplingSpec& sampling) const {
  const ModelVector gf = stoch_grad(*instance_, clientId, Level::Outer, x, rng, sampling);
  const ModelVector gh = stoch_grad(*instance_, clientId, Level::Inner, x, rng, sampling);
  if (eta_ == 0.0) return gh;
  return gh + eta_ * gf;
}

double RegularizedObjective::value(const ModelVector& x) const {
  const double h = instance_->inner_value(x);
  return eta_ == 0.0 ? h : h + eta_ * instance_->outer_value(x);
}

ModelVector RegularizedObjective::gradient(const ModelVector& x) const {
  ModelVector total = ModelVector::Zero(x.size());
  for (std::size_t i = 0; i < instance_->client_count(); ++i)
    total += client_gradient(i, x);
  return total / static_cast<double>(instance_->client_count());
}

double RegularizedObjective::smoothness() const {
  return instance_->constants.lH + eta_ * instance_->constants.lF;
}

double RegularizedObjective::strong_convexity() const {
  return eta_ * instance_->constants.muF;
}

RegularizedObjective compose(const ProblemInstance& instance, double eta) {
  if (eta < 0.0) throw PreconditionError("compose: eta must be >= 0");
  return RegularizedObjective(instance, eta);
}

BgdRegularized bgd_regularized(const ProblemInstance& instance, double eta) {
  if (!instance.constants.bgd) {
    throw PreconditionError(
        "bgd_regularized: instance has no BGD metadata (G_f, G_h, B_f, B_h)");
  }
  require(eta >= 0.0, "bgd_regularized: eta must be >= 0");
  const BgdConstants& c = *instance.constants.bgd;
  const double lF = instance.constants.lF;
  const double lH = instance.constants.lH;
  BgdRegularized out;
  out.gSq = 2.0 * c.gF * c.gF + 4.0 * lF * c.bF * c.bF * c.fGap +
            2.0 * c.gH * c.gH + 4.0 * lH * c.bH * c.bH * c.hGap;
  out.bSq = std::max(4.0 * eta * lF * c.bF * c.bF, 4.0 * lH * c.bH * c.bH);
  return out;
}

std::string_view to_string(ScheduleRule rule) {
  switch (rule) {
    case ScheduleRule::FedAvgStronglyConvex: return "fedavg-sc";
    case ScheduleRule::FedAvgConvex: return "fedavg-cvx";
    case ScheduleRule::ScaffoldStronglyConvex: return "scaffold-sc";
    case ScheduleRule::ScaffoldConvex: return "scaffold-cvx";
    case ScheduleRule::Manual: return "manual";
  }
  return "manual";
}

ScheduleRule parse_schedule_rule(std::string_view name) {
  for (auto rule : {ScheduleRule::FedAvgStronglyConvex, ScheduleRule::FedAvgConvex,
                    ScheduleRule::ScaffoldStronglyConvex,
                    ScheduleRule::ScaffoldConvex, ScheduleRule::Manual}) {
    if (to_string(rule) == name) return rule;
  }
  throw PreconditionError("unknown schedule rule '" + std::string(name) +
                          "' (expected fedavg-sc, fedavg-cvx, scaffold-sc, "
                          "scaffold-cvx or manual)");
}

bool is_strongly_convex_rule(ScheduleRule rule) {
  return rule == ScheduleRule::FedAvgStronglyConvex ||
         rule == ScheduleRule::ScaffoldStronglyConvex;
}

double log_factor(double r) { return std::max(std::log(r), 1.0); }

Schedule make_schedule(ScheduleRule rule, const ProblemInstance& instance,
                       const ScheduleParams& params,
                       const ScheduleOverrides& overrides) {
  const std::size_t n = instance.client_count();
  require(n >= 1, "make_schedule: instance has no clients");
  require(params.R >= 1, "make_schedule: R must be >= 1");
  require(params.K >= 1, "make_schedule: K must be >= 1");
  require(params.S >= 1 && params.S <= n,
          "make_schedule: need 1 <= S <= N (S=" + std::to_string(params.S) +
              ", N=" + std::to_string(n) + ")");
  require(params.p >= 1.0, "make_schedule: p must be >= 1");
  require(params.Gamma >= 0.0, "make_schedule: Gamma must be >= 0");

  const double muF = instance.constants.muF;
  if (is_strongly_convex_rule(rule) && !(muF > 0.0)) {
    throw PreconditionError("schedule rule " + std::string(to_string(rule)) +
                            " requires a strongly convex outer objective, "
                            "but mu_f = 0");
  }

  Schedule s;
  s.rule = rule;
  s.K = params.K;
  s.R = params.R;
  s.S = params.S;
  s.N = n;
  s.p = params.p;
  s.Gamma = params.Gamma;
  s.gammaGlobal = overrides.gammaGlobal.value_or(std::sqrt(static_cast<double>(n)));
  require(s.gammaGlobal > 0.0, "make_schedule: gammaGlobal must be > 0");

  const bool sc = is_strongly_convex_rule(rule);
  s.a = overrides.a.value_or(sc ? 2.0 / 3.0 : 0.5);
  s.b = overrides.b.value_or(sc ? 1.0 / 3.0 : 0.25);
  if (rule != ScheduleRule::Manual) {
    require(0.0 <= s.b && s.b < s.a && s.a <= 1.0,
            "make_schedule: need 0 <= b < a <= 1");
  }

  const double horizon = static_cast<double>(params.R) + params.Gamma;
  double gammaTilde = 0.0;
  switch (rule) {
    case ScheduleRule::FedAvgStronglyConvex:
    case ScheduleRule::ScaffoldStronglyConvex:
      gammaTilde = 1.0 / (std::pow(muF, s.a) * std::pow(horizon, s.a));
      s.eta = params.p * log_factor(static_cast<double>(params.R)) /
              (std::pow(muF, s.b) * std::pow(horizon, s.b));
      break;
    case ScheduleRule::FedAvgConvex:
    case ScheduleRule::ScaffoldConvex:
      gammaTilde = 1.0 / std::pow(horizon, s.a);
      s.eta = 1.0 / std::pow(horizon, s.b);
      break;
    case ScheduleRule::Manual:
      if (!overrides.eta || !overrides.gammaLocal) {
        throw PreconditionError(
            "manual schedule needs both eta and gammaLocal overrides");
      }
      break;
  }
  if (overrides.eta) s.eta = *overrides.eta;
  require(std::isfinite(s.eta) && s.eta > 0.0, "make_schedule: eta must be > 0");
  s.gammaLocal = overrides.gammaLocal
                     ? *overrides.gammaLocal
                     : gammaTilde / (static_cast<double>(s.K) * s.gammaGlobal);
  require(std::isfinite(s.gammaLocal) && s.gammaLocal >= 0.0,
          "make_schedule: gammaLocal must be >= 0");

  const double lEta = instance.constants.lH + s.eta * instance.constants.lF;
  s.lEta = lEta;
  if (instance.constants.bgd) {
    s.bSq = bgd_regularized(instance, s.eta).bSq;
  } else {
    s.bSq = std::max(4.0 * s.eta * instance.constants.lF, 4.0 * instance.constants.lH);
    if (rule == ScheduleRule::FedAvgStronglyConvex ||
        rule == ScheduleRule::FedAvgConvex) {
      s.warnings.push_back("no BGD metadata: caps use B_f = B_h = 1");
    }
  }
  const double k = static_cast<double>(s.K);
  const double gg = s.gammaGlobal;

  switch (rule) {
    case ScheduleRule::FedAvgStronglyConvex:
    case ScheduleRule::FedAvgConvex:
      s.caps.push_back({"1/(27 K B^2 L_eta)", 1.0 / (27.0 * k * s.bSq * lEta)});
      s.caps.push_back({"1/(16 K gamma_g L_eta^2 (1+B^2))",
                        1.0 / (16.0 * k * gg * lEta * lEta * (1.0 + s.bSq))});
      break;
    case ScheduleRule::ScaffoldStronglyConvex:
      s.caps.push_back({"1/(81 K gamma_g L_eta)", 1.0 / (81.0 * k * gg * lEta)});
      s.caps.push_back({"S/(15 K gamma_g N mu_f)",
                        static_cast<double>(s.S) /
                            (15.0 * k * gg * static_cast<double>(n) * muF)});
      break;
    case ScheduleRule::ScaffoldConvex:
      s.caps.push_back({"1/(81 K gamma_g L_eta)", 1.0 / (81.0 * k * gg * lEta)});
      break;
    case ScheduleRule::Manual:
      break;
  }

  if (!s.caps.empty()) {
    if (!std::isfinite(lEta)) {
      s.caps.clear();
      s.warnings.push_back(
          "inner objective is not smooth (L_h infinite): stepsize caps not "
          "evaluated");
    } else {
      double cap = std::numeric_limits<double>::infinity();
      for (const auto& c : s.caps) cap = std::min(cap, c.value);
      if (s.gammaLocal > cap) {
        s.capsExceeded = true;
        if (overrides.enforceCaps) {
          s.warnings.push_back("gamma_l " + fmt(s.gammaLocal) +
                               " clamped to theorem cap " + fmt(cap));
          s.gammaLocal = cap;
          s.clamped = true;
        } else {
          s.warnings.push_back("gamma_l " + fmt(s.gammaLocal) +
                               " exceeds theorem cap " + fmt(cap) +
                               " (caps not enforced)");
        }
      }
    }
  }

  if (std::isfinite(lEta) && muF > 0.0) {
    if (rule == ScheduleRule::ScaffoldStronglyConvex) {
      const double need = std::max(162.0 * lEta / muF,
                                   30.0 * static_cast<double>(n) /
                                       static_cast<double>(s.S));
      if (static_cast<double>(s.R) < need)
        s.warnings.push_back("R below theorem requirement " + fmt(need));
    } else if (rule == ScheduleRule::FedAvgStronglyConvex) {
      const double need = 16.0 * lEta * lEta * (1.0 + s.bSq) / muF;
      if (static_cast<double>(s.R) < need)
        s.warnings.push_back("R below theorem requirement " + fmt(need));
    }
    if (sc) s.complexityE = lEta * lEta * s.bSq / muF;
  }

  s.gammaTilde = k * gg * s.gammaLocal;
  if (muF > 0.0 && rule != ScheduleRule::FedAvgConvex &&
      rule != ScheduleRule::ScaffoldConvex) {
    const double contraction = s.eta * muF * s.gammaTilde / 2.0;
    if (contraction >= 1.0) {
      s.theta = std::numeric_limits<double>::infinity();
      s.warnings.push_back(
          "eta mu_f gammaTilde / 2 >= 1: averaged iterate reduces to the last "
          "iterate");
    } else {
      s.theta = 1.0 / (1.0 - contraction);
    }
  } else {
    s.theta = 1.0;
  }
  return s;
}

WeightedAverage::WeightedAverage(double theta, Eigen::Index dimension)
    : theta_(theta), mean_(ModelVector::Zero(dimension)) {
  require(theta >= 1.0, "weighted average: theta must be >= 1");
}

void WeightedAverage::update(const ModelVector& xPrev) {
  require(xPrev.size() == mean_.size(), "weighted average: dimension mismatch");
  ratio_ = count_ == 0 ? 1.0 : 1.0 + ratio_ / theta_;
  ++count_;
  mean_ += (xPrev - mean_) / ratio_;
}

WeightedAverage wavg_update(WeightedAverage state, const ModelVector& xPrev) {
  state.update(xPrev);
  return state;
}

BoundReport theorem1_bounds(const TheoremBoundInputs& in, double eta) {
  require(eta > 0.0, "theorem1_bounds: eta must be > 0");
  require(in.errEta >= 0.0 && std::isfinite(in.errEta),
          "theorem1_bounds: errEta must be finite and >= 0");
  require(in.M > 0.0 && std::isfinite(in.M), "theorem1_bounds: M must be > 0");
  require(in.gradNormAtStar >= 0.0, "theorem1_bounds: gradient norm must be >= 0");

  BoundReport r;
  r.eta = eta;
  r.errEta = in.errEta;
  r.hGapUpper = in.errEta + eta * in.M;
  r.fGapUpper = in.errEta / eta;

  if (in.alpha && in.kappa) {
    require(*in.alpha > 0.0 && *in.kappa >= 1.0,
            "theorem1_bounds: need alpha > 0 and kappa >= 1");
    r.fGapLower = -in.gradNormAtStar *
                  std::pow(r.hGapUpper / *in.alpha, 1.0 / *in.kappa);

    if (*in.kappa == 1.0) {
      const double threshold =
          in.gradNormAtStar > 0.0 ? *in.alpha / (2.0 * in.gradNormAtStar)
                                  : std::numeric_limits<double>::infinity();
      r.caseIIIEtaThreshold = threshold;
      if (eta <= threshold) {
        r.caseIIIApplicable = true;
        r.caseIIIHGapUpper = 2.0 * in.errEta;
        r.caseIIIFGapLower = -(2.0 * in.gradNormAtStar / *in.alpha) * in.errEta;
        if (in.muF > 0.0) {
          r.caseIIIDistSqUpper = 2.0 * in.errEta / (eta * in.muF);
        } else {
          r.notes.push_back("distance bound needs mu_f > 0");
        }
      } else {
        r.notes.push_back("Case iii inapplicable: eta " + fmt(eta) +
                          " above threshold " + fmt(threshold));
      }
    } else {
      r.notes.push_back("Case iii inapplicable: needs sharpness order 1");
    }
  } else {
    r.notes.push_back("no sharpness data: Case ii and iii not evaluated");
  }
  return r;
}

}  // namespace fedbilevel
