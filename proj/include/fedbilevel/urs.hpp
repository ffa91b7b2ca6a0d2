#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedbilevel/problems.hpp"
#include "fedbilevel/rng.hpp"
#include "fedbilevel/types.hpp"

namespace fedbilevel {

/// f_eta = h + eta f over a problem instance. Holds a non-owning pointer;
/// the instance must outlive it.
class RegularizedObjective {
 public:
  RegularizedObjective(const ProblemInstance& instance, double eta);

  const ProblemInstance& instance() const { return *instance_; }
  double eta() const { return eta_; }

  /// grad h_i(x) + eta grad f_i(x).
  ModelVector client_gradient(std::size_t clientId, const ModelVector& x) const;
  /// Same with sampled data: the outer sample is drawn first, then the inner.
  ModelVector client_stochastic_gradient(std::size_t clientId,
                                         const ModelVector& x, RngStream& rng,
                                         const SamplingSpec& sampling) const;

  double value(const ModelVector& x) const;
  /// Mean of the client gradients in ascending client order.
  ModelVector gradient(const ModelVector& x) const;

  /// L_h + eta L_f.
  double smoothness() const;
  /// eta mu_f.
  double strong_convexity() const;

 private:
  const ProblemInstance* instance_;
  double eta_;
};

/// eta = 0 is accepted as a diagnostic (pure inner problem).
RegularizedObjective compose(const ProblemInstance& instance, double eta);

struct BgdRegularized {
  double gSq = 0.0;
  double bSq = 0.0;
};

/// Constants of the regularized gradient dissimilarity bound. Throws when the
/// instance carries no BGD metadata.
BgdRegularized bgd_regularized(const ProblemInstance& instance, double eta);

enum class ScheduleRule {
  FedAvgStronglyConvex,
  FedAvgConvex,
  ScaffoldStronglyConvex,
  ScaffoldConvex,
  Manual,
};

std::string_view to_string(ScheduleRule rule);
/// Accepts fedavg-sc, fedavg-cvx, scaffold-sc, scaffold-cvx, manual.
ScheduleRule parse_schedule_rule(std::string_view name);
bool is_strongly_convex_rule(ScheduleRule rule);

struct ScheduleParams {
  int R = 1;
  int K = 1;
  std::size_t S = 1;
  double p = 2.0;
  /// Offset: the rules are evaluated at R + Gamma.
  double Gamma = 0.0;
};

struct ScheduleOverrides {
  std::optional<double> eta;
  std::optional<double> gammaLocal;
  std::optional<double> gammaGlobal;
  std::optional<double> a;
  std::optional<double> b;
  /// Clamp gammaLocal to the theorem caps. When false the caps are still
  /// evaluated and capsExceeded is reported, but the stepsize is kept.
  bool enforceCaps = true;
};

struct StepsizeCap {
  std::string name;
  double value = 0.0;
};

struct Schedule {
  ScheduleRule rule = ScheduleRule::Manual;
  double eta = 0.0;
  double gammaLocal = 0.0;
  double gammaGlobal = 1.0;
  int K = 1;
  int R = 1;
  std::size_t S = 1;
  std::size_t N = 1;
  double a = 0.0;
  double b = 0.0;
  double p = 2.0;
  double Gamma = 0.0;

  /// Effective K gamma_g gamma_l after any clamp.
  double gammaTilde = 0.0;
  /// Weight ratio of the averaged iterate; infinite means "last iterate".
  double theta = 1.0;
  double lEta = 0.0;
  double bSq = 0.0;
  /// Reported only; never used for control flow.
  std::optional<double> complexityE;

  std::vector<StepsizeCap> caps;
  bool capsExceeded = false;
  bool clamped = false;
  std::vector<std::string> warnings;
};

/// Resolves every run hyperparameter from the generating rule. Throws
/// PreconditionError for a strongly convex rule on an instance with mu_f = 0.
Schedule make_schedule(ScheduleRule rule, const ProblemInstance& instance,
                       const ScheduleParams& params,
                       const ScheduleOverrides& overrides = {});

/// max(ln R, 1), so the strongly convex eta stays positive for R < e.
double log_factor(double r);

/// Running mean with weights proportional to theta^r, kept in ratio form:
/// q_1 = 1, q_r = 1 + q_{r-1} / theta and mean += (x - mean) / q_r.
class WeightedAverage {
 public:
  WeightedAverage() = default;
  WeightedAverage(double theta, Eigen::Index dimension);

  void update(const ModelVector& xPrev);

  double theta() const { return theta_; }
  const ModelVector& mean() const { return mean_; }
  std::size_t count() const { return count_; }
  /// Current q_r = sum_{j<=r} theta^{j-r}.
  double ratio() const { return ratio_; }

 private:
  double theta_ = 1.0;
  double ratio_ = 0.0;
  std::size_t count_ = 0;
  ModelVector mean_;
};

WeightedAverage wavg_update(WeightedAverage state, const ModelVector& xPrev);

struct TheoremBoundInputs {
  double errEta = 0.0;
  double M = 1.0;
  double gradNormAtStar = 0.0;
  std::optional<double> alpha;
  std::optional<double> kappa;
  double muF = 0.0;
};

struct BoundReport {
  double eta = 0.0;
  double errEta = 0.0;
  /// h(x) - h* <= Err + eta M.
  double hGapUpper = 0.0;
  /// f(x) - f* <= Err / eta.
  double fGapUpper = 0.0;
  /// f(x) - f* >= -||grad f(x*)|| ((Err + eta M) / alpha)^(1/kappa).
  std::optional<double> fGapLower;

  bool caseIIIApplicable = false;
  std::optional<double> caseIIIEtaThreshold;
  /// h(x) - h* <= 2 Err.
  std::optional<double> caseIIIHGapUpper;
  /// f(x) - f* >= -(2 ||grad f(x*)|| / alpha) Err.
  std::optional<double> caseIIIFGapLower;
  /// ||x - x*||^2 <= 2 Err / (eta mu_f).
  std::optional<double> caseIIIDistSqUpper;
  std::vector<std::string> notes;
};

BoundReport theorem1_bounds(const TheoremBoundInputs& inputs, double eta);

}  // namespace fedbilevel
