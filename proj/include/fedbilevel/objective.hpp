#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "fedbilevel/rng.hpp"
#include "fedbilevel/types.hpp"

namespace fedbilevel {

enum class ObjectiveKind {
  LeastSquares,
  Logistic,
  QuadraticBall,
  Zero,
  MoreauL1,
  MoreauLsp,
  Quadratic,
  L2Residual,
  Custom,
};

std::string_view to_string(ObjectiveKind kind);

/// Mean over rows of 0.5 * (u . x - v)^2.
struct LeastSquaresData {
  Matrix features;
  ModelVector targets;
};

/// Mean over rows of log(1 + exp(-v u . x)) plus (regWeight / 2) ||x||^2.
/// Labels are +1 / -1.
struct LogisticData {
  Matrix features;
  ModelVector labels;
  double regWeight = 0.0;
};

/// 0.5 (x - center)' hessian (x - center).
struct QuadraticData {
  Matrix hessian;
  ModelVector center;
};

/// x' A x - 2 b' x, meant to be minimized over the ball ||x|| <= radius.
struct QuadraticBallData {
  Matrix a;
  ModelVector b;
  double radius = 1.0;
};

struct ZeroData {};

struct MoreauL1Data {
  double mu = 0.1;
};

struct MoreauLspData {
  double mu = 0.01;
  double epsilon = 0.1;
};

/// ||A x - b||_2 (not squared). Weak sharp of order one when b is in
/// range(A). The gradient returned on the solution set is zero.
struct L2ResidualData {
  Matrix a;
  ModelVector b;
};

struct CustomData {
  std::function<double(const ModelVector&)> value;
  std::function<ModelVector(const ModelVector&)> gradient;
  double smoothness = 0.0;
  double strongConvexity = 0.0;
};

/// Quadratic model 0.5 x' H x + g' x + c.
struct QuadraticForm {
  Matrix hessian;
  ModelVector linear;
  double constant = 0.0;
};

/// Sampling law for stochastic gradients.
struct SamplingSpec {
  std::size_t batch = 1;
  bool withReplacement = true;
};

/// One client's local loss (outer or inner) with its gradient oracles.
///
/// Data-carrying kinds (least squares, logistic) expose one sample per row;
/// every other kind is a single deterministic sample, so its stochastic
/// gradient equals the full gradient and consumes no randomness.
class LocalObjective {
 public:
  using Payload =
      std::variant<LeastSquaresData, LogisticData, QuadraticBallData, ZeroData,
                   MoreauL1Data, MoreauLspData, QuadraticData, L2ResidualData,
                   CustomData>;

  LocalObjective() : payload_(ZeroData{}) {}
  explicit LocalObjective(Payload payload);

  static LocalObjective least_squares(Matrix features, ModelVector targets);
  static LocalObjective logistic(Matrix features, ModelVector labels,
                                 double regWeight);
  static LocalObjective quadratic(Matrix hessian, ModelVector center);
  /// 0.5 ||x - center||^2.
  static LocalObjective squared_distance(const ModelVector& center);
  static LocalObjective quadratic_ball(Matrix a, ModelVector b,
                                       double radius = 1.0);
  static LocalObjective zero();
  static LocalObjective moreau_l1(double mu);
  static LocalObjective moreau_lsp(double mu, double epsilon);
  static LocalObjective l2_residual(Matrix a, ModelVector b);
  static LocalObjective custom(CustomData data);

  ObjectiveKind kind() const;
  const Payload& payload() const { return payload_; }

  /// Dimension fixed by the data, or nullopt for dimension-free kinds.
  std::optional<Eigen::Index> dimension() const;
  std::size_t sample_count() const;

  double value(const ModelVector& x) const;
  ModelVector gradient(const ModelVector& x) const;
  ModelVector sample_gradient(const ModelVector& x, std::size_t index) const;

  /// Minibatch gradient. With replacement draws `batch` independent uniform
  /// indices; without replacement draws a uniform subset. Either way the
  /// per-sample gradients are summed in ascending index order, so a
  /// without-replacement batch of the whole dataset reproduces gradient()
  /// bit for bit.
  ModelVector stochastic_gradient(const ModelVector& x, RngStream& rng,
                                  const SamplingSpec& sampling) const;

  /// Exact quadratic model when the objective is quadratic.
  std::optional<QuadraticForm> quadratic_form(Eigen::Index n) const;

  /// Smoothness constant L (largest Hessian eigenvalue bound).
  double smoothness(Eigen::Index n) const;
  /// Strong convexity modulus (0 when merely convex or nonconvex).
  double strong_convexity(Eigen::Index n) const;

 private:
  void check_dimension(const ModelVector& x) const;
  ModelVector accumulate(const ModelVector& x,
                         const std::vector<std::size_t>& rows) const;

  Payload payload_;
};

}  // namespace fedbilevel
