#include "fedbilevel/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "fedbilevel/prox.hpp"

namespace fedbilevel {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double max_eigenvalue(const Matrix& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric,
                                               Eigen::EigenvaluesOnly);
  return solver.eigenvalues().maxCoeff();
}

double min_eigenvalue(const Matrix& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric,
                                               Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

Matrix gram_mean(const Matrix& features) {
  const auto m = static_cast<double>(features.rows());
  return (features.transpose() * features) / m;
}

// Numerically stable log(1 + exp(z)).
double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// 1 / (1 + exp(-z)).
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::LeastSquares: return "least-squares";
    case ObjectiveKind::Logistic: return "logistic";
    case ObjectiveKind::QuadraticBall: return "quadratic-ball";
    case ObjectiveKind::Zero: return "zero";
    case ObjectiveKind::MoreauL1: return "moreau-l1";
    case ObjectiveKind::MoreauLsp: return "moreau-lsp";
    case ObjectiveKind::Quadratic: return "quadratic";
    case ObjectiveKind::L2Residual: return "l2-residual";
    case ObjectiveKind::Custom: return "custom-composite";
  }
  return "unknown";
}

LocalObjective::LocalObjective(Payload payload) : payload_(std::move(payload)) {
  std::visit(
      Overloaded{
          [](const LeastSquaresData& d) {
            require(d.features.rows() == d.targets.size(),
                    "least-squares: feature rows and targets differ in count");
          },
          [](const LogisticData& d) {
            require(d.features.rows() == d.labels.size(),
                    "logistic: feature rows and labels differ in count");
            require(d.regWeight >= 0.0, "logistic: regWeight must be >= 0");
          },
          [](const QuadraticData& d) {
            require(d.hessian.rows() == d.hessian.cols() &&
                        d.hessian.rows() == d.center.size(),
                    "quadratic: hessian must be square and match center");
          },
          [](const QuadraticBallData& d) {
            require(d.a.rows() == d.a.cols() && d.a.rows() == d.b.size(),
                    "quadratic-ball: A must be square and match b");
            require(d.radius > 0.0, "quadratic-ball: radius must be > 0");
          },
          [](const MoreauL1Data& d) {
            require(d.mu > 0.0, "moreau-l1: mu must be > 0");
          },
          [](const MoreauLspData& d) {
            require(d.mu > 0.0 && d.epsilon > 0.0 &&
                        std::sqrt(d.mu) <= d.epsilon,
                    "moreau-lsp: requires mu > 0 and sqrt(mu) <= epsilon");
          },
          [](const L2ResidualData& d) {
            require(d.a.rows() == d.b.size(),
                    "l2-residual: A rows and b differ in size");
          },
          [](const CustomData& d) {
            require(static_cast<bool>(d.value) && static_cast<bool>(d.gradient),
                    "custom: value and gradient callbacks are required");
          },
          [](const ZeroData&) {},
      },
      payload_);
}

LocalObjective LocalObjective::least_squares(Matrix features,
                                             ModelVector targets) {
  return LocalObjective(
      LeastSquaresData{std::move(features), std::move(targets)});
}

LocalObjective LocalObjective::logistic(Matrix features, ModelVector labels,
                                        double regWeight) {
  return LocalObjective(
      LogisticData{std::move(features), std::move(labels), regWeight});
}

LocalObjective LocalObjective::quadratic(Matrix hessian, ModelVector center) {
  return LocalObjective(QuadraticData{std::move(hessian), std::move(center)});
}

LocalObjective LocalObjective::squared_distance(const ModelVector& center) {
  return quadratic(Matrix::Identity(center.size(), center.size()), center);
}

LocalObjective LocalObjective::quadratic_ball(Matrix a, ModelVector b,
                                              double radius) {
  return LocalObjective(QuadraticBallData{std::move(a), std::move(b), radius});
}

LocalObjective LocalObjective::zero() { return LocalObjective(ZeroData{}); }

LocalObjective LocalObjective::moreau_l1(double mu) {
  return LocalObjective(MoreauL1Data{mu});
}

LocalObjective LocalObjective::moreau_lsp(double mu, double epsilon) {
  return LocalObjective(MoreauLspData{mu, epsilon});
}

LocalObjective LocalObjective::l2_residual(Matrix a, ModelVector b) {
  return LocalObjective(L2ResidualData{std::move(a), std::move(b)});
}

LocalObjective LocalObjective::custom(CustomData data) {
  return LocalObjective(std::move(data));
}

ObjectiveKind LocalObjective::kind() const {
  return std::visit(
      Overloaded{
          [](const LeastSquaresData&) { return ObjectiveKind::LeastSquares; },
          [](const LogisticData&) { return ObjectiveKind::Logistic; },
          [](const QuadraticBallData&) { return ObjectiveKind::QuadraticBall; },
          [](const ZeroData&) { return ObjectiveKind::Zero; },
          [](const MoreauL1Data&) { return ObjectiveKind::MoreauL1; },
          [](const MoreauLspData&) { return ObjectiveKind::MoreauLsp; },
          [](const QuadraticData&) { return ObjectiveKind::Quadratic; },
          [](const L2ResidualData&) { return ObjectiveKind::L2Residual; },
          [](const CustomData&) { return ObjectiveKind::Custom; },
      },
      payload_);
}

std::optional<Eigen::Index> LocalObjective::dimension() const {
  return std::visit(
      Overloaded{
          [](const LeastSquaresData& d) -> std::optional<Eigen::Index> {
            return d.features.cols();
          },
          [](const LogisticData& d) -> std::optional<Eigen::Index> {
            return d.features.cols();
          },
          [](const QuadraticBallData& d) -> std::optional<Eigen::Index> {
            return d.b.size();
          },
          [](const QuadraticData& d) -> std::optional<Eigen::Index> {
            return d.center.size();
          },
          [](const L2ResidualData& d) -> std::optional<Eigen::Index> {
            return d.a.cols();
          },
          [](const auto&) -> std::optional<Eigen::Index> {
            return std::nullopt;
          },
      },
      payload_);
}

std::size_t LocalObjective::sample_count() const {
  return std::visit(
      Overloaded{
          [](const LeastSquaresData& d) {
            return static_cast<std::size_t>(d.features.rows());
          },
          [](const LogisticData& d) {
            return static_cast<std::size_t>(d.features.rows());
          },
          [](const auto&) { return std::size_t{1}; },
      },
      payload_);
}

void LocalObjective::check_dimension(const ModelVector& x) const {
  if (auto n = dimension(); n && *n != x.size()) {
    throw PreconditionError("dimension mismatch: objective expects " +
                            std::to_string(*n) + " entries, got " +
                            std::to_string(x.size()));
  }
}

double LocalObjective::value(const ModelVector& x) const {
  check_dimension(x);
  return std::visit(
      Overloaded{
          [&](const LeastSquaresData& d) {
            if (d.features.rows() == 0) return 0.0;
            const ModelVector r = d.features * x - d.targets;
            return 0.5 * r.squaredNorm() /
                   static_cast<double>(d.features.rows());
          },
          [&](const LogisticData& d) {
            double total = 0.0;
            for (Eigen::Index i = 0; i < d.features.rows(); ++i)
              total += softplus(-d.labels[i] * d.features.row(i).dot(x));
            const double mean =
                d.features.rows() > 0
                    ? total / static_cast<double>(d.features.rows())
                    : 0.0;
            return mean + 0.5 * d.regWeight * x.squaredNorm();
          },
          [&](const QuadraticBallData& d) {
            return x.dot(d.a * x) - 2.0 * d.b.dot(x);
          },
          [&](const ZeroData&) { return 0.0; },
          [&](const MoreauL1Data& d) { return prox::moreau_l1(x, d.mu).value; },
          [&](const MoreauLspData& d) {
            return prox::moreau_lsp(x, d.mu, d.epsilon).value;
          },
          [&](const QuadraticData& d) {
            const ModelVector diff = x - d.center;
            return 0.5 * diff.dot(d.hessian * diff);
          },
          [&](const L2ResidualData& d) { return (d.a * x - d.b).norm(); },
          [&](const CustomData& d) { return d.value(x); },
      },
      payload_);
}

ModelVector LocalObjective::accumulate(
    const ModelVector& x, const std::vector<std::size_t>& rows) const {
  return std::visit(
      Overloaded{
          [&](const LeastSquaresData& d) {
            ModelVector acc = ModelVector::Zero(x.size());
            for (std::size_t row : rows) {
              const auto i = static_cast<Eigen::Index>(row);
              const double r = d.features.row(i).dot(x) - d.targets[i];
              acc += r * d.features.row(i).transpose();
            }
            return ModelVector(acc / static_cast<double>(rows.size()));
          },
          [&](const LogisticData& d) {
            ModelVector acc = ModelVector::Zero(x.size());
            for (std::size_t row : rows) {
              const auto i = static_cast<Eigen::Index>(row);
              const double margin = d.labels[i] * d.features.row(i).dot(x);
              acc -= (d.labels[i] * sigmoid(-margin)) *
                     d.features.row(i).transpose();
            }
            return ModelVector(acc / static_cast<double>(rows.size()) +
                               d.regWeight * x);
          },
          [&](const auto&) { return gradient(x); },
      },
      payload_);
}

ModelVector LocalObjective::gradient(const ModelVector& x) const {
  check_dimension(x);
  return std::visit(
      Overloaded{
          [&](const LeastSquaresData& d) {
            require(d.features.rows() > 0, "gradient: empty local dataset");
            std::vector<std::size_t> rows(static_cast<std::size_t>(d.features.rows()));
            std::iota(rows.begin(), rows.end(), std::size_t{0});
            return accumulate(x, rows);
          },
          [&](const LogisticData& d) {
            require(d.features.rows() > 0, "gradient: empty local dataset");
            std::vector<std::size_t> rows(static_cast<std::size_t>(d.features.rows()));
            std::iota(rows.begin(), rows.end(), std::size_t{0});
            return accumulate(x, rows);
          },
          [&](const QuadraticBallData& d) {
            return ModelVector(2.0 * (d.a * x) - 2.0 * d.b);
          },
          [&](const ZeroData&) { return ModelVector(ModelVector::Zero(x.size())); },
          [&](const MoreauL1Data& d) { return prox::moreau_l1(x, d.mu).gradient; },
          [&](const MoreauLspData& d) {
            return prox::moreau_lsp(x, d.mu, d.epsilon).gradient;
          },
          [&](const QuadraticData& d) {
            return ModelVector(d.hessian * (x - d.center));
          },
          [&](const L2ResidualData& d) {
            const ModelVector r = d.a * x - d.b;
            const double norm = r.norm();
            if (norm == 0.0) return ModelVector(ModelVector::Zero(x.size()));
            return ModelVector(d.a.transpose() * r / norm);
          },
          [&](const CustomData& d) { return d.gradient(x); },
      },
      payload_);
}

ModelVector LocalObjective::sample_gradient(const ModelVector& x,
                                            std::size_t index) const {
  check_dimension(x);
  require(index < sample_count(), "sample_gradient: index out of range");
  if (kind() == ObjectiveKind::LeastSquares ||
      kind() == ObjectiveKind::Logistic) {
    return accumulate(x, {index});
  }
  return gradient(x);
}

ModelVector LocalObjective::stochastic_gradient(
    const ModelVector& x, RngStream& rng, const SamplingSpec& sampling) const {
  check_dimension(x);
  const bool dataCarrying = kind() == ObjectiveKind::LeastSquares ||
                            kind() == ObjectiveKind::Logistic;
  if (!dataCarrying) return gradient(x);

  const std::size_t m = sample_count();
  require(m > 0, "stochastic_gradient: empty local dataset");
  require(sampling.batch >= 1, "stochastic_gradient: batch must be positive");

  std::vector<std::size_t> rows;
  rows.reserve(sampling.batch);
  if (sampling.withReplacement) {
    for (std::size_t k = 0; k < sampling.batch; ++k)
      rows.push_back(rng.uniform_index(m));
  } else {
    require(sampling.batch <= m,
            "stochastic_gradient: batch exceeds local sample count");
    std::vector<std::size_t> pool(m);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    // Partial Fisher-Yates.
    for (std::size_t k = 0; k < sampling.batch; ++k) {
      const std::size_t j = k + rng.uniform_index(m - k);
      std::swap(pool[k], pool[j]);
    }
    rows.assign(pool.begin(),
                pool.begin() + static_cast<std::ptrdiff_t>(sampling.batch));
  }
  std::sort(rows.begin(), rows.end());
  return accumulate(x, rows);
}

std::optional<QuadraticForm> LocalObjective::quadratic_form(
    Eigen::Index n) const {
  return std::visit(
      Overloaded{
          [&](const LeastSquaresData& d) -> std::optional<QuadraticForm> {
            if (d.features.rows() == 0) return std::nullopt;
            const auto m = static_cast<double>(d.features.rows());
            return QuadraticForm{gram_mean(d.features),
                                 -(d.features.transpose() * d.targets) / m,
                                 0.5 * d.targets.squaredNorm() / m};
          },
          [&](const QuadraticData& d) -> std::optional<QuadraticForm> {
            return QuadraticForm{d.hessian, -(d.hessian * d.center),
                                 0.5 * d.center.dot(d.hessian * d.center)};
          },
          [&](const QuadraticBallData& d) -> std::optional<QuadraticForm> {
            return QuadraticForm{2.0 * d.a, -2.0 * d.b, 0.0};
          },
          [&](const ZeroData&) -> std::optional<QuadraticForm> {
            return QuadraticForm{Matrix::Zero(n, n), ModelVector::Zero(n), 0.0};
          },
          [&](const auto&) -> std::optional<QuadraticForm> {
            return std::nullopt;
          },
      },
      payload_);
}

double LocalObjective::smoothness(Eigen::Index n) const {
  (void)n;
  return std::visit(
      Overloaded{
          [](const LeastSquaresData& d) {
            return d.features.rows() == 0 ? 0.0
                                          : max_eigenvalue(gram_mean(d.features));
          },
          [](const LogisticData& d) {
            const double curvature =
                d.features.rows() == 0
                    ? 0.0
                    : max_eigenvalue(gram_mean(d.features)) / 4.0;
            return curvature + d.regWeight;
          },
          [](const QuadraticBallData& d) {
            Eigen::SelfAdjointEigenSolver<Matrix> s(d.a, Eigen::EigenvaluesOnly);
            return 2.0 * s.eigenvalues().cwiseAbs().maxCoeff();
          },
          [](const ZeroData&) { return 0.0; },
          [](const MoreauL1Data& d) { return 1.0 / d.mu; },
          [](const MoreauLspData& d) { return 1.0 / d.mu; },
          [](const QuadraticData& d) { return max_eigenvalue(d.hessian); },
          [](const L2ResidualData&) {
            return std::numeric_limits<double>::infinity();
          },
          [](const CustomData& d) { return d.smoothness; },
      },
      payload_);
}

double LocalObjective::strong_convexity(Eigen::Index n) const {
  (void)n;
  return std::visit(
      Overloaded{
          [](const LogisticData& d) { return d.regWeight; },
          [](const QuadraticBallData& d) {
            return std::max(0.0, 2.0 * min_eigenvalue(d.a));
          },
          [](const QuadraticData& d) {
            return std::max(0.0, min_eigenvalue(d.hessian));
          },
          [](const LeastSquaresData& d) {
            return d.features.rows() == 0
                       ? 0.0
                       : std::max(0.0, min_eigenvalue(gram_mean(d.features)));
          },
          [](const CustomData& d) { return d.strongConvexity; },
          [](const auto&) { return 0.0; },
      },
      payload_);
}

}  // namespace fedbilevel
