#include "fedbilevel/problems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "fedbilevel/oracles.hpp"

namespace fedbilevel {
namespace {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  Matrix g(rows, cols);
  // Column-major fill order is part of the reproducibility contract.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) g(i, j) = rng.normal();
  return g;
}

ModelVector gaussian_vector(Eigen::Index n, RngStream& rng) {
  ModelVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

// n x k matrix with orthonormal columns.
Matrix random_orthonormal(Eigen::Index n, Eigen::Index k, RngStream& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(n, k, rng));
  return qr.householderQ() * Matrix::Identity(n, k);
}

void check_client(const ProblemInstance& instance, std::size_t clientId) {
  if (clientId >= instance.clients.size()) {
    throw PreconditionError("client id " + std::to_string(clientId) +
                            " out of range (N=" +
                            std::to_string(instance.clients.size()) + ")");
  }
}

void refresh_outer_constants(ProblemInstance& instance) {
  double lF = 0.0;
  double muF = std::numeric_limits<double>::infinity();
  for (const auto& c : instance.clients) {
    lF = std::max(lF, c.outer.smoothness(instance.dimension));
    muF = std::min(muF, c.outer.strong_convexity(instance.dimension));
  }
  instance.constants.lF = lF;
  instance.constants.muF = instance.clients.empty() ? 0.0 : muF;
}

double max_inner_smoothness(const ProblemInstance& instance) {
  double lH = 0.0;
  for (const auto& c : instance.clients)
    lH = std::max(lH, c.inner.smoothness(instance.dimension));
  return lH;
}

}  // namespace

FeasibleSet FeasibleSet::ball(double radius) {
  require(radius > 0.0, "ball radius must be positive");
  FeasibleSet set;
  set.kind = Kind::Ball;
  set.radius = radius;
  return set;
}

FeasibleSet FeasibleSet::box(ModelVector lower, ModelVector upper) {
  require(lower.size() == upper.size() && (lower.array() <= upper.array()).all(),
          "box bounds must have equal size and lower <= upper");
  FeasibleSet set;
  set.kind = Kind::Box;
  set.lower = std::move(lower);
  set.upper = std::move(upper);
  return set;
}

ModelVector FeasibleSet::project(const ModelVector& x) const {
  if (kind == Kind::Ball) {
    const double norm = x.norm();
    return norm <= radius ? x : ModelVector(x * (radius / norm));
  }
  require(x.size() == lower.size(), "box projection: dimension mismatch");
  return x.cwiseMax(lower).cwiseMin(upper);
}

double ProblemInstance::outer_value(const ModelVector& x) const {
  double total = 0.0;
  for (const auto& c : clients) total += c.outer.value(x);
  return total / static_cast<double>(clients.size());
}

double ProblemInstance::inner_value(const ModelVector& x) const {
  double total = 0.0;
  for (const auto& c : clients) total += c.inner.value(x);
  return total / static_cast<double>(clients.size());
}

ModelVector ProblemInstance::outer_gradient(const ModelVector& x) const {
  ModelVector total = ModelVector::Zero(x.size());
  for (const auto& c : clients) total += c.outer.gradient(x);
  return total / static_cast<double>(clients.size());
}

ModelVector ProblemInstance::inner_gradient(const ModelVector& x) const {
  ModelVector total = ModelVector::Zero(x.size());
  for (const auto& c : clients) total += c.inner.gradient(x);
  return total / static_cast<double>(clients.size());
}

void ProblemInstance::validate() const {
  require(!clients.empty(), "instance: needs at least one client");
  require(dimension > 0, "instance: dimension must be positive");
  require(constants.muF >= 0.0, "instance: mu_f must be >= 0");
  if (constants.bgd) {
    require(constants.bgd->bF >= 1.0 && constants.bgd->bH >= 1.0,
            "instance: BGD constants B_f, B_h must be >= 1");
  }
  if (sharpness) {
    require(!sharpness->alpha || *sharpness->alpha > 0.0,
            "instance: sharpness alpha must be > 0");
    require(sharpness->kappa >= 1.0, "instance: sharpness kappa must be >= 1");
  }
  for (std::size_t i = 0; i < clients.size(); ++i) {
    for (const LocalObjective* obj : {&clients[i].outer, &clients[i].inner}) {
      if (auto n = obj->dimension(); n && *n != dimension) {
        throw PreconditionError("instance: client " + std::to_string(i) +
                                " objective has dimension " +
                                std::to_string(*n) + ", expected " +
                                std::to_string(dimension));
      }
    }
  }
}

ModelVector grad_inner(const ProblemInstance& instance, std::size_t clientId,
                       const ModelVector& x) {
  check_client(instance, clientId);
  return instance.clients[clientId].inner.gradient(x);
}

ModelVector grad_outer(const ProblemInstance& instance, std::size_t clientId,
                       const ModelVector& x) {
  check_client(instance, clientId);
  return instance.clients[clientId].outer.gradient(x);
}

ModelVector stoch_grad(const ProblemInstance& instance, std::size_t clientId,
                       Level which, const ModelVector& x, RngStream& rng,
                       const SamplingSpec& sampling) {
  check_client(instance, clientId);
  const auto& c = instance.clients[clientId];
  return (which == Level::Inner ? c.inner : c.outer)
      .stochastic_gradient(x, rng, sampling);
}

ProblemInstance make_affine_ls_instance(const Matrix& a, const ModelVector& b,
                                        std::size_t clients) {
  require(clients >= 1, "need at least one client");
  require(a.rows() == b.size(), "A rows and b differ in size");
  require(static_cast<std::size_t>(a.rows()) >= clients,
          "fewer rows than clients: some client would hold no data");

  ProblemInstance instance;
  instance.name = "affine-ls";
  instance.dimension = a.cols();
  std::vector<std::vector<Eigen::Index>> rowsOf(clients);
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    rowsOf[static_cast<std::size_t>(r) % clients].push_back(r);

  Eigen::VectorXd weights(a.rows());
  for (const auto& rows : rowsOf) {
    Matrix u(static_cast<Eigen::Index>(rows.size()), a.cols());
    ModelVector v(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      u.row(static_cast<Eigen::Index>(k)) = a.row(rows[k]);
      v[static_cast<Eigen::Index>(k)] = b[rows[k]];
      weights[rows[k]] = 1.0 / static_cast<double>(rows.size());
    }
    instance.clients.push_back(
        {LocalObjective::squared_distance(ModelVector::Zero(a.cols())),
         LocalObjective::least_squares(std::move(u), std::move(v))});
  }
  refresh_outer_constants(instance);
  instance.constants.lH = max_inner_smoothness(instance);

  GroundTruth truth;
  const ModelVector xMin = pseudo_inverse(a) * b;
  if ((a * xMin - b).norm() <= 1e-10 * (1.0 + b.norm())) {
    truth.affine = AffineSolutionSet{a, b};
    truth.hStar = 0.0;
  } else {
    // Inconsistent system: X*_h is the weighted normal-equation set.
    const Matrix aw = weights.asDiagonal() * a;
    Matrix normal = a.transpose() * aw;
    ModelVector rhs = aw.transpose() * b;
    const ModelVector xs = pseudo_inverse(normal) * rhs;
    truth.affine = AffineSolutionSet{std::move(normal), std::move(rhs)};
    truth.hStar = instance.inner_value(xs);
  }
  instance.groundTruth = std::move(truth);
  return instance;
}

ProblemInstance make_overparam_ls(Eigen::Index n, Eigen::Index m,
                                  std::size_t clients, std::uint64_t seed,
                                  const OverparamOptions& options) {
  if (m >= n) {
    throw PreconditionError("make_overparam_ls: need m < n (got m=" +
                            std::to_string(m) + ", n=" + std::to_string(n) +
                            "), the inner problem must be over-parameterized");
  }
  require(m >= 1, "make_overparam_ls: m must be positive");
  require(options.curvatureMin > 0.0 &&
              options.curvatureMax >= options.curvatureMin,
          "make_overparam_ls: need 0 < curvatureMin <= curvatureMax");
  require(options.solutionNorm >= 0.0,
          "make_overparam_ls: solutionNorm must be >= 0");

  RngStream rng = RngStream::derive(seed, 0, 0, StreamPurpose::Generator);
  const Matrix p = random_orthonormal(m, m, rng);
  const Matrix q = random_orthonormal(n, m, rng);
  ModelVector s(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double t = m == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(m - 1);
    const double lambda =
        options.curvatureMax + t * (options.curvatureMin - options.curvatureMax);
    s[j] = std::sqrt(static_cast<double>(m) * lambda);
  }
  const Matrix a = p * s.asDiagonal() * q.transpose();

  // Minimum-norm solution lies in the row space of A.
  ModelVector w = gaussian_vector(m, rng);
  w *= options.solutionNorm / w.norm();
  const ModelVector zBar = q * w;
  const ModelVector b = a * zBar;

  ProblemInstance instance = make_affine_ls_instance(a, b, clients);
  instance.name = "overparam-ls";
  return instance;
}

ProblemInstance with_outer(ProblemInstance instance,
                           const LocalObjective& outer) {
  for (auto& c : instance.clients) c.outer = outer;
  refresh_outer_constants(instance);
  return instance;
}

ProblemInstance make_l2_residual_instance(const Matrix& a, const ModelVector& b,
                                          std::size_t clients,
                                          const ModelVector& outerCenter) {
  require(clients >= 1, "need at least one client");
  require(outerCenter.size() == a.cols(),
          "outer center dimension does not match A");
  ProblemInstance instance;
  instance.name = "weak-sharp-l2";
  instance.dimension = a.cols();
  for (std::size_t i = 0; i < clients; ++i) {
    instance.clients.push_back({LocalObjective::squared_distance(outerCenter),
                                LocalObjective::l2_residual(a, b)});
  }
  refresh_outer_constants(instance);
  instance.constants.lH = max_inner_smoothness(instance);

  // Raises if b is outside range(A).
  (void)affine_projection(a, b, ModelVector::Zero(a.cols()));
  instance.groundTruth = GroundTruth{AffineSolutionSet{a, b}, std::nullopt, 0.0};
  instance.sharpness = Sharpness{smallest_nonzero_singular_value(a), 1.0};
  return instance;
}

ProblemInstance make_weak_sharp_instance(WeakSharpKind kind,
                                         std::uint64_t seed,
                                         const WeakSharpOptions& options) {
  RngStream rng = RngStream::derive(seed, 0, 1, StreamPurpose::Generator);
  const Eigen::Index n = options.cols;
  require(n >= 1 && options.rows >= 1, "weak sharp instance: empty shape");

  if (kind == WeakSharpKind::L2Residual) {
    const Matrix a = gaussian_matrix(options.rows, n, rng);
    const ModelVector b = a * gaussian_vector(n, rng);
    const ModelVector center = options.outerCenter.size() == n
                                   ? options.outerCenter
                                   : gaussian_vector(n, rng);
    return make_l2_residual_instance(a, b, options.clients, center);
  }

  // Indefinite symmetric A = V diag(lambda) V' with lambda spread over [-1, 1].
  const Matrix v = random_orthonormal(n, n, rng);
  ModelVector lambda(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    lambda[j] = n == 1 ? -1.0
                       : -1.0 + 2.0 * static_cast<double>(j) /
                                    static_cast<double>(n - 1);
  }
  const Matrix a = v * lambda.asDiagonal() * v.transpose();
  const Matrix aSym = 0.5 * (a + a.transpose());
  const ModelVector b = gaussian_vector(n, rng);

  ProblemInstance instance;
  instance.name = "quadratic-ball";
  instance.dimension = n;
  for (std::size_t i = 0; i < options.clients; ++i) {
    instance.clients.push_back(
        {LocalObjective::squared_distance(ModelVector::Zero(n)),
         LocalObjective::quadratic_ball(aSym, b, 1.0)});
  }
  refresh_outer_constants(instance);
  instance.constants.lH = max_inner_smoothness(instance);
  instance.feasibleSet = FeasibleSet::ball(1.0);
  instance.sharpness = Sharpness{std::nullopt, 2.0};

  const ModelVector xh = trust_region_solve(2.0 * aSym, 2.0 * b, 1.0);
  GroundTruth truth;
  truth.point = xh;
  truth.hStar = instance.inner_value(xh);
  instance.groundTruth = std::move(truth);
  return instance;
}

ProblemInstance make_heterogeneous_quadratics(
    const std::vector<double>& curvatures, const std::vector<double>& centers,
    const std::vector<std::size_t>& samplesPerClient, std::uint64_t seed) {
  const std::size_t clients = curvatures.size();
  require(clients >= 1, "heterogeneous quadratics: need at least one client");
  require(centers.size() == clients && samplesPerClient.size() == clients,
          "heterogeneous quadratics: curvatures, centers and sample counts "
          "must have equal length");

  ProblemInstance instance;
  instance.name = "heterogeneous-quadratics";
  instance.dimension = 1;
  for (std::size_t i = 0; i < clients; ++i) {
    require(curvatures[i] > 0.0, "heterogeneous quadratics: curvature must be > 0");
    require(samplesPerClient[i] >= 1,
            "heterogeneous quadratics: each client needs a sample");
    RngStream rng = RngStream::derive(seed, 0, i, StreamPurpose::Generator);
    const auto rows = static_cast<Eigen::Index>(samplesPerClient[i]);
    ModelVector w = rows == 1 ? ModelVector::Ones(1) : gaussian_vector(rows, rng);
    w *= 1.0 / std::sqrt(w.squaredNorm() / static_cast<double>(rows));
    Matrix u = std::sqrt(curvatures[i]) * w;
    ModelVector target = u.col(0) * centers[i];
    instance.clients.push_back(
        {LocalObjective::squared_distance(ModelVector::Zero(1)),
         LocalObjective::least_squares(std::move(u), std::move(target))});
  }
  refresh_outer_constants(instance);
  instance.constants.lH = max_inner_smoothness(instance);

  const auto form = global_quadratic_form(instance, Level::Inner);
  const double xh = -form->linear[0] / form->hessian(0, 0);
  GroundTruth truth;
  truth.affine = AffineSolutionSet{Matrix::Ones(1, 1), ModelVector::Constant(1, xh)};
  truth.point = ModelVector::Constant(1, xh);
  truth.hStar = instance.inner_value(*truth.point);
  instance.groundTruth = std::move(truth);
  return instance;
}

BgdConstants estimate_bgd(const ProblemInstance& instance,
                          const std::vector<ModelVector>& points, double fMin,
                          double hMin) {
  BgdConstants out;
  const auto n = static_cast<double>(instance.client_count());
  double gF2 = 0.0;
  double gH2 = 0.0;
  for (const auto& x : points) {
    double sf = 0.0;
    double sh = 0.0;
    for (const auto& c : instance.clients) {
      sf += c.outer.gradient(x).squaredNorm();
      sh += c.inner.gradient(x).squaredNorm();
    }
    gF2 = std::max(gF2, sf / n - 2.0 * instance.constants.lF *
                                     (instance.outer_value(x) - fMin));
    gH2 = std::max(gH2, sh / n - 2.0 * instance.constants.lH *
                                     (instance.inner_value(x) - hMin));
  }
  out.gF = std::sqrt(gF2);
  out.gH = std::sqrt(gH2);
  return out;
}

std::pair<double, double> estimate_variance(
    const ProblemInstance& instance, const std::vector<ModelVector>& points) {
  auto variance = [](const LocalObjective& obj, const ModelVector& x) {
    const std::size_t m = obj.sample_count();
    if (m <= 1) return 0.0;
    const ModelVector mean = obj.gradient(x);
    double total = 0.0;
    for (std::size_t k = 0; k < m; ++k)
      total += (obj.sample_gradient(x, k) - mean).squaredNorm();
    return total / static_cast<double>(m);
  };
  double vf = 0.0;
  double vh = 0.0;
  for (const auto& x : points) {
    for (const auto& c : instance.clients) {
      vf = std::max(vf, variance(c.outer, x));
      vh = std::max(vh, variance(c.inner, x));
    }
  }
  return {std::sqrt(vf), std::sqrt(vh)};
}

}  // namespace fedbilevel
