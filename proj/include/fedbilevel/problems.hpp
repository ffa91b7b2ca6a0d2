#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedbilevel/objective.hpp"
#include "fedbilevel/rng.hpp"
#include "fedbilevel/types.hpp"

namespace fedbilevel {

/// Which level of the bilevel problem a client objective belongs to.
enum class Level { Inner, Outer };

struct ClientObjectives {
  LocalObjective outer;
  LocalObjective inner;
};

/// Bounded gradient dissimilarity constants, plus the optimality gaps
/// f* - inf f and h* - inf h that the regularized constants need.
struct BgdConstants {
  double gF = 0.0;
  double gH = 0.0;
  double bF = 1.0;
  double bH = 1.0;
  double fGap = 0.0;
  double hGap = 0.0;
};

struct ProblemConstants {
  double lF = 0.0;
  double lH = 0.0;
  double muF = 0.0;
  double sigmaF = 0.0;
  double sigmaH = 0.0;
  std::optional<BgdConstants> bgd;
};

/// h(x) - h* >= alpha * dist(x, X*_h)^kappa. alpha may be unknown.
struct Sharpness {
  std::optional<double> alpha;
  double kappa = 1.0;
};

/// X*_h = {x : A x = b}.
struct AffineSolutionSet {
  Matrix a;
  ModelVector b;
};

struct GroundTruth {
  std::optional<AffineSolutionSet> affine;
  /// Set when X*_h is known to be a single point.
  std::optional<ModelVector> point;
  double hStar = 0.0;
};

/// Closed convex constraint set with a closed-form projection.
struct FeasibleSet {
  enum class Kind { Ball, Box };
  Kind kind = Kind::Ball;
  double radius = 1.0;
  ModelVector lower;
  ModelVector upper;

  static FeasibleSet ball(double radius);
  static FeasibleSet box(ModelVector lower, ModelVector upper);
  ModelVector project(const ModelVector& x) const;
};

/// N client objective pairs with their metadata. The global objectives are
/// the client means f = (1/N) sum f_i and h = (1/N) sum h_i, summed in
/// ascending client order.
struct ProblemInstance {
  std::string name;
  Eigen::Index dimension = 0;
  std::vector<ClientObjectives> clients;
  ProblemConstants constants;
  std::optional<Sharpness> sharpness;
  std::optional<GroundTruth> groundTruth;
  std::optional<FeasibleSet> feasibleSet;

  std::size_t client_count() const { return clients.size(); }

  double outer_value(const ModelVector& x) const;
  double inner_value(const ModelVector& x) const;
  ModelVector outer_gradient(const ModelVector& x) const;
  ModelVector inner_gradient(const ModelVector& x) const;

  /// Throws PreconditionError if the instance breaks its invariants.
  void validate() const;
};

ModelVector grad_inner(const ProblemInstance& instance, std::size_t clientId,
                       const ModelVector& x);
ModelVector grad_outer(const ProblemInstance& instance, std::size_t clientId,
                       const ModelVector& x);
ModelVector stoch_grad(const ProblemInstance& instance, std::size_t clientId,
                       Level which, const ModelVector& x, RngStream& rng,
                       const SamplingSpec& sampling = {});

/// Least-squares inner objectives built from the rows of A, dealt to the
/// clients round-robin (row r goes to client r mod N). The outer objective
/// defaults to 0.5 ||x||^2 on every client. When b lies in range(A) the
/// affine ground truth {A x = b}, h* = 0 is attached.
ProblemInstance make_affine_ls_instance(const Matrix& a, const ModelVector& b,
                                        std::size_t clients);

struct OverparamOptions {
  /// Nonzero spectrum of the inner Hessian A'A/m, spread linearly.
  double curvatureMin = 0.5;
  double curvatureMax = 1.0;
  /// Norm of the minimum-norm solution A^+ b.
  double solutionNorm = 1.0;
};

/// Random over-parameterized least squares (m < n) with b = A z, so h* = 0
/// and X*_h = {x : A x = b}.
ProblemInstance make_overparam_ls(Eigen::Index n, Eigen::Index m,
                                  std::size_t clients, std::uint64_t seed,
                                  const OverparamOptions& options = {});

/// Replaces every client's outer objective and refreshes L_f and mu_f.
ProblemInstance with_outer(ProblemInstance instance,
                           const LocalObjective& outer);

enum class WeakSharpKind { L2Residual, QuadraticBall };

struct WeakSharpOptions {
  Eigen::Index rows = 2;
  Eigen::Index cols = 3;
  std::size_t clients = 2;
  /// Center of the outer objective 0.5 ||x - center||^2 (l2-residual only);
  /// drawn at random when empty.
  ModelVector outerCenter;
};

/// l2-residual: every client holds h(x) = ||A x - b|| with b in range(A),
/// alpha = smallest nonzero singular value of A, kappa = 1.
/// quadratic-ball: h(x) = x'Ax - 2b'x over the unit ball with an indefinite
/// symmetric A; kappa = 2 and alpha left unknown.
ProblemInstance make_weak_sharp_instance(WeakSharpKind kind,
                                         std::uint64_t seed,
                                         const WeakSharpOptions& options = {});

/// Same l2-residual construction for a caller-supplied system.
ProblemInstance make_l2_residual_instance(const Matrix& a, const ModelVector& b,
                                          std::size_t clients,
                                          const ModelVector& outerCenter);

/// One-dimensional clients with h_i(x) = 0.5 a_i (x - c_i)^2 realized as least
/// squares over samplesPerClient[i] rows. The global inner minimizer is the
/// single point sum a_i c_i / sum a_i.
ProblemInstance make_heterogeneous_quadratics(
    const std::vector<double>& curvatures, const std::vector<double>& centers,
    const std::vector<std::size_t>& samplesPerClient, std::uint64_t seed);

/// Empirical BGD constants with B_f = B_h = 1: the largest violation over the
/// given points of (1/N) sum ||grad F_i||^2 - 2 L_F (F(x) - inf F).
BgdConstants estimate_bgd(const ProblemInstance& instance,
                          const std::vector<ModelVector>& points, double fMin,
                          double hMin);

/// Largest per-client sampling variance of single-sample gradients over the
/// given points, computed exactly by enumerating samples. Returns (sigma_f,
/// sigma_h).
std::pair<double, double> estimate_variance(
    const ProblemInstance& instance, const std::vector<ModelVector>& points);

}  // namespace fedbilevel
