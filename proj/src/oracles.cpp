#include "fedbilevel/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace fedbilevel {
namespace {

constexpr double kRankThreshold = 1e-12;

Eigen::JacobiSVD<Matrix> thin_svd(const Matrix& a) {
  return Eigen::JacobiSVD<Matrix>(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
}

Eigen::Index rank_of(const Eigen::VectorXd& sv) {
  if (sv.size() == 0) return 0;
  const double cut = kRankThreshold * sv[0];
  Eigen::Index r = 0;
  while (r < sv.size() && sv[r] > cut) ++r;
  return r;
}

void check_range(const Matrix& a, const ModelVector& b, const Matrix& pinv) {
  require(a.rows() == b.size(), "affine set: A rows and b differ in size");
  const double residual = (a * (pinv * b) - b).norm();
  if (residual > 1e-10 * (1.0 + b.norm())) {
    throw Error("affine set is empty: b is not in range(A) (residual " +
                std::to_string(residual) + ")");
  }
}

// Minimizer of a strictly convex quadratic restricted to {A x = b}.
ModelVector constrained_quadratic_min(const QuadraticForm& form,
                                      const Matrix& a, const ModelVector& b) {
  const Matrix pinv = pseudo_inverse(a);
  check_range(a, b, pinv);
  const ModelVector xp = pinv * b;
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullV);
  const Eigen::Index r = rank_of(svd.singularValues());
  const Eigen::Index n = a.cols();
  if (r == n) return xp;
  const Matrix z = svd.matrixV().rightCols(n - r);
  const Matrix reduced = z.transpose() * form.hessian * z;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(reduced);
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    throw Error("outer objective is not strictly convex on the solution set");
  }
  const ModelVector w =
      eig.eigenvectors() *
      (eig.eigenvalues().cwiseInverse().asDiagonal() *
       (eig.eigenvectors().transpose() *
        (-(z.transpose() * (form.hessian * xp + form.linear)))));
  return xp + z * w;
}

// Minimum l1-norm point of {A x = b} by enumerating supports of size rank(A).
ModelVector l1_reference(const Matrix& a, const ModelVector& b) {
  const Eigen::Index n = a.cols();
  if (n > 12) {
    throw Error("l1 bilevel reference is only supported for n <= 12 (got n=" +
                std::to_string(n) + ")");
  }
  check_range(a, b, pseudo_inverse(a));
  const Eigen::Index r = numerical_rank(a);
  if (r == 0) return ModelVector::Zero(n);

  std::vector<bool> pick(static_cast<std::size_t>(n), false);
  std::fill(pick.begin(), pick.begin() + r, true);
  ModelVector best;
  double bestValue = std::numeric_limits<double>::infinity();
  do {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < n; ++j)
      if (pick[static_cast<std::size_t>(j)]) cols.push_back(j);
    Matrix sub(a.rows(), r);
    for (Eigen::Index k = 0; k < r; ++k)
      sub.col(k) = a.col(cols[static_cast<std::size_t>(k)]);
    Eigen::ColPivHouseholderQR<Matrix> qr(sub);
    if (qr.rank() < r) continue;
    const ModelVector xs = qr.solve(b);
    if ((sub * xs - b).norm() > 1e-10 * (1.0 + b.norm())) continue;
    const double value = xs.lpNorm<1>();
    if (best.size() == 0 || value < bestValue - 1e-14 * (1.0 + bestValue)) {
      bestValue = value;
      best = ModelVector::Zero(n);
      for (Eigen::Index k = 0; k < r; ++k)
        best[cols[static_cast<std::size_t>(k)]] = xs[k];
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));
  if (best.size() == 0) throw Error("l1 reference: no basic feasible point");
  return best;
}

}  // namespace

Matrix pseudo_inverse(const Matrix& a) {
  if (a.size() == 0) return Matrix::Zero(a.cols(), a.rows());
  const auto svd = thin_svd(a);
  const Eigen::VectorXd& sv = svd.singularValues();
  const Eigen::Index r = rank_of(sv);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < r; ++i) inv[i] = 1.0 / sv[i];
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Eigen::Index numerical_rank(const Matrix& a) {
  if (a.size() == 0) return 0;
  return rank_of(thin_svd(a).singularValues());
}

double smallest_nonzero_singular_value(const Matrix& a) {
  const auto svd = thin_svd(a);
  const Eigen::Index r = rank_of(svd.singularValues());
  require(r > 0, "matrix has no nonzero singular value");
  return svd.singularValues()[r - 1];
}

ModelVector affine_projection(const Matrix& a, const ModelVector& b,
                              const ModelVector& y) {
  require(a.cols() == y.size(), "affine_projection: dimension mismatch");
  const Matrix pinv = pseudo_inverse(a);
  check_range(a, b, pinv);
  return y - pinv * (a * y - b);
}

double distance_to_affine(const AffineSolutionSet& set, const ModelVector& x) {
  return (x - affine_projection(set.a, set.b, x)).norm();
}

std::optional<double> distance_to_solution_set(const ProblemInstance& instance,
                                               const ModelVector& x) {
  if (!instance.groundTruth) return std::nullopt;
  if (instance.groundTruth->affine)
    return distance_to_affine(*instance.groundTruth->affine, x);
  if (instance.groundTruth->point) return (x - *instance.groundTruth->point).norm();
  return std::nullopt;
}

ModelVector trust_region_solve(const Matrix& h, const ModelVector& c,
                               double radius) {
  require(h.rows() == h.cols() && h.rows() == c.size(),
          "trust_region_solve: shape mismatch");
  require(radius > 0.0, "trust_region_solve: radius must be positive");
  const Eigen::Index n = c.size();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (h + h.transpose()));
  const Eigen::VectorXd& lam = eig.eigenvalues();
  const Matrix& v = eig.eigenvectors();
  const ModelVector ct = v.transpose() * c;
  const double scale = std::max(lam.cwiseAbs().maxCoeff(), 1.0);
  const double tol = 1e-12 * scale;
  const double lamMin = lam[0];

  auto coords = [&](double nu) {
    ModelVector u(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = lam[j] + nu;
      u[j] = std::abs(d) <= tol ? 0.0 : ct[j] / d;
    }
    return u;
  };

  // Smallest admissible multiplier; degenerate directions are dropped.
  const double nuLow = std::max(0.0, -lamMin);
  const ModelVector atLow = coords(nuLow);
  bool degenerateHasWeight = false;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::abs(lam[j] + nuLow) <= tol &&
        std::abs(ct[j]) > 1e-12 * (1.0 + ct.norm()))
      degenerateHasWeight = true;
  }
  if (!degenerateHasWeight && atLow.norm() <= radius) {
    if (nuLow == 0.0) return v * atLow;
    // Hard case: complete along the bottom eigenvector to reach the boundary.
    ModelVector u = atLow;
    u[0] = std::sqrt(std::max(0.0, radius * radius - atLow.squaredNorm()));
    return v * u;
  }

  double lo = nuLow;
  double hi = nuLow + ct.norm() / radius + 1.0;
  while (coords(hi).norm() > radius) hi = 2.0 * hi + 1.0;
  for (int it = 0; it < 300 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    const ModelVector u = coords(mid);
    // Directions with zero denominator carry weight here, so the norm blows
    // up as mid approaches the lower end.
    const bool blocked = std::abs(lamMin + mid) <= tol && degenerateHasWeight;
    if (blocked || u.norm() > radius) lo = mid; else hi = mid;
  }
  return v * coords(hi);
}

std::optional<QuadraticForm> global_quadratic_form(
    const ProblemInstance& instance, Level which) {
  const Eigen::Index n = instance.dimension;
  QuadraticForm total{Matrix::Zero(n, n), ModelVector::Zero(n), 0.0};
  for (const auto& c : instance.clients) {
    const auto form = (which == Level::Inner ? c.inner : c.outer).quadratic_form(n);
    if (!form) return std::nullopt;
    total.hessian += form->hessian;
    total.linear += form->linear;
    total.constant += form->constant;
  }
  const auto count = static_cast<double>(instance.client_count());
  total.hessian /= count;
  total.linear /= count;
  total.constant /= count;
  return total;
}

BilevelReference bilevel_reference(const ProblemInstance& instance,
                                   OuterKind kind, const ModelVector& shift) {
  if (!instance.groundTruth || (!instance.groundTruth->affine &&
                                !instance.groundTruth->point)) {
    throw Error("bilevel_reference: instance has no affine or point ground truth");
  }
  const GroundTruth& truth = *instance.groundTruth;
  if (kind == OuterKind::ShiftedNorm) {
    require(shift.size() == instance.dimension,
            "bilevel_reference: shift has the wrong dimension");
  }

  BilevelReference ref;
  ref.hStar = truth.hStar;
  if (truth.point) {
    ref.xStar = *truth.point;
  } else {
    const Matrix& a = truth.affine->a;
    const ModelVector& b = truth.affine->b;
    switch (kind) {
      case OuterKind::MinNorm:
        ref.xStar = affine_projection(a, b, ModelVector::Zero(instance.dimension));
        break;
      case OuterKind::ShiftedNorm:
        ref.xStar = affine_projection(a, b, shift);
        break;
      case OuterKind::L1:
        ref.xStar = l1_reference(a, b);
        break;
      case OuterKind::Instance: {
        const auto form = global_quadratic_form(instance, Level::Outer);
        if (!form) {
          throw Error(
              "bilevel_reference: the instance's outer objective is not "
              "quadratic; supported outer kinds are min-norm, shifted-norm, "
              "l1 (n <= 12) or a quadratic instance objective");
        }
        ref.xStar = constrained_quadratic_min(*form, a, b);
        break;
      }
    }
  }

  switch (kind) {
    case OuterKind::MinNorm:
      ref.fStar = 0.5 * ref.xStar.squaredNorm();
      ref.gradNormAtStar = ref.xStar.norm();
      break;
    case OuterKind::ShiftedNorm:
      ref.fStar = 0.5 * (ref.xStar - shift).squaredNorm();
      ref.gradNormAtStar = (ref.xStar - shift).norm();
      break;
    case OuterKind::L1: {
      ref.fStar = ref.xStar.lpNorm<1>();
      ModelVector sign = ref.xStar.unaryExpr(
          [](double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); });
      ref.gradNormAtStar = sign.norm();
      break;
    }
    case OuterKind::Instance:
      ref.fStar = instance.outer_value(ref.xStar);
      ref.gradNormAtStar = instance.outer_gradient(ref.xStar).norm();
      break;
  }
  return ref;
}

Metrics metrics(const ProblemInstance& instance, const ModelVector& x,
                const BilevelReference* reference) {
  Metrics m;
  m.f = instance.outer_value(x);
  m.h = instance.inner_value(x);
  if (instance.groundTruth) m.hGap = m.h - instance.groundTruth->hStar;
  m.dist = distance_to_solution_set(instance, x);
  if (reference) m.fGap = m.f - reference->fStar;
  return m;
}

std::optional<RegularizedOptimum> quadratic_regularized_optimum(
    const ProblemInstance& instance, double eta) {
  if (instance.feasibleSet) return std::nullopt;
  const auto inner = global_quadratic_form(instance, Level::Inner);
  const auto outer = global_quadratic_form(instance, Level::Outer);
  if (!inner || !outer) return std::nullopt;
  const Matrix hess = inner->hessian + eta * outer->hessian;
  const ModelVector lin = inner->linear + eta * outer->linear;

  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (hess + hess.transpose()));
  const Eigen::VectorXd& lam = eig.eigenvalues();
  const double cut = kRankThreshold * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
  if (lam.minCoeff() < -cut) return std::nullopt;
  const ModelVector rhs = -(eig.eigenvectors().transpose() * lin);
  ModelVector coords(lam.size());
  for (Eigen::Index j = 0; j < lam.size(); ++j)
    coords[j] = lam[j] > cut ? rhs[j] / lam[j] : 0.0;

  RegularizedOptimum out;
  out.x = eig.eigenvectors() * coords;
  // One Newton refinement step against the assembled system.
  const ModelVector residual = hess * out.x + lin;
  const ModelVector rc = eig.eigenvectors().transpose() * residual;
  for (Eigen::Index j = 0; j < lam.size(); ++j)
    coords[j] = lam[j] > cut ? rc[j] / lam[j] : 0.0;
  out.x -= eig.eigenvectors() * coords;
  out.value = instance.inner_value(out.x) + eta * instance.outer_value(out.x);
  return out;
}

RegularizedOptimum l2_residual_regularized_optimum(const Matrix& a,
                                                   const ModelVector& b,
                                                   const ModelVector& center,
                                                   double eta) {
  require(eta > 0.0, "l2 residual optimum: eta must be positive");
  require(a.rows() == b.size() && a.cols() == center.size(),
          "l2 residual optimum: shape mismatch");
  // min_x ||Ax - b|| + (eta/2)||x - center||^2 equals
  // max_{||u|| <= 1} u'(A center - b) - ||A'u||^2 / (2 eta), x = center - A'u/eta.
  const Matrix h = (a * a.transpose()) / eta;
  const ModelVector c = a * center - b;
  const ModelVector u = trust_region_solve(h, c, 1.0);
  RegularizedOptimum out;
  out.x = center - a.transpose() * u / eta;
  out.value = (a * out.x - b).norm() + 0.5 * eta * (out.x - center).squaredNorm();
  return out;
}

}  // namespace fedbilevel
