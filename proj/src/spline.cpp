#include "latentjm/spline.hpp"

#include <algorithm>
#include <cmath>

namespace latentjm {

double transform_time(TimeTransform tf, double t) {
  return tf == TimeTransform::log1p ? std::log1p(t) : t;
}

static double untransform_time(TimeTransform tf, double u) {
  return tf == TimeTransform::log1p ? std::expm1(u) : u;
}

std::vector<double> evenly_spaced_knots(int n_interior, double t_lo, double t_hi,
                                        TimeTransform tf) {
  if (n_interior < 0) throw Error(ErrorCode::InvalidKnots, "negative knot count");
  double u_lo = transform_time(tf, t_lo), u_hi = transform_time(tf, t_hi);
  std::vector<double> knots(n_interior);
  for (int i = 0; i < n_interior; ++i) {
    double u = u_lo + (u_hi - u_lo) * (i + 1) / (n_interior + 1);
    knots[i] = untransform_time(tf, u);
  }
  return knots;
}

void gauss_legendre(int n, double a, double b, std::vector<double>& nodes,
                    std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Newton iteration from the Chebyshev estimate of the i-th root of P_n.
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    nodes[i] = mid - half * x;
    nodes[n - 1 - i] = mid + half * x;
    weights[i] = half * w;
    weights[n - 1 - i] = half * w;
  }
}

static void validate_spec(const BasisSpec& spec) {
  if (spec.degree < 0) throw Error(ErrorCode::InvalidDegree, "degree must be >= 0");
  if (!(spec.t_lo < spec.t_hi)) throw Error(ErrorCode::InvalidDomain, "t_lo must be < t_hi");
  if (spec.time_transform == TimeTransform::log1p && spec.t_lo <= -1.0)
    throw Error(ErrorCode::InvalidDomain, "log1p transform requires t_lo > -1");
  double prev = spec.t_lo;
  for (double kn : spec.interior_knots) {
    if (!(kn > prev))
      throw Error(ErrorCode::InvalidKnots, "interior knots must be strictly increasing");
    if (!(kn > spec.t_lo && kn < spec.t_hi))
      throw Error(ErrorCode::InvalidKnots, "interior knot outside the open domain");
    prev = kn;
  }
}

// Nonzero raw basis values at u: fills values[0..degree] for indices
// span-degree .. span (de Boor, clamped knot vector).
static int basis_funs(const std::vector<double>& knots, int degree, int q, double u,
                      double* values) {
  int lo = degree, hi = q;  // valid span indices are in [degree, q-1]
  int span;
  if (u >= knots[q]) {
    span = q - 1;
  } else {
    // binary search for span with knots[span] <= u < knots[span+1]
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      if (u < knots[mid])
        hi = mid;
      else
        lo = mid;
    }
    span = lo;
  }
  double left[32], right[32];
  values[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = u - knots[span + 1 - j];
    right[j] = knots[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      double tmp = values[r] / (right[r + 1] + left[j - r]);
      values[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    values[j] = saved;
  }
  return span;
}

Eigen::VectorXd OrthoBasis::eval_raw(double t) const {
  if (t < spec_.t_lo || t > spec_.t_hi)
    throw Error(ErrorCode::OutOfDomain, "basis evaluation outside [t_lo, t_hi]");
  double u = transform_time(spec_.time_transform, t);
  const int q = spec_.q(), d = spec_.degree;
  double vals[32];
  int span = basis_funs(knots_u_, d, q, u, vals);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(q);
  for (int r = 0; r <= d; ++r) out[span - d + r] = vals[r];
  return out;
}

Eigen::VectorXd OrthoBasis::eval(double t) const { return gram_root_inverse_ * eval_raw(t); }

OrthoBasis build_basis(const BasisSpec& spec) {
  validate_spec(spec);
  if (spec.degree + 1 > 31) throw Error(ErrorCode::InvalidDegree, "degree too large");

  OrthoBasis basis;
  basis.spec_ = spec;
  const int q = spec.q(), d = spec.degree;

  double u_lo = transform_time(spec.time_transform, spec.t_lo);
  double u_hi = transform_time(spec.time_transform, spec.t_hi);
  basis.knots_u_.assign(d + 1, u_lo);
  for (double kn : spec.interior_knots)
    basis.knots_u_.push_back(transform_time(spec.time_transform, kn));
  basis.knots_u_.insert(basis.knots_u_.end(), d + 1, u_hi);

  basis.breaks_t_.clear();
  basis.breaks_t_.push_back(spec.t_lo);
  for (double kn : spec.interior_knots) basis.breaks_t_.push_back(kn);
  basis.breaks_t_.push_back(spec.t_hi);

  // Raw Gram matrix, integrated panel by panel in study time. The product of
  // two degree-d pieces is a degree-2d polynomial on the identity scale, so
  // d+1 Gauss-Legendre points are exact there; the log1p scale integrand is
  // smooth but not polynomial and gets a high fixed order instead.
  int n_gl = spec.time_transform == TimeTransform::identity ? d + 2 : 48;
  basis.gram_root_inverse_ = Eigen::MatrixXd::Identity(q, q);  // placeholder for eval_raw
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(q, q);
  std::vector<double> nodes, weights;
  for (size_t p = 0; p + 1 < basis.breaks_t_.size(); ++p) {
    gauss_legendre(n_gl, basis.breaks_t_[p], basis.breaks_t_[p + 1], nodes, weights);
    for (int g = 0; g < n_gl; ++g) {
      Eigen::VectorXd b = basis.eval_raw(nodes[g]);
      gram.selfadjointView<Eigen::Lower>().rankUpdate(b, weights[g]);
    }
  }
  gram = gram.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  if (es.info() != Eigen::Success)
    throw Error(ErrorCode::RankDeficient, "Gram eigendecomposition failed");
  double eig_min = es.eigenvalues().minCoeff();
  if (eig_min <= 1e-14 * es.eigenvalues().maxCoeff())
    throw Error(ErrorCode::RankDeficient, "Gram matrix numerically singular");
  Eigen::VectorXd inv_root = es.eigenvalues().array().rsqrt();
  basis.gram_root_inverse_ =
      es.eigenvectors() * inv_root.asDiagonal() * es.eigenvectors().transpose();
  return basis;
}

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidKnots: return "InvalidKnots";
    case ErrorCode::InvalidDegree: return "InvalidDegree";
    case ErrorCode::InvalidDomain: return "InvalidDomain";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::InvalidOrder: return "InvalidOrder";
    case ErrorCode::InvalidVariance: return "InvalidVariance";
    case ErrorCode::DegenerateLikelihood: return "DegenerateLikelihood";
    case ErrorCode::OrphanLongitudinal: return "OrphanLongitudinal";
    case ErrorCode::FollowupAfterEvent: return "FollowupAfterEvent";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateCell: return "DuplicateCell";
    case ErrorCode::NoData: return "NoData";
    case ErrorCode::DegenerateLatentProcess: return "DegenerateLatentProcess";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::ZeroLikelihood: return "ZeroLikelihood";
    case ErrorCode::UnderdeterminedInit: return "UnderdeterminedInit";
    case ErrorCode::InsufficientReplicates: return "InsufficientReplicates";
    case ErrorCode::EmptyRiskSet: return "EmptyRiskSet";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::IoError: return "IoError";
  }
  return "Error";
}

}  // namespace latentjm
