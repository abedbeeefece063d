#pragma once

#include <Eigen/Dense>
#include <vector>

#include "latentjm/errors.hpp"

namespace latentjm {

enum class TimeTransform { identity, log1p };

double transform_time(TimeTransform tf, double t);

// Configuration of a B-spline basis on a closed study-time interval.
// All evaluation happens after `time_transform` is applied, on both the
// longitudinal and the survival side.
struct BasisSpec {
  int degree = 3;
  std::vector<double> interior_knots;  // study-time units, strictly increasing, inside (t_lo, t_hi)
  double t_lo = 0.0;
  double t_hi = 1.0;
  TimeTransform time_transform = TimeTransform::identity;

  int q() const { return degree + 1 + static_cast<int>(interior_knots.size()); }
};

// Interior knots evenly spaced on the (possibly transformed) domain,
// reported in study-time units.
std::vector<double> evenly_spaced_knots(int n_interior, double t_lo, double t_hi,
                                        TimeTransform tf = TimeTransform::identity);

// n-point Gauss-Legendre rule on [a, b].
void gauss_legendre(int n, double a, double b, std::vector<double>& nodes,
                    std::vector<double>& weights);

// B-spline basis orthonormalized with respect to the L2 inner product on
// [t_lo, t_hi]: integral of b(t) b(t)^T dt equals the identity.
class OrthoBasis {
 public:
  const BasisSpec& spec() const { return spec_; }
  int q() const { return spec_.q(); }
  const Eigen::MatrixXd& gram_root_inverse() const { return gram_root_inverse_; }

  // Orthonormalized basis values; throws OutOfDomain outside [t_lo, t_hi].
  Eigen::VectorXd eval(double t) const;

  // Raw (pre-orthonormalization) clamped B-spline values; sums to 1.
  Eigen::VectorXd eval_raw(double t) const;

  // Panel boundaries in study time (domain endpoints plus interior knots).
  const std::vector<double>& breakpoints() const { return breaks_t_; }

 private:
  friend OrthoBasis build_basis(const BasisSpec& spec);

  BasisSpec spec_;
  std::vector<double> knots_u_;  // clamped knot vector on the transformed scale
  std::vector<double> breaks_t_;
  Eigen::MatrixXd gram_root_inverse_;  // inverse symmetric square root of the raw Gram
};

OrthoBasis build_basis(const BasisSpec& spec);

inline Eigen::VectorXd eval_basis(const OrthoBasis& basis, double t) { return basis.eval(t); }

}  // namespace latentjm
