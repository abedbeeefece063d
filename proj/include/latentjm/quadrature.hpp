#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "latentjm/data_model.hpp"
#include "latentjm/spline.hpp"

namespace latentjm {

// Gauss-Hermite rule for the weight function exp(-x^2); exact for
// polynomials of degree <= 2n-1.
struct GaussHermiteRule {
  int n = 0;
  Eigen::VectorXd nodes;    // ascending, symmetric about 0
  Eigen::VectorXd weights;  // positive, sum = sqrt(pi)
};

GaussHermiteRule gauss_hermite(int n);

// Per-subject posterior expectations E{ . | Y_i, T_i, Delta_i, psi} of every
// random-effect functional the M-step consumes. Survival-side expectations
// are stored at each hazard jump time t_u <= T_i, in jump order.
struct PosteriorSummary {
  double loglik = 0.0;             // log f(Y_i, T_i, Delta_i | psi)
  Eigen::VectorXd e_alpha;         // k
  Eigen::MatrixXd e_alpha_outer;   // k x k, E[alpha alpha']
  Eigen::MatrixXd e_resid_sq;      // n_visits x J, E[(residual)^2], 0 where unobserved
  int n_jumps = 0;                 // jumps with t_u <= T_i
  Eigen::VectorXd e_w;             // n_jumps, E exp(gamma b(t_u)' Theta alpha)
  Eigen::MatrixXd e_w_alpha;       // k x n_jumps, E[exp(.) alpha]
  Eigen::MatrixXd e_w_alpha_outer; // k(k+1)/2 x n_jumps, packed E[exp(.) alpha alpha']
  std::shared_ptr<const std::vector<double>> jump_times;

  // Packed symmetric access, a and b in [0, k).
  static int pack_index(int a, int b) {
    if (a > b) std::swap(a, b);
    return b * (b + 1) / 2 + a;
  }
  double e_w_outer(int u, int a, int b) const { return e_w_alpha_outer(pack_index(a, b), u); }

  // E exp(gamma b(t)' Theta alpha) at a stored jump time.
  double e_exp_link(double t) const;
};

// Shared evaluation machinery for one (data, params, basis, rule) tuple.
// Immutable after construction; subject-level calls are safe to run
// concurrently.
class PosteriorEngine {
 public:
  PosteriorEngine(const std::vector<SubjectRecord>& data, const ParameterSet& params,
                  const OrthoBasis& basis, const GaussHermiteRule& rule);

  int n_subjects() const { return static_cast<int>(subjects_.size()); }
  double subject_loglik(int i) const;
  PosteriorSummary summarize(int i) const;
  double expectation(int i, const std::function<double(const Eigen::VectorXd&)>& h) const;

  // Sum of subject log-likelihoods; parallel over subjects with an ordered
  // reduction, so the result is identical for any thread count.
  double total_loglik() const;

  const std::vector<double>& jump_times() const { return *jump_times_; }

 private:
  struct SubjectTerms {
    Eigen::MatrixXd Q;        // k x k quadratic coefficient of the longitudinal log-density
    Eigen::VectorXd l;        // k linear coefficient
    double c = 0.0;           // alpha-free longitudinal constant
    double d = 0.0;           // alpha-free event-density constant (Delta = 1 only)
    int event_jump = -1;      // jump index of the event time when Delta = 1
    int n_jumps = 0;          // jumps with t_u <= T_i
    bool fixed_z = true;
    double zeta = 1.0;        // exp(Z' eta) for time-fixed Z
    Eigen::VectorXd svec;     // per-jump lambda_u exp(Z(t_u)' eta + gamma b' theta), step-Z only
    // observed cells, flattened
    std::vector<int> cell_visit, cell_j;
    std::vector<double> cell_resid;
    int n_visits = 0;
    Eigen::MatrixXd a_vis;    // k x n_visits, Theta' b(t_iu)
  };

  void node_logterms(int i, Eigen::VectorXd& logterm) const;

  int k_ = 0, n_nodes_total_ = 0, J_ = 0;
  double gamma_ = 0.0;
  Eigen::VectorXd beta1_, sigma2_;
  Eigen::MatrixXd node_alpha_;           // G x k
  Eigen::VectorXd log_node_weight_;      // G
  std::shared_ptr<const std::vector<double>> jump_times_;
  Eigen::VectorXd hazard_scale_;         // U, lambda_u exp(gamma b' theta)
  Eigen::MatrixXd link_expo_;            // G x U, gamma (Theta' b_u)' alpha_g
  Eigen::MatrixXd link_exp_;             // G x U, exp of the above
  Eigen::VectorXd cum_fixed_zero_;       // G zeros, convenience
  Eigen::MatrixXd cum_prefix_;           // G x U, prefix sums of hazard_scale * link_exp
  std::vector<SubjectTerms> subjects_;
};

// E{h(alpha_i) | Y_i, T_i, Delta_i, psi} for a caller-supplied h, evaluated
// with a k-dimensional product Gauss-Hermite rule after the substitution
// alpha_kappa = sqrt(2 D_kk) x_kappa.
double posterior_expectation(const SubjectRecord& subject, const ParameterSet& params,
                             const OrthoBasis& basis, const GaussHermiteRule& rule,
                             const std::function<double(const Eigen::VectorXd&)>& h);

// One pass over quadrature nodes filling every expectation the M-step needs.
// needed_times must be a subset of the hazard jump times.
PosteriorSummary compute_posterior_summary(const SubjectRecord& subject,
                                           const ParameterSet& params, const OrthoBasis& basis,
                                           const GaussHermiteRule& rule,
                                           const std::vector<double>& needed_times);

}  // namespace latentjm
