#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "latentjm/data_model.hpp"
#include "latentjm/quadrature.hpp"
#include "latentjm/spline.hpp"

namespace latentjm {

struct FitConfig {
  int max_iters = 200;
  double loglik_rel_tol = 1e-6;
  double param_abs_tol = 1e-4;
  int quad_nodes = 20;
  double newton_damping = 1.0;        // initial step factor, halved on likelihood decrease
  int max_halvings = 12;
  bool orthonormalize_each_iter = false;
  bool update_gamma = true;           // freeze gamma at its initial value when false
  double min_variance = 1e-10;        // floor for sigma2 and D

  void validate() const;
};

struct FitResult {
  ParameterSet params;                // orthonormalized, sign-fixed
  std::vector<double> loglik_trace;   // observed log-likelihood per iteration
  bool converged = false;
  std::string reason;
  int n_iters = 0;
  double aic = 0.0;                   // -2 loglik + 2 dim(phi)
  Eigen::VectorXd pc_variance_proportions;  // D_kk / tr(D)
  bool monotonicity_violation = false;
  bool variance_floored = false;

  double loglik() const { return loglik_trace.back(); }
};

// One damped Newton-Raphson step: value = current + damping * info^{-1} score.
struct NewtonUpdate {
  Eigen::VectorXd score;
  Eigen::MatrixXd info;
  Eigen::VectorXd direction;
  Eigen::VectorXd value;
};

// Observed log-likelihood (4): per-subject quadrature on the same integrand
// as the E-step denominator, summed over subjects.
double observed_loglik(const std::vector<SubjectRecord>& data, const ParameterSet& params,
                       const OrthoBasis& basis, const GaussHermiteRule& rule);

std::vector<PosteriorSummary> e_step(const std::vector<SubjectRecord>& data,
                                     const ParameterSet& params, const OrthoBasis& basis,
                                     const GaussHermiteRule& rule);

// Closed-form M-step updates (all right-hand sides at the current params).
Eigen::VectorXd update_sigma2(const std::vector<SubjectRecord>& data,
                              const std::vector<PosteriorSummary>& posteriors,
                              const ParameterSet& params, double min_variance = 1e-10);

Eigen::VectorXd update_D(const std::vector<PosteriorSummary>& posteriors,
                         double min_variance = 1e-10);

Eigen::VectorXd update_beta1(const std::vector<SubjectRecord>& data,
                             const std::vector<PosteriorSummary>& posteriors,
                             const ParameterSet& params, const OrthoBasis& basis);

// Breslow-type cumulative-hazard update.
StepHazard update_hazard(const std::vector<SubjectRecord>& data,
                         const std::vector<PosteriorSummary>& posteriors,
                         const ParameterSet& params, const OrthoBasis& basis);

// Newton-Raphson one-steps.
std::vector<NewtonUpdate> newton_step_beta0(const std::vector<SubjectRecord>& data,
                                            const std::vector<PosteriorSummary>& posteriors,
                                            const ParameterSet& params, const OrthoBasis& basis,
                                            double damping = 1.0);

NewtonUpdate newton_step_eta(const std::vector<SubjectRecord>& data,
                             const std::vector<PosteriorSummary>& posteriors,
                             const ParameterSet& params, const OrthoBasis& basis,
                             double damping = 1.0);

NewtonUpdate newton_step_gamma(const std::vector<SubjectRecord>& data,
                               const std::vector<PosteriorSummary>& posteriors,
                               const ParameterSet& params, const OrthoBasis& basis,
                               double damping = 1.0);

NewtonUpdate newton_step_theta(const std::vector<SubjectRecord>& data,
                               const std::vector<PosteriorSummary>& posteriors,
                               const ParameterSet& params, const OrthoBasis& basis,
                               double damping = 1.0);

std::vector<NewtonUpdate> newton_step_Theta(const std::vector<SubjectRecord>& data,
                                            const std::vector<PosteriorSummary>& posteriors,
                                            const ParameterSet& params, const OrthoBasis& basis,
                                            double damping = 1.0);

// Canonical form: Theta' Theta = I, D diagonal nonincreasing, first nonzero
// entry of each column positive. Preserves the latent covariance kernel
// b(t)' Theta D Theta' b(s) exactly.
ParameterSet orthonormalize(const ParameterSet& params);

ParameterSet initialize(const std::vector<SubjectRecord>& data, const ModelSpec& spec);

FitResult fit(const std::vector<SubjectRecord>& data, const ModelSpec& spec,
              const FitConfig& config);

}  // namespace latentjm
