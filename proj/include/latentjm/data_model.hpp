#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "latentjm/errors.hpp"
#include "latentjm/spline.hpp"

namespace latentjm {

// Model dimensions: J biomarkers sharing one latent process with k principal
// component curves, p[j] longitudinal covariates per biomarker, r survival
// covariates.
struct ModelSpec {
  int J = 1;
  int k = 1;
  BasisSpec basis;
  std::vector<int> p;  // size J
  int r = 0;

  void validate() const;
};

// Right-continuous step function for a time-dependent survival covariate.
struct StepCovariate {
  std::vector<double> change_times;  // increasing, first entry is the start of follow-up
  Eigen::MatrixXd values;            // one row per change time

  Eigen::VectorXd at(double t) const;
};

struct SubjectRecord {
  std::string id;
  std::vector<double> visit_times;  // nondecreasing, all <= event_time
  Eigen::MatrixXd y;                // n_visits x J
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> observed;  // n_visits x J
  std::vector<Eigen::MatrixXd> x;   // J matrices, n_visits x p[j]
  Eigen::VectorXd z;                // time-fixed survival covariates (r)
  StepCovariate z_step;             // used instead of z when z_is_step
  bool z_is_step = false;
  double event_time = 0.0;
  int event_indicator = 0;          // 1 = event, 0 = censored

  int n_visits() const { return static_cast<int>(visit_times.size()); }
  Eigen::VectorXd z_at(double t) const { return z_is_step ? z_step.at(t) : z; }
};

// Nonparametric cumulative hazard: point masses at observed event times.
struct StepHazard {
  std::vector<double> jump_times;  // strictly increasing
  std::vector<double> increments;  // >= 0

  int n_jumps() const { return static_cast<int>(jump_times.size()); }
  double cumulative(double t) const;              // sum of increments with jump_time <= t
  int n_jumps_upto(double t) const;               // count of jump_times <= t
  int find_jump(double t) const;                  // exact match index or -1
};

// All model parameters psi = (phi, Lambda).
struct ParameterSet {
  std::vector<Eigen::VectorXd> beta0;  // J vectors, p[j] each
  Eigen::VectorXd beta1;               // J, beta1[0] pinned to 1
  Eigen::VectorXd sigma2;              // J residual variances
  Eigen::VectorXd theta;               // q mean-curve coefficients
  Eigen::MatrixXd Theta;               // q x k principal component coefficients
  Eigen::VectorXd D;                   // k random-effect variances (diagonal)
  Eigen::VectorXd eta;                 // r survival coefficients
  double gamma = 0.0;                  // latent-process association
  StepHazard hazard;

  int k() const { return static_cast<int>(D.size()); }
  int q() const { return static_cast<int>(theta.size()); }
  void validate(const ModelSpec& spec) const;

  // Number of Euclidean parameters in phi (hazard jumps excluded).
  static int dim_phi(const ModelSpec& spec);
};

// Latent trajectory mu_i(t) = b(t)' theta + b(t)' Theta alpha.
double latent_trajectory(const ParameterSet& params, const OrthoBasis& basis,
                         const Eigen::VectorXd& alpha, double t);

// --- dataset I/O ---------------------------------------------------------
//
// Longitudinal CSV (long format): id,time,biomarker_index,value,x_1..x_pmax
// Survival CSV: id,event_time,event_indicator,z_1..z_r

std::vector<SubjectRecord> load_dataset(const std::string& longitudinal_file,
                                        const std::string& survival_file,
                                        const ModelSpec& spec);

void write_dataset(const std::vector<SubjectRecord>& data, const ModelSpec& spec,
                   const std::string& longitudinal_file, const std::string& survival_file);

// --- parameter / spec JSON ----------------------------------------------

std::string basis_spec_to_json(const BasisSpec& spec);
BasisSpec basis_spec_from_json(const std::string& text);

std::string params_to_json(const ParameterSet& params, const ModelSpec& spec);
void params_from_json(const std::string& text, ParameterSet& params, ModelSpec& spec);

void write_hazard_csv(const StepHazard& hazard, const std::string& path);

}  // namespace latentjm
