#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentjm/data_model.hpp"
#include "latentjm/em.hpp"

namespace latentjm {

struct BootstrapRow {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 1.0;
  bool has_p = false;       // Wald p reported for beta, eta, gamma only
  bool log_scale_ci = false;  // variance parameters
};

struct BootstrapResult {
  std::vector<BootstrapRow> rows;
  int B = 0;
  int n_failed = 0;
  bool unstable = false;  // more than 20% of replicate fits failed
  FitResult base_fit;
};

// Nonparametric bootstrap over subjects: B resampled refits, variance
// 1/(B-1) sum (phi_b - phi_bar)^2. Variance parameters get log-scale
// intervals; location parameters get estimate +- 1.96 SE and Wald p-values.
BootstrapResult bootstrap_inference(const std::vector<SubjectRecord>& data,
                                    const ModelSpec& spec, const FitConfig& fit_config,
                                    int B, uint64_t seed);

// Column-wise 1/(B-1) sum (phi_b - phi_bar)^2, square-rooted.
Eigen::VectorXd bootstrap_se(const Eigen::MatrixXd& replicate_estimates);

void write_bootstrap_csv(const BootstrapResult& result, const std::string& path);

}  // namespace latentjm
