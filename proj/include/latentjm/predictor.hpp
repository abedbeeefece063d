#pragma once

#include "latentjm/data_model.hpp"
#include "latentjm/quadrature.hpp"
#include "latentjm/spline.hpp"

namespace latentjm {

// Landmark prediction: probability of an event by s + t for a subject alive
// at s, conditional on biomarker history up to s.
struct PredictionQuery {
  SubjectRecord subject_history;  // visits with time <= s
  double s = 0.0;                 // landmark time
  double t = 0.0;                 // horizon increment
};

struct PredictionResult {
  double probability = 0.0;
  bool extrapolated = false;  // s + t lies beyond the last hazard jump
};

PredictionResult conditional_event_probability(const PredictionQuery& query,
                                               const ParameterSet& params,
                                               const OrthoBasis& basis,
                                               const GaussHermiteRule& rule);

struct PredictionErrorResult {
  double err = 0.0;
  int n_risk = 0;
};

// Censoring-weighted prediction error at s + t given history up to s,
// averaged over the subjects at risk at s.
PredictionErrorResult prediction_error(const std::vector<SubjectRecord>& data,
                                       const ParameterSet& params, const OrthoBasis& basis,
                                       const GaussHermiteRule& rule, double s, double t);

}  // namespace latentjm
