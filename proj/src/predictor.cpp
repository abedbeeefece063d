#include "latentjm/predictor.hpp"

#include <algorithm>
#include <cmath>

#include "latentjm/threading.hpp"

namespace latentjm {

namespace {

SubjectRecord truncate_history(const SubjectRecord& s, double landmark) {
  SubjectRecord out = s;
  int keep = 0;
  while (keep < s.n_visits() && s.visit_times[keep] <= landmark) ++keep;
  out.visit_times.assign(s.visit_times.begin(), s.visit_times.begin() + keep);
  out.y = s.y.topRows(keep);
  out.observed = s.observed.topRows(keep);
  for (size_t j = 0; j < out.x.size(); ++j) out.x[j] = s.x[j].topRows(keep);
  return out;
}

}  // namespace

// The posterior given (T > s, Y^{(s)}) replaces the event-time density in the
// E-step integrand with the survival factor S(s | alpha), so the conditional
// probability is a ratio of two marginal integrals sharing the longitudinal
// weight:
//   P = 1 - Int S(s+t|a) f(Y|a) f(a) da / Int S(s|a) f(Y|a) f(a) da.
PredictionResult conditional_event_probability(const PredictionQuery& query,
                                               const ParameterSet& params,
                                               const OrthoBasis& basis,
                                               const GaussHermiteRule& rule) {
  if (query.s < 0.0 || query.t < 0.0)
    throw Error(ErrorCode::InvalidSpec, "landmark and horizon must be nonnegative");
  if ((params.D.array() <= 0.0).any())
    throw Error(ErrorCode::InvalidVariance, "D must be positive");
  const SubjectRecord subject = truncate_history(query.subject_history, query.s);
  const int k = params.k();
  const int J = static_cast<int>(params.sigma2.size());
  const StepHazard& hz = params.hazard;

  PredictionResult out;
  out.extrapolated =
      hz.jump_times.empty() || query.s + query.t > hz.jump_times.back();
  if (query.t == 0.0) {
    out.probability = 0.0;
    return out;
  }

  const int G = static_cast<int>(std::pow(static_cast<double>(rule.n), k));
  Eigen::MatrixXd node_alpha(G, k);
  Eigen::VectorXd logw(G);
  Eigen::VectorXd scale = (2.0 * params.D.array()).sqrt();
  {
    std::vector<int> idx(k, 0);
    Eigen::VectorXd lw = rule.weights.array().log();
    for (int g = 0; g < G; ++g) {
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) {
        node_alpha(g, kk) = scale[kk] * rule.nodes[idx[kk]];
        acc += lw[idx[kk]];
      }
      logw[g] = acc;
      for (int kk = 0; kk < k; ++kk) {
        if (++idx[kk] < rule.n) break;
        idx[kk] = 0;
      }
    }
  }

  // Longitudinal log-density of the truncated history, quadratic in alpha.
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd l = Eigen::VectorXd::Zero(k);
  double c = 0.0;
  for (int v = 0; v < subject.n_visits(); ++v) {
    Eigen::VectorXd b = basis.eval(subject.visit_times[v]);
    double m = b.dot(params.theta);
    Eigen::VectorXd a = params.Theta.transpose() * b;
    for (int j = 0; j < J; ++j) {
      if (!subject.observed(v, j)) continue;
      double xb =
          subject.x[j].cols() > 0 ? subject.x[j].row(v).dot(params.beta0[j]) : 0.0;
      double resid = subject.y(v, j) - xb - m * params.beta1[j];
      double inv_s2 = 1.0 / params.sigma2[j];
      double b1 = params.beta1[j];
      Q.noalias() += (b1 * b1 * inv_s2) * (a * a.transpose());
      l.noalias() += (b1 * resid * inv_s2) * a;
      c += -0.5 * std::log(2.0 * M_PI * params.sigma2[j]) - 0.5 * resid * resid * inv_s2;
    }
  }
  Eigen::VectorXd loglong = logw;
  loglong.array() += c;
  loglong.noalias() += node_alpha * l;
  loglong.noalias() -= 0.5 * (node_alpha * Q).cwiseProduct(node_alpha).rowwise().sum();

  // Cumulative hazards at s and s + t per node.
  int n_s = hz.n_jumps_upto(query.s);
  int n_st = hz.n_jumps_upto(query.s + query.t);
  Eigen::VectorXd cum_s = Eigen::VectorXd::Zero(G), cum_st = Eigen::VectorXd::Zero(G);
  for (int u = 0; u < n_st; ++u) {
    Eigen::VectorXd b = basis.eval(hz.jump_times[u]);
    double sv = hz.increments[u] *
                std::exp(subject.z_at(hz.jump_times[u]).dot(params.eta) +
                         params.gamma * b.dot(params.theta));
    Eigen::VectorXd a_g = params.gamma * (params.Theta.transpose() * b);
    Eigen::VectorXd w2 = (node_alpha * a_g).array().exp();
    cum_st.noalias() += sv * w2;
    if (u < n_s) cum_s.noalias() += sv * w2;
  }

  Eigen::VectorXd log_num = loglong - cum_st;   // S(s+t | alpha) weighted
  Eigen::VectorXd log_den = loglong - cum_s;    // S(s | alpha) weighted
  double shift = log_den.maxCoeff();
  if (!std::isfinite(shift))
    throw Error(ErrorCode::DegenerateLikelihood, "conditional posterior degenerate");
  double num = (log_num.array() - shift).exp().sum();
  double den = (log_den.array() - shift).exp().sum();
  if (!(den > 0.0) || !std::isfinite(den))
    throw Error(ErrorCode::DegenerateLikelihood, "conditional posterior degenerate");
  out.probability = std::clamp(1.0 - num / den, 0.0, 1.0);
  return out;
}

PredictionErrorResult prediction_error(const std::vector<SubjectRecord>& data,
                                       const ParameterSet& params, const OrthoBasis& basis,
                                       const GaussHermiteRule& rule, double s, double t) {
  std::vector<int> at_risk;
  for (size_t i = 0; i < data.size(); ++i)
    if (data[i].event_time > s) at_risk.push_back(static_cast<int>(i));
  if (at_risk.empty()) throw Error(ErrorCode::EmptyRiskSet, "no subjects at risk at s");

  std::vector<double> contrib(at_risk.size(), 0.0);
  parallel_for(static_cast<int>(at_risk.size()), [&](int idx) {
    const SubjectRecord& subj = data[at_risk[idx]];
    PredictionQuery query{subj, s, t};
    double s_hat =
        1.0 - conditional_event_probability(query, params, basis, rule).probability;
    if (subj.event_time > s + t) {
      contrib[idx] = std::abs(1.0 - s_hat);
    } else if (subj.event_indicator == 1) {
      contrib[idx] = s_hat;
    } else {
      // Censored inside (s, s+t]: split between the two outcomes using the
      // model's own conditional survival ratio.
      PredictionQuery at_cens{subj, s, subj.event_time - s};
      double s_at_cens =
          1.0 - conditional_event_probability(at_cens, params, basis, rule).probability;
      double ratio = s_at_cens > 0.0 ? std::min(s_hat / s_at_cens, 1.0) : 1.0;
      contrib[idx] = std::abs(1.0 - s_hat) * ratio + s_hat * (1.0 - ratio);
    }
  });
  PredictionErrorResult out;
  out.n_risk = static_cast<int>(at_risk.size());
  double total = 0.0;
  for (double v : contrib) total += v;
  out.err = total / out.n_risk;
  return out;
}

}  // namespace latentjm
