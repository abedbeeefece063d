#include "latentjm/quadrature.hpp"

#include <algorithm>
#include <cmath>

#include "latentjm/threading.hpp"

namespace latentjm {

GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw Error(ErrorCode::InvalidOrder, "Gauss-Hermite order must be >= 1");
  // Golub-Welsch on the Jacobi matrix of the (physicists') Hermite polynomials.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    double b = std::sqrt(0.5 * i);
    jac(i, i - 1) = b;
    jac(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  const double mu0 = std::sqrt(M_PI);
  GaussHermiteRule rule;
  rule.n = n;
  rule.nodes = es.eigenvalues();
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = mu0 * v0 * v0;
  }
  // Enforce exact symmetry of the +/- node pairs.
  for (int i = 0; i < n / 2; ++i) {
    int j = n - 1 - i;
    double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.weights[i] = w;
    rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

double PosteriorSummary::e_exp_link(double t) const {
  if (!jump_times) throw Error(ErrorCode::InvalidSpec, "summary has no jump times");
  auto it = std::lower_bound(jump_times->begin(), jump_times->end(), t);
  if (it == jump_times->end() || *it != t)
    throw Error(ErrorCode::InvalidSpec, "time is not a stored hazard jump time");
  int u = static_cast<int>(it - jump_times->begin());
  if (u >= n_jumps)
    throw Error(ErrorCode::InvalidSpec, "requested time lies beyond the subject's follow-up");
  return e_w[u];
}

PosteriorEngine::PosteriorEngine(const std::vector<SubjectRecord>& data,
                                 const ParameterSet& params, const OrthoBasis& basis,
                                 const GaussHermiteRule& rule) {
  k_ = params.k();
  J_ = static_cast<int>(params.sigma2.size());
  gamma_ = params.gamma;
  beta1_ = params.beta1;
  sigma2_ = params.sigma2;
  if ((params.D.array() <= 0.0).any())
    throw Error(ErrorCode::InvalidVariance, "D must be positive for quadrature");
  if ((params.sigma2.array() <= 0.0).any())
    throw Error(ErrorCode::InvalidVariance, "sigma2 must be positive for quadrature");

  // Tensor-product node grid after the substitution alpha = sqrt(2 D) x,
  // which turns the N(0, D) prior into the Hermite weight up to pi^{-k/2}.
  double g_total = std::pow(static_cast<double>(rule.n), k_);
  if (g_total > 2e6)
    throw Error(ErrorCode::InvalidSpec, "quadrature grid too large (reduce nodes or k)");
  n_nodes_total_ = static_cast<int>(g_total);
  node_alpha_.resize(n_nodes_total_, k_);
  log_node_weight_.resize(n_nodes_total_);
  Eigen::VectorXd scale = (2.0 * params.D.array()).sqrt();
  Eigen::VectorXd logw = rule.weights.array().log();
  std::vector<int> idx(k_, 0);
  for (int g = 0; g < n_nodes_total_; ++g) {
    double lw = 0.0;
    for (int kk = 0; kk < k_; ++kk) {
      node_alpha_(g, kk) = scale[kk] * rule.nodes[idx[kk]];
      lw += logw[idx[kk]];
    }
    log_node_weight_[g] = lw;
    for (int kk = 0; kk < k_; ++kk) {
      if (++idx[kk] < rule.n) break;
      idx[kk] = 0;
    }
  }

  // Shared per-jump-time quantities.
  const StepHazard& hz = params.hazard;
  jump_times_ = std::make_shared<const std::vector<double>>(hz.jump_times);
  const int U = hz.n_jumps();
  hazard_scale_.resize(U);
  Eigen::MatrixXd link_coef(k_, U);  // gamma Theta' b(t_u)
  std::vector<Eigen::VectorXd> b_at_jump(U);
  for (int u = 0; u < U; ++u) {
    b_at_jump[u] = basis.eval(hz.jump_times[u]);
    hazard_scale_[u] = hz.increments[u] * std::exp(gamma_ * b_at_jump[u].dot(params.theta));
    link_coef.col(u) = gamma_ * (params.Theta.transpose() * b_at_jump[u]);
  }
  link_expo_.noalias() = node_alpha_ * link_coef;
  link_exp_ = link_expo_.array().exp();
  cum_prefix_.resize(n_nodes_total_, U);
  for (int u = 0; u < U; ++u) {
    cum_prefix_.col(u) = hazard_scale_[u] * link_exp_.col(u);
    if (u > 0) cum_prefix_.col(u) += cum_prefix_.col(u - 1);
  }

  // Per-subject terms. The longitudinal log-density is quadratic in alpha:
  // c - alpha' Q alpha / 2 + l' alpha.
  subjects_.resize(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    const SubjectRecord& s = data[i];
    SubjectTerms& st = subjects_[i];
    st.n_visits = s.n_visits();
    st.Q = Eigen::MatrixXd::Zero(k_, k_);
    st.l = Eigen::VectorXd::Zero(k_);
    st.a_vis.resize(k_, st.n_visits);
    for (int v = 0; v < st.n_visits; ++v) {
      Eigen::VectorXd b = basis.eval(s.visit_times[v]);
      double mean_curve = b.dot(params.theta);
      st.a_vis.col(v) = params.Theta.transpose() * b;
      for (int j = 0; j < J_; ++j) {
        if (!s.observed(v, j)) continue;
        double xb = s.x[j].cols() > 0 ? s.x[j].row(v).dot(params.beta0[j]) : 0.0;
        double resid = s.y(v, j) - xb - mean_curve * params.beta1[j];
        double inv_s2 = 1.0 / params.sigma2[j];
        double b1 = params.beta1[j];
        st.Q.noalias() += (b1 * b1 * inv_s2) * (st.a_vis.col(v) * st.a_vis.col(v).transpose());
        st.l.noalias() += (b1 * resid * inv_s2) * st.a_vis.col(v);
        st.c += -0.5 * std::log(2.0 * M_PI * params.sigma2[j]) -
                0.5 * resid * resid * inv_s2;
        st.cell_visit.push_back(v);
        st.cell_j.push_back(j);
        st.cell_resid.push_back(resid);
      }
    }

    st.n_jumps = hz.n_jumps_upto(s.event_time);
    st.fixed_z = !s.z_is_step;
    if (st.fixed_z) {
      st.zeta = std::exp(s.z.dot(params.eta));
    } else {
      st.svec.resize(st.n_jumps);
      for (int u = 0; u < st.n_jumps; ++u)
        st.svec[u] = hazard_scale_[u] * std::exp(s.z_at(hz.jump_times[u]).dot(params.eta));
    }
    if (s.event_indicator == 1) {
      int ue = hz.find_jump(s.event_time);
      if (ue < 0 || hz.increments[ue] <= 0.0)
        throw Error(ErrorCode::ZeroLikelihood,
                    "event at " + std::to_string(s.event_time) +
                        " has no hazard mass (subject " + s.id + ")");
      st.event_jump = ue;
      st.d = std::log(hz.increments[ue]) + s.z_at(s.event_time).dot(params.eta) +
             gamma_ * b_at_jump[ue].dot(params.theta);
    }
  }
}

void PosteriorEngine::node_logterms(int i, Eigen::VectorXd& logterm) const {
  const SubjectTerms& st = subjects_[i];
  logterm = log_node_weight_;
  logterm.array() += st.c + (st.event_jump >= 0 ? st.d : 0.0);
  logterm.noalias() += node_alpha_ * st.l;
  logterm.noalias() -=
      0.5 * (node_alpha_ * st.Q).cwiseProduct(node_alpha_).rowwise().sum();
  if (st.event_jump >= 0) logterm += link_expo_.col(st.event_jump);
  if (st.n_jumps > 0) {
    if (st.fixed_z)
      logterm.noalias() -= st.zeta * cum_prefix_.col(st.n_jumps - 1);
    else
      logterm.noalias() -= link_exp_.leftCols(st.n_jumps) * st.svec;
  }
}

double PosteriorEngine::subject_loglik(int i) const {
  Eigen::VectorXd logterm;
  node_logterms(i, logterm);
  double m = logterm.maxCoeff();
  if (!std::isfinite(m))
    throw Error(ErrorCode::DegenerateLikelihood,
                "likelihood non-finite at every quadrature node");
  double denom = (logterm.array() - m).exp().sum();
  return m + std::log(denom) - 0.5 * k_ * std::log(M_PI);
}

PosteriorSummary PosteriorEngine::summarize(int i) const {
  const SubjectTerms& st = subjects_[i];
  PosteriorSummary out;
  Eigen::VectorXd logterm;
  node_logterms(i, logterm);
  double m = logterm.maxCoeff();
  if (!std::isfinite(m))
    throw Error(ErrorCode::DegenerateLikelihood,
                "likelihood non-finite at every quadrature node");
  Eigen::VectorXd s = (logterm.array() - m).exp();
  double denom = s.sum();
  if (!(denom > 0.0) || !std::isfinite(denom))
    throw Error(ErrorCode::DegenerateLikelihood, "posterior normalization failed");
  out.loglik = m + std::log(denom) - 0.5 * k_ * std::log(M_PI);
  s /= denom;

  out.e_alpha.noalias() = node_alpha_.transpose() * s;
  Eigen::MatrixXd weighted = node_alpha_.array().colwise() * s.array();
  out.e_alpha_outer.noalias() = node_alpha_.transpose() * weighted;

  // Residual-square expectations per observed cell.
  out.e_resid_sq = Eigen::MatrixXd::Zero(st.n_visits, J_);
  Eigen::VectorXd dvis(n_nodes_total_);
  int prev_visit = -1;
  for (size_t c = 0; c < st.cell_visit.size(); ++c) {
    int v = st.cell_visit[c], j = st.cell_j[c];
    if (v != prev_visit) {
      dvis.noalias() = node_alpha_ * st.a_vis.col(v);
      prev_visit = v;
    }
    double r = st.cell_resid[c], b1 = beta1_[j];
    out.e_resid_sq(v, j) = (s.array() * (r - b1 * dvis.array()).square()).sum();
  }

  // Link expectations at each jump time up to the follow-up end.
  out.n_jumps = st.n_jumps;
  out.jump_times = jump_times_;
  const int npack = k_ * (k_ + 1) / 2;
  out.e_w.resize(st.n_jumps);
  out.e_w_alpha.resize(k_, st.n_jumps);
  out.e_w_alpha_outer.resize(npack, st.n_jumps);
  Eigen::VectorXd sw(n_nodes_total_);
  Eigen::MatrixXd wa(n_nodes_total_, k_);
  for (int u = 0; u < st.n_jumps; ++u) {
    sw = s.cwiseProduct(link_exp_.col(u));
    out.e_w[u] = sw.sum();
    wa = node_alpha_.array().colwise() * sw.array();
    out.e_w_alpha.col(u) = wa.colwise().sum();
    for (int b = 0; b < k_; ++b)
      for (int a = 0; a <= b; ++a)
        out.e_w_alpha_outer(PosteriorSummary::pack_index(a, b), u) =
            node_alpha_.col(a).dot(wa.col(b));
  }
  return out;
}

double PosteriorEngine::expectation(
    int i, const std::function<double(const Eigen::VectorXd&)>& h) const {
  Eigen::VectorXd logterm;
  node_logterms(i, logterm);
  double m = logterm.maxCoeff();
  if (!std::isfinite(m))
    throw Error(ErrorCode::DegenerateLikelihood,
                "likelihood non-finite at every quadrature node");
  double denom = 0.0, numer = 0.0;
  for (int g = 0; g < n_nodes_total_; ++g) {
    double sg = std::exp(logterm[g] - m);
    denom += sg;
    numer += sg * h(node_alpha_.row(g).transpose());
  }
  if (!(denom > 0.0) || !std::isfinite(denom))
    throw Error(ErrorCode::DegenerateLikelihood, "posterior normalization failed");
  return numer / denom;
}

double PosteriorEngine::total_loglik() const {
  const int n = n_subjects();
  std::vector<double> ll(n, 0.0);
  parallel_for(n, [&](int i) { ll[i] = subject_loglik(i); });
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += ll[i];
  return total;
}

double posterior_expectation(const SubjectRecord& subject, const ParameterSet& params,
                             const OrthoBasis& basis, const GaussHermiteRule& rule,
                             const std::function<double(const Eigen::VectorXd&)>& h) {
  PosteriorEngine engine({subject}, params, basis, rule);
  return engine.expectation(0, h);
}

PosteriorSummary compute_posterior_summary(const SubjectRecord& subject,
                                           const ParameterSet& params, const OrthoBasis& basis,
                                           const GaussHermiteRule& rule,
                                           const std::vector<double>& needed_times) {
  for (double t : needed_times)
    if (params.hazard.find_jump(t) < 0)
      throw Error(ErrorCode::InvalidSpec,
                  "needed time " + std::to_string(t) + " is not a hazard jump time");
  PosteriorEngine engine({subject}, params, basis, rule);
  return engine.summarize(0);
}

}  // namespace latentjm
