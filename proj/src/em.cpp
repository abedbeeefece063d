#include "latentjm/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "latentjm/threading.hpp"

namespace latentjm {

void FitConfig::validate() const {
  if (max_iters < 1) throw Error(ErrorCode::InvalidSpec, "max_iters must be >= 1");
  if (!(loglik_rel_tol > 0.0) || !(param_abs_tol > 0.0))
    throw Error(ErrorCode::InvalidSpec, "tolerances must be positive");
  if (quad_nodes < 1) throw Error(ErrorCode::InvalidOrder, "quad_nodes must be >= 1");
  if (!(newton_damping > 0.0) || newton_damping > 1.0)
    throw Error(ErrorCode::InvalidSpec, "newton_damping must lie in (0, 1]");
}

double observed_loglik(const std::vector<SubjectRecord>& data, const ParameterSet& params,
                       const OrthoBasis& basis, const GaussHermiteRule& rule) {
  if (data.empty()) return 0.0;
  PosteriorEngine engine(data, params, basis, rule);
  return engine.total_loglik();
}

std::vector<PosteriorSummary> e_step(const std::vector<SubjectRecord>& data,
                                     const ParameterSet& params, const OrthoBasis& basis,
                                     const GaussHermiteRule& rule) {
  PosteriorEngine engine(data, params, basis, rule);
  std::vector<PosteriorSummary> out(data.size());
  parallel_for(static_cast<int>(data.size()),
               [&](int i) { out[i] = engine.summarize(i); });
  return out;
}

Eigen::VectorXd update_sigma2(const std::vector<SubjectRecord>& data,
                              const std::vector<PosteriorSummary>& posteriors,
                              const ParameterSet& params, double min_variance) {
  const int J = static_cast<int>(params.sigma2.size());
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(J);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(J);
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    for (int v = 0; v < s.n_visits(); ++v)
      for (int j = 0; j < J; ++j)
        if (s.observed(v, j)) {
          sums[j] += posteriors[i].e_resid_sq(v, j);
          counts[j] += 1;
        }
  }
  Eigen::VectorXd out(J);
  for (int j = 0; j < J; ++j) {
    if (counts[j] == 0)
      throw Error(ErrorCode::NoData,
                  "no observed cells for biomarker " + std::to_string(j + 1));
    out[j] = std::max(sums[j] / counts[j], min_variance);
  }
  return out;
}

Eigen::VectorXd update_D(const std::vector<PosteriorSummary>& posteriors,
                         double min_variance) {
  if (posteriors.empty()) throw Error(ErrorCode::NoData, "no subjects");
  const int k = static_cast<int>(posteriors.front().e_alpha.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(k);
  for (const auto& p : posteriors) out += p.e_alpha_outer.diagonal();
  out /= static_cast<double>(posteriors.size());
  return out.cwiseMax(min_variance);
}

Eigen::VectorXd update_beta1(const std::vector<SubjectRecord>& data,
                             const std::vector<PosteriorSummary>& posteriors,
                             const ParameterSet& params, const OrthoBasis& basis) {
  const int J = static_cast<int>(params.beta1.size());
  Eigen::VectorXd num = Eigen::VectorXd::Zero(J), den = Eigen::VectorXd::Zero(J);
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto& post = posteriors[i];
    for (int v = 0; v < s.n_visits(); ++v) {
      Eigen::VectorXd b = basis.eval(s.visit_times[v]);
      double m = b.dot(params.theta);
      Eigen::VectorXd a = params.Theta.transpose() * b;
      double e_lin = m + a.dot(post.e_alpha);
      double e_sq = m * m + 2.0 * m * a.dot(post.e_alpha) + a.dot(post.e_alpha_outer * a);
      for (int j = 0; j < J; ++j) {
        if (!s.observed(v, j)) continue;
        double xb = s.x[j].cols() > 0 ? s.x[j].row(v).dot(params.beta0[j]) : 0.0;
        num[j] += (s.y(v, j) - xb) * e_lin;
        den[j] += e_sq;
      }
    }
  }
  Eigen::VectorXd out(J);
  out[0] = 1.0;  // identifiability pin
  for (int j = 1; j < J; ++j) {
    if (!(den[j] > 0.0))
      throw Error(ErrorCode::DegenerateLatentProcess,
                  "latent process has zero second moment on biomarker " +
                      std::to_string(j + 1));
    out[j] = num[j] / den[j];
  }
  return out;
}

namespace {

// lambda_u exp(Z_i(t_u)' eta + gamma b(t_u)' theta), the alpha-free hazard
// weight shared by every survival-side score term.
struct SurvWeights {
  std::vector<double> jump_times;
  std::vector<Eigen::VectorXd> b_jump;   // basis values at each jump
  std::vector<double> m_jump;            // b' theta
  std::vector<Eigen::VectorXd> a_jump;   // Theta' b
  std::vector<double> base;              // lambda_u exp(gamma b' theta)

  SurvWeights(const ParameterSet& params, const OrthoBasis& basis) {
    const StepHazard& hz = params.hazard;
    int U = hz.n_jumps();
    jump_times = hz.jump_times;
    b_jump.resize(U);
    m_jump.resize(U);
    a_jump.resize(U);
    base.resize(U);
    for (int u = 0; u < U; ++u) {
      b_jump[u] = basis.eval(hz.jump_times[u]);
      m_jump[u] = b_jump[u].dot(params.theta);
      a_jump[u] = params.Theta.transpose() * b_jump[u];
      base[u] = hz.increments[u] * std::exp(params.gamma * m_jump[u]);
    }
  }

  double zeta(const SubjectRecord& s, const ParameterSet& params, int u) const {
    return std::exp(s.z_at(jump_times[u]).dot(params.eta));
  }
};

Eigen::VectorXd solve_newton(const Eigen::VectorXd& score, const Eigen::MatrixXd& info,
                             const char* what) {
  if (score.size() == 0) return score;
  double scale = info.cwiseAbs().maxCoeff();
  if (scale <= 0.0) {
    if (score.cwiseAbs().maxCoeff() <= 1e-12) return Eigen::VectorXd::Zero(score.size());
    throw Error(ErrorCode::SingularInformation, what);
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw Error(ErrorCode::SingularInformation, what);
  Eigen::VectorXd dir = ldlt.solve(score);
  if (!dir.allFinite()) throw Error(ErrorCode::SingularInformation, what);
  return dir;
}

double quad_form_packed(const Eigen::MatrixXd& packed, int u, const Eigen::VectorXd& a) {
  const int k = static_cast<int>(a.size());
  double out = 0.0;
  for (int bcol = 0; bcol < k; ++bcol) {
    out += a[bcol] * a[bcol] * packed(PosteriorSummary::pack_index(bcol, bcol), u);
    for (int arow = 0; arow < bcol; ++arow)
      out += 2.0 * a[arow] * a[bcol] * packed(PosteriorSummary::pack_index(arow, bcol), u);
  }
  return out;
}

}  // namespace

StepHazard update_hazard(const std::vector<SubjectRecord>& data,
                         const std::vector<PosteriorSummary>& posteriors,
                         const ParameterSet& params, const OrthoBasis& basis) {
  const StepHazard& hz = params.hazard;
  const int U = hz.n_jumps();
  std::vector<double> d_count(U, 0.0), denom(U, 0.0);
  std::vector<Eigen::VectorXd> b_jump(U);
  std::vector<double> link_base(U);
  for (int u = 0; u < U; ++u) {
    b_jump[u] = basis.eval(hz.jump_times[u]);
    link_base[u] = std::exp(params.gamma * b_jump[u].dot(params.theta));
  }
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto& post = posteriors[i];
    if (s.event_indicator == 1) {
      int ue = hz.find_jump(s.event_time);
      if (ue >= 0) d_count[ue] += 1.0;
    }
    for (int u = 0; u < post.n_jumps; ++u) {
      double zeta = std::exp(s.z_at(hz.jump_times[u]).dot(params.eta));
      denom[u] += zeta * link_base[u] * post.e_w[u];
    }
  }
  StepHazard out;
  out.jump_times = hz.jump_times;
  out.increments.resize(U);
  for (int u = 0; u < U; ++u)
    out.increments[u] = denom[u] > 0.0 ? d_count[u] / denom[u] : 0.0;
  return out;
}

std::vector<NewtonUpdate> newton_step_beta0(const std::vector<SubjectRecord>& data,
                                            const std::vector<PosteriorSummary>& posteriors,
                                            const ParameterSet& params, const OrthoBasis& basis,
                                            double damping) {
  const int J = static_cast<int>(params.beta1.size());
  std::vector<NewtonUpdate> out(J);
  for (int j = 0; j < J; ++j) {
    int pj = static_cast<int>(params.beta0[j].size());
    out[j].score = Eigen::VectorXd::Zero(pj);
    out[j].info = Eigen::MatrixXd::Zero(pj, pj);
  }
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto& post = posteriors[i];
    for (int v = 0; v < s.n_visits(); ++v) {
      Eigen::VectorXd b = basis.eval(s.visit_times[v]);
      double m = b.dot(params.theta);
      Eigen::VectorXd a = params.Theta.transpose() * b;
      double e_latent = m + a.dot(post.e_alpha);
      for (int j = 0; j < J; ++j) {
        if (!s.observed(v, j) || params.beta0[j].size() == 0) continue;
        double inv_s2 = 1.0 / params.sigma2[j];
        Eigen::VectorXd xr = s.x[j].row(v);
        double resid = s.y(v, j) - xr.dot(params.beta0[j]) - params.beta1[j] * e_latent;
        out[j].score.noalias() += inv_s2 * resid * xr;
        out[j].info.noalias() += inv_s2 * xr * xr.transpose();
      }
    }
  }
  for (int j = 0; j < J; ++j) {
    out[j].direction = solve_newton(out[j].score, out[j].info, "beta0 information singular");
    out[j].value = params.beta0[j] + damping * out[j].direction;
  }
  return out;
}

NewtonUpdate newton_step_eta(const std::vector<SubjectRecord>& data,
                             const std::vector<PosteriorSummary>& posteriors,
                             const ParameterSet& params, const OrthoBasis& basis,
                             double damping) {
  const int r = static_cast<int>(params.eta.size());
  NewtonUpdate out;
  out.score = Eigen::VectorXd::Zero(r);
  out.info = Eigen::MatrixXd::Zero(r, r);
  if (r > 0) {
    SurvWeights sw(params, basis);
    for (size_t i = 0; i < data.size(); ++i) {
      const auto& s = data[i];
      const auto& post = posteriors[i];
      if (s.event_indicator == 1) out.score += s.z_at(s.event_time);
      for (int u = 0; u < post.n_jumps; ++u) {
        Eigen::VectorXd zu = s.z_at(sw.jump_times[u]);
        double w = sw.base[u] * sw.zeta(s, params, u) * post.e_w[u];
        out.score.noalias() -= w * zu;
        out.info.noalias() += w * zu * zu.transpose();
      }
    }
  }
  out.direction = solve_newton(out.score, out.info, "eta information singular");
  out.value = params.eta + damping * out.direction;
  return out;
}

NewtonUpdate newton_step_gamma(const std::vector<SubjectRecord>& data,
                               const std::vector<PosteriorSummary>& posteriors,
                               const ParameterSet& params, const OrthoBasis& basis,
                               double damping) {
  SurvWeights sw(params, basis);
  double score = 0.0, info = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto& post = posteriors[i];
    if (s.event_indicator == 1) {
      int ue = params.hazard.find_jump(s.event_time);
      if (ue < 0)
        throw Error(ErrorCode::ZeroLikelihood,
                    "event time has no hazard jump (subject " + s.id + ")");
      score += sw.m_jump[ue] + sw.a_jump[ue].dot(post.e_alpha);
    }
    for (int u = 0; u < post.n_jumps; ++u) {
      double w = sw.base[u] * sw.zeta(s, params, u);
      double mu = sw.m_jump[u];
      const Eigen::VectorXd& au = sw.a_jump[u];
      double e_w = post.e_w[u];
      double a_ewa = au.dot(post.e_w_alpha.col(u));
      score -= w * (mu * e_w + a_ewa);
      info += w * (mu * mu * e_w + 2.0 * mu * a_ewa +
                   quad_form_packed(post.e_w_alpha_outer, u, au));
    }
  }
  NewtonUpdate out;
  out.score = Eigen::VectorXd::Constant(1, score);
  out.info = Eigen::MatrixXd::Constant(1, 1, info);
  out.direction = solve_newton(out.score, out.info, "gamma information singular");
  out.value = Eigen::VectorXd::Constant(1, params.gamma + damping * out.direction[0]);
  return out;
}

NewtonUpdate newton_step_theta(const std::vector<SubjectRecord>& data,
                               const std::vector<PosteriorSummary>& posteriors,
                               const ParameterSet& params, const OrthoBasis& basis,
                               double damping) {
  const int q = params.q();
  const int J = static_cast<int>(params.beta1.size());
  NewtonUpdate out;
  out.score = Eigen::VectorXd::Zero(q);
  out.info = Eigen::MatrixXd::Zero(q, q);
  SurvWeights sw(params, basis);
  const double g = params.gamma;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto& post = posteriors[i];
    for (int v = 0; v < s.n_visits(); ++v) {
      Eigen::VectorXd b = basis.eval(s.visit_times[v]);
      double m = b.dot(params.theta);
      Eigen::VectorXd a = params.Theta.transpose() * b;
      double e_latent_dev = a.dot(post.e_alpha);
      double bb_coef = 0.0;
      for (int j = 0; j < J; ++j) {
        if (!s.observed(v, j)) continue;
        double inv_s2 = 1.0 / params.sigma2[j];
        double b1 = params.beta1[j];
        double xb = s.x[j].cols() > 0 ? s.x[j].row(v).dot(params.beta0[j]) : 0.0;
        double resid = s.y(v, j) - xb - b1 * m - b1 * e_latent_dev;
        out.score.noalias() += (inv_s2 * resid * b1) * b;
        bb_coef += inv_s2 * b1 * b1;
      }
      if (bb_coef != 0.0)
        out.info.selfadjointView<Eigen::Lower>().rankUpdate(b, bb_coef);
    }
    if (s.event_indicator == 1) {
      int ue = params.hazard.find_jump(s.event_time);
      if (ue < 0)
        throw Error(ErrorCode::ZeroLikelihood,
                    "event time has no hazard jump (subject " + s.id + ")");
      out.score.noalias() += g * sw.b_jump[ue];
    }
    for (int u = 0; u < post.n_jumps; ++u) {
      double w = sw.base[u] * sw.zeta(s, params, u) * post.e_w[u];
      out.score.noalias() -= (w * g) * sw.b_jump[u];
      if (g != 0.0)
        out.info.selfadjointView<Eigen::Lower>().rankUpdate(sw.b_jump[u], w * g * g);
    }
  }
  out.info = out.info.selfadjointView<Eigen::Lower>();
  out.direction = solve_newton(out.score, out.info, "theta information singular");
  out.value = params.theta + damping * out.direction;
  return out;
}

std::vector<NewtonUpdate> newton_step_Theta(const std::vector<SubjectRecord>& data,
                                            const std::vector<PosteriorSummary>& posteriors,
                                            const ParameterSet& params, const OrthoBasis& basis,
                                            double damping) {
  const int q = params.q(), k = params.k();
  const int J = static_cast<int>(params.beta1.size());
  std::vector<NewtonUpdate> out(k);
  for (int w = 0; w < k; ++w) {
    out[w].score = Eigen::VectorXd::Zero(q);
    out[w].info = Eigen::MatrixXd::Zero(q, q);
  }
  SurvWeights sw(params, basis);
  const double g = params.gamma;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto& post = posteriors[i];
    for (int v = 0; v < s.n_visits(); ++v) {
      Eigen::VectorXd b = basis.eval(s.visit_times[v]);
      double m = b.dot(params.theta);
      Eigen::VectorXd a = params.Theta.transpose() * b;
      Eigen::VectorXd outer_a = post.e_alpha_outer * a;  // E[alpha alpha'] Theta' b
      for (int j = 0; j < J; ++j) {
        if (!s.observed(v, j)) continue;
        double inv_s2 = 1.0 / params.sigma2[j];
        double b1 = params.beta1[j];
        double xb = s.x[j].cols() > 0 ? s.x[j].row(v).dot(params.beta0[j]) : 0.0;
        double rfix = s.y(v, j) - xb - b1 * m;
        for (int w = 0; w < k; ++w) {
          double coef = inv_s2 * b1 * (rfix * post.e_alpha[w] - b1 * outer_a[w]);
          out[w].score.noalias() += coef * b;
          out[w].info.selfadjointView<Eigen::Lower>().rankUpdate(
              b, inv_s2 * b1 * b1 * post.e_alpha_outer(w, w));
        }
      }
    }
    if (s.event_indicator == 1) {
      int ue = params.hazard.find_jump(s.event_time);
      if (ue < 0)
        throw Error(ErrorCode::ZeroLikelihood,
                    "event time has no hazard jump (subject " + s.id + ")");
      for (int w = 0; w < k; ++w)
        out[w].score.noalias() += (g * post.e_alpha[w]) * sw.b_jump[ue];
    }
    for (int u = 0; u < post.n_jumps; ++u) {
      double w0 = sw.base[u] * sw.zeta(s, params, u);
      for (int w = 0; w < k; ++w) {
        out[w].score.noalias() -= (w0 * g * post.e_w_alpha(w, u)) * sw.b_jump[u];
        if (g != 0.0)
          out[w].info.selfadjointView<Eigen::Lower>().rankUpdate(
              sw.b_jump[u],
              w0 * g * g * post.e_w_alpha_outer(PosteriorSummary::pack_index(w, w), u));
      }
    }
  }
  for (int w = 0; w < k; ++w) {
    out[w].info = out[w].info.selfadjointView<Eigen::Lower>();
    out[w].direction =
        solve_newton(out[w].score, out[w].info, "Theta information singular");
    out[w].value = params.Theta.col(w) + damping * out[w].direction;
  }
  return out;
}

ParameterSet orthonormalize(const ParameterSet& params) {
  const int k = params.k();
  Eigen::MatrixXd kernel = params.Theta * params.D.asDiagonal() * params.Theta.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kernel);
  if (es.info() != Eigen::Success)
    throw Error(ErrorCode::RankDeficient, "kernel eigendecomposition failed");
  const int q = params.q();
  Eigen::VectorXd evals = es.eigenvalues();  // ascending
  double top = evals[q - 1];
  if (!(top > 0.0)) throw Error(ErrorCode::RankDeficient, "latent kernel is zero");
  ParameterSet out = params;
  for (int w = 0; w < k; ++w) {
    double ev = evals[q - 1 - w];
    if (ev <= 1e-12 * top)
      throw Error(ErrorCode::RankDeficient, "Theta has rank below k");
    out.D[w] = ev;
    Eigen::VectorXd col = es.eigenvectors().col(q - 1 - w);
    double norm = col.cwiseAbs().maxCoeff();
    for (int rix = 0; rix < q; ++rix) {
      if (std::abs(col[rix]) > 1e-12 * norm) {
        if (col[rix] < 0.0) col = -col;
        break;
      }
    }
    out.Theta.col(w) = col;
  }
  return out;
}

// --- initialization ---------------------------------------------------------

namespace {

StepHazard event_jump_skeleton(const std::vector<SubjectRecord>& data) {
  std::vector<double> times;
  for (const auto& s : data)
    if (s.event_indicator == 1) times.push_back(s.event_time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  StepHazard hz;
  hz.jump_times = times;
  hz.increments.assign(times.size(), 0.0);
  return hz;
}

// Cox fit of (T, Delta) on Z alone via alternating Breslow and Newton steps;
// the gamma = 0 special case of the survival submodel.
void cox_profile_fit(const std::vector<SubjectRecord>& data, Eigen::VectorXd& eta,
                     StepHazard& hazard) {
  const int r = static_cast<int>(eta.size());
  const int U = hazard.n_jumps();
  if (U == 0) return;
  std::vector<double> d_count(U, 0.0);
  for (const auto& s : data)
    if (s.event_indicator == 1) {
      int ue = hazard.find_jump(s.event_time);
      if (ue >= 0) d_count[ue] += 1.0;
    }
  for (int it = 0; it < 100; ++it) {
    std::vector<double> denom(U, 0.0);
    for (const auto& s : data) {
      int nj = hazard.n_jumps_upto(s.event_time);
      for (int u = 0; u < nj; ++u)
        denom[u] += std::exp(s.z_at(hazard.jump_times[u]).dot(eta));
    }
    for (int u = 0; u < U; ++u)
      hazard.increments[u] = denom[u] > 0.0 ? d_count[u] / denom[u] : 0.0;
    if (r == 0) return;
    Eigen::VectorXd score = Eigen::VectorXd::Zero(r);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(r, r);
    for (const auto& s : data) {
      if (s.event_indicator == 1) score += s.z_at(s.event_time);
      int nj = hazard.n_jumps_upto(s.event_time);
      for (int u = 0; u < nj; ++u) {
        Eigen::VectorXd zu = s.z_at(hazard.jump_times[u]);
        double w = hazard.increments[u] * std::exp(zu.dot(eta));
        score.noalias() -= w * zu;
        info.noalias() += w * zu * zu.transpose();
      }
    }
    Eigen::VectorXd step = solve_newton(score, info, "eta information singular in init");
    eta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
}

}  // namespace

ParameterSet initialize(const std::vector<SubjectRecord>& data, const ModelSpec& spec) {
  spec.validate();
  if (data.empty()) throw Error(ErrorCode::NoData, "cannot initialize from empty data");
  OrthoBasis basis = build_basis(spec.basis);
  const int J = spec.J, q = spec.basis.q(), k = spec.k;

  ParameterSet params;
  params.beta0.resize(J);
  params.beta1 = Eigen::VectorXd::Ones(J);
  params.sigma2 = Eigen::VectorXd::Ones(J);
  params.theta = Eigen::VectorXd::Zero(q);
  params.Theta = Eigen::MatrixXd::Identity(q, k);
  params.D = Eigen::VectorXd::Ones(k);
  params.eta = Eigen::VectorXd::Zero(spec.r);
  params.gamma = 0.0;

  // Per-biomarker OLS of Y on [X, b(t)], ignoring the latent random effects.
  Eigen::VectorXd resid_var(J);
  for (int j = 0; j < J; ++j) {
    int pj = spec.p[j];
    std::vector<int> rows_i, rows_v;
    for (size_t i = 0; i < data.size(); ++i)
      for (int v = 0; v < data[i].n_visits(); ++v)
        if (data[i].observed(v, j)) {
          rows_i.push_back(static_cast<int>(i));
          rows_v.push_back(v);
        }
    int n_cells = static_cast<int>(rows_i.size());
    if (n_cells < pj + 1)
      throw Error(ErrorCode::UnderdeterminedInit,
                  "biomarker " + std::to_string(j + 1) + " has " +
                      std::to_string(n_cells) + " cells, need at least " +
                      std::to_string(pj + 1));
    Eigen::MatrixXd A(n_cells, pj + q);
    Eigen::VectorXd yv(n_cells);
    for (int c = 0; c < n_cells; ++c) {
      const auto& s = data[rows_i[c]];
      int v = rows_v[c];
      if (pj > 0) A.block(c, 0, 1, pj) = s.x[j].row(v);
      A.block(c, pj, 1, q) = basis.eval(s.visit_times[v]).transpose();
      yv[c] = s.y(v, j);
    }
    Eigen::VectorXd coef = A.colPivHouseholderQr().solve(yv);
    params.beta0[j] = coef.head(pj);
    if (j == 0) params.theta = coef.tail(q);
    resid_var[j] = (yv - A * coef).squaredNorm() / n_cells;
  }
  for (int j = 0; j < J; ++j) params.sigma2[j] = std::max(resid_var[j], 1e-10);
  for (int j = 1; j < J; ++j)
    params.beta1[j] =
        resid_var[0] > 0.0 ? std::sqrt(resid_var[j] / resid_var[0]) : 1.0;
  params.D.setConstant(std::max(resid_var[0] / k, 1e-10));

  params.hazard = event_jump_skeleton(data);
  cox_profile_fit(data, params.eta, params.hazard);
  return params;
}

// --- full EM ---------------------------------------------------------------

namespace {

double max_param_move(const ParameterSet& a, const ParameterSet& b) {
  double m = 0.0;
  for (size_t j = 0; j < a.beta0.size(); ++j)
    if (a.beta0[j].size() > 0)
      m = std::max(m, (a.beta0[j] - b.beta0[j]).cwiseAbs().maxCoeff());
  m = std::max(m, (a.beta1 - b.beta1).cwiseAbs().maxCoeff());
  m = std::max(m, (a.sigma2 - b.sigma2).cwiseAbs().maxCoeff());
  m = std::max(m, (a.theta - b.theta).cwiseAbs().maxCoeff());
  m = std::max(m, (a.Theta - b.Theta).cwiseAbs().maxCoeff());
  m = std::max(m, (a.D - b.D).cwiseAbs().maxCoeff());
  if (a.eta.size() > 0) m = std::max(m, (a.eta - b.eta).cwiseAbs().maxCoeff());
  m = std::max(m, std::abs(a.gamma - b.gamma));
  return m;
}

struct NewtonBlock {
  std::vector<NewtonUpdate> beta0;
  NewtonUpdate eta, gamma, theta;
  std::vector<NewtonUpdate> Theta;
};

ParameterSet apply_mstep(const ParameterSet& base, const ParameterSet& closed,
                         const NewtonBlock& nb, double step, bool update_gamma) {
  ParameterSet cand = closed;
  for (size_t j = 0; j < base.beta0.size(); ++j)
    cand.beta0[j] = base.beta0[j] + step * nb.beta0[j].direction;
  if (base.eta.size() > 0) cand.eta = base.eta + step * nb.eta.direction;
  if (update_gamma) cand.gamma = base.gamma + step * nb.gamma.direction[0];
  cand.theta = base.theta + step * nb.theta.direction;
  for (size_t w = 0; w < nb.Theta.size(); ++w)
    cand.Theta.col(static_cast<int>(w)) =
        base.Theta.col(static_cast<int>(w)) + step * nb.Theta[w].direction;
  return cand;
}

// Convex combination (1 - t) base + t cand of every parameter, hazard
// increments included. Variances stay positive for t in (0, 1].
ParameterSet lerp_params(const ParameterSet& base, const ParameterSet& cand, double t) {
  ParameterSet out = cand;
  for (size_t j = 0; j < base.beta0.size(); ++j)
    out.beta0[j] = (1.0 - t) * base.beta0[j] + t * cand.beta0[j];
  out.beta1 = (1.0 - t) * base.beta1 + t * cand.beta1;
  out.sigma2 = (1.0 - t) * base.sigma2 + t * cand.sigma2;
  out.theta = (1.0 - t) * base.theta + t * cand.theta;
  out.Theta = (1.0 - t) * base.Theta + t * cand.Theta;
  out.D = (1.0 - t) * base.D + t * cand.D;
  if (base.eta.size() > 0) out.eta = (1.0 - t) * base.eta + t * cand.eta;
  out.gamma = (1.0 - t) * base.gamma + t * cand.gamma;
  for (size_t u = 0; u < out.hazard.increments.size(); ++u)
    out.hazard.increments[u] =
        (1.0 - t) * base.hazard.increments[u] + t * cand.hazard.increments[u];
  return out;
}

}  // namespace

FitResult fit(const std::vector<SubjectRecord>& data, const ModelSpec& spec,
              const FitConfig& config) {
  config.validate();
  spec.validate();
  if (data.empty()) throw Error(ErrorCode::NoData, "cannot fit empty dataset");

  OrthoBasis basis = build_basis(spec.basis);
  GaussHermiteRule rule = gauss_hermite(config.quad_nodes);
  ParameterSet params = initialize(data, spec);

  FitResult result;
  const double slack_scale = 1e-8;
  bool pending_param_stop = false;
  double prev_ll = -std::numeric_limits<double>::infinity();

  int m = 0;
  for (;; ++m) {
    std::vector<PosteriorSummary> posteriors;
    double ll;
    try {
      posteriors = e_step(data, params, basis, rule);
      ll = 0.0;
      for (const auto& p : posteriors) ll += p.loglik;
    } catch (const Error& e) {
      throw Error(e.code(), "iteration " + std::to_string(m) + ": " + e.what());
    }
    result.loglik_trace.push_back(ll);

    if (m > 0) {
      double rel = std::abs(ll - prev_ll) / (1.0 + std::abs(ll));
      if (rel < config.loglik_rel_tol) {
        result.converged = true;
        result.reason = "loglik_rel_tol";
        break;
      }
    }
    if (pending_param_stop) {
      result.converged = true;
      result.reason = "param_abs_tol";
      break;
    }
    if (m >= config.max_iters) {
      result.converged = false;
      result.reason = "max_iters";
      break;
    }
    prev_ll = ll;

    try {
      // Closed forms and the Breslow step, all from the frozen iterate.
      ParameterSet closed = params;
      closed.sigma2 = update_sigma2(data, posteriors, params, config.min_variance);
      closed.D = update_D(posteriors, config.min_variance);
      closed.beta1 = update_beta1(data, posteriors, params, basis);
      closed.hazard = update_hazard(data, posteriors, params, basis);
      if ((closed.sigma2.array() == config.min_variance).any() ||
          (closed.D.array() == config.min_variance).any())
        result.variance_floored = true;

      NewtonBlock nb;
      nb.beta0 = newton_step_beta0(data, posteriors, params, basis);
      nb.eta = newton_step_eta(data, posteriors, params, basis);
      if (config.update_gamma)
        nb.gamma = newton_step_gamma(data, posteriors, params, basis);
      nb.theta = newton_step_theta(data, posteriors, params, basis);
      nb.Theta = newton_step_Theta(data, posteriors, params, basis);

      double slack = slack_scale * (1.0 + std::abs(ll));
      double step = config.newton_damping;
      ParameterSet cand;
      bool accepted = false;
      for (int h = 0; h <= config.max_halvings; ++h) {
        cand = apply_mstep(params, closed, nb, step, config.update_gamma);
        double ll_cand = observed_loglik(data, cand, basis, rule);
        if (std::isfinite(ll_cand) && ll_cand >= ll - slack) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        // Even the closed-form block can dip the quadrature-approximated
        // likelihood when the D update moves the node grid, so shrink the
        // whole M-step displacement toward the current iterate until the
        // ascent check passes.
        ParameterSet full =
            apply_mstep(params, closed, nb, config.newton_damping, config.update_gamma);
        double t = 1.0;
        for (int h = 0; h <= 40; ++h) {
          cand = lerp_params(params, full, t);
          double ll_cand = observed_loglik(data, cand, basis, rule);
          if (std::isfinite(ll_cand) && ll_cand >= ll - slack) {
            accepted = true;
            break;
          }
          t *= 0.5;
        }
        if (!accepted) {
          cand = params;  // no movement this iteration
          result.monotonicity_violation = true;
        }
      }
      if (config.orthonormalize_each_iter) cand = orthonormalize(cand);
      if (max_param_move(cand, params) < config.param_abs_tol) pending_param_stop = true;
      params = cand;
    } catch (const Error& e) {
      throw Error(e.code(), "iteration " + std::to_string(m) + ": " + e.what());
    }
  }
  result.n_iters = m;

  // Hazard self-consistency: iterate the Breslow profile step to its fixed
  // point so that plugging the converged hazard back reproduces it.
  for (int it = 0; it < 60; ++it) {
    std::vector<PosteriorSummary> posteriors = e_step(data, params, basis, rule);
    StepHazard next = update_hazard(data, posteriors, params, basis);
    double move = 0.0, scale = 0.0;
    for (size_t u = 0; u < next.increments.size(); ++u) {
      move = std::max(move, std::abs(next.increments[u] - params.hazard.increments[u]));
      scale = std::max(scale, next.increments[u]);
    }
    params.hazard = next;
    if (move <= 1e-13 * (1.0 + scale)) break;
  }
  result.loglik_trace.push_back(observed_loglik(data, params, basis, rule));

  result.params = orthonormalize(params);
  result.pc_variance_proportions = result.params.D / result.params.D.sum();
  result.aic = -2.0 * result.loglik_trace.back() + 2.0 * ParameterSet::dim_phi(spec);
  return result;
}

}  // namespace latentjm
