#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latentjm/em.hpp"
#include "latentjm/simulator.hpp"
#include "testutil.hpp"

using namespace latentjm;
using namespace testutil;

namespace {

// Small simulated dataset in a regime the 20-node rule resolves well.
struct TinyStudy {
  Scenario sc;
  ModelSpec spec;
  OrthoBasis basis;
  std::vector<SubjectRecord> data;
  ParameterSet params;

  explicit TinyStudy(int n = 30, double gamma = 0.3, uint64_t seed = 11,
                     bool lung_covariates = true) {
    sc.basis = simple_basis(3, 2, 0.0, 6.0);
    sc.t_max = 6.0;
    sc.visit_spacing = 0.75;
    sc.n = n;
    sc.J = 2;
    sc.k = 1;
    sc.beta0 = {Eigen::VectorXd::Constant(1, -0.02), Eigen::VectorXd::Constant(1, 0.01)};
    sc.beta1 = Eigen::VectorXd::Ones(2);
    sc.beta1[1] = 0.8;
    sc.sigma2 = Eigen::VectorXd::Constant(2, 0.8);
    sc.sigma2[1] = 1.2;
    sc.D = Eigen::VectorXd::Constant(1, 1.0);
    sc.gamma = gamma;
    sc.lambda0 = 0.15;
    if (lung_covariates) {
      sc.covariates = CovariateLaw::lung_style;
      sc.eta = Eigen::VectorXd(4);
      sc.eta << 0.01, 0.3, -0.2, 0.15;
    } else {
      sc.covariates = CovariateLaw::shared_normal;
      sc.cov_mean = 0.0;
      sc.cov_var = 1.0;
      sc.eta = Eigen::VectorXd();
    }
    OrthoBasis b = build_basis(sc.basis);
    sc.Theta = smooth_pc_columns(b, 1);
    sc.theta = 1.2 * b.eval(0.0);  // smooth mild mean curve
    for (int c = 0; c < sc.theta.size(); ++c) sc.theta[c] = 0.8 - 0.2 * c;

    spec = sc.model_spec();
    basis = build_basis(spec.basis);
    data = simulate(sc, seed).subjects;
    params = initialize(data, spec);
    params.gamma = gamma * 0.7;  // off-truth evaluation point for score tests
  }
};

PosteriorSummary degenerate_posterior(const Eigen::VectorXd& alpha0, int n_visits, int J) {
  PosteriorSummary post;
  int k = static_cast<int>(alpha0.size());
  post.e_alpha = alpha0;
  post.e_alpha_outer = alpha0 * alpha0.transpose();
  post.e_resid_sq = Eigen::MatrixXd::Zero(n_visits, J);
  post.n_jumps = 0;
  post.e_w = Eigen::VectorXd();
  post.e_w_alpha = Eigen::MatrixXd(k, 0);
  post.e_w_alpha_outer = Eigen::MatrixXd(k * (k + 1) / 2, 0);
  return post;
}

}  // namespace

TEST_CASE("update_D is the mean of second moments") {
  PosteriorSummary a = degenerate_posterior(Eigen::VectorXd::Zero(2), 0, 1);
  a.e_alpha_outer << 2.0, 0.3, 0.3, 1.0;
  PosteriorSummary b = a;
  SUBCASE("fixed point at the prior") {
    Eigen::VectorXd d = update_D({a, b});
    CHECK(d[0] == doctest::Approx(2.0));
    CHECK(d[1] == doctest::Approx(1.0));
  }
  SUBCASE("single subject") {
    a.e_alpha_outer(0, 0) = 5.0;
    Eigen::VectorXd d = update_D({a});
    CHECK(d[0] == doctest::Approx(5.0));
  }
  SUBCASE("arithmetic mean of two subjects") {
    a.e_alpha_outer(0, 0) = 1.0;
    b.e_alpha_outer(0, 0) = 3.0;
    Eigen::VectorXd d = update_D({a, b});
    CHECK(d[0] == doctest::Approx(2.0));
  }
}

TEST_CASE("update_sigma2 averages residual squares and floors at zero") {
  ModelSpec spec = simple_model(simple_basis(1, 1, 0.0, 2.0), 2, 1, 0, 0);
  ParameterSet params = default_params(spec);
  SubjectRecord s = make_subject(spec, {0.5, 1.5}, 2.0, 0);
  PosteriorSummary post = degenerate_posterior(Eigen::VectorXd::Zero(1), 2, 2);

  SUBCASE("perfect fit hits the variance floor") {
    Eigen::VectorXd s2 = update_sigma2({s}, {post}, params);
    CHECK(s2[0] == 1e-10);
    CHECK(s2[1] == 1e-10);
  }
  SUBCASE("constant residual expectations pass through") {
    post.e_resid_sq.setConstant(0.37);
    Eigen::VectorXd s2 = update_sigma2({s}, {post}, params);
    CHECK(s2[0] == doctest::Approx(0.37).epsilon(1e-14));
  }
  SUBCASE("missing cells are excluded from the average") {
    s.observed(0, 1) = false;
    post.e_resid_sq << 0.2, 0.0, 0.4, 0.8;
    Eigen::VectorXd s2 = update_sigma2({s}, {post}, params);
    CHECK(s2[0] == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(s2[1] == doctest::Approx(0.8).epsilon(1e-14));
  }
}

TEST_CASE("update_sigma2 matches the conjugate algebraic expansion") {
  // gamma = 0 so the posterior is exactly normal with known moments. The
  // smooth PC keeps the posterior width comparable to the prior, where the
  // 20-node rule is essentially exact.
  TinyStudy study(12, 0.0, 5);
  study.params.gamma = 0.0;
  study.params.Theta = smooth_pc_columns(study.basis, 1);
  GaussHermiteRule rule = gauss_hermite(40);
  auto posteriors = e_step(study.data, study.params, study.basis, rule);
  Eigen::VectorXd got = update_sigma2(study.data, posteriors, study.params);

  const ParameterSet& p = study.params;
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(2);
  for (size_t i = 0; i < study.data.size(); ++i) {
    const auto& s = study.data[i];
    double prec = 1.0 / p.D[0], lin = 0.0;
    std::vector<double> a_vis(s.n_visits()), m_vis(s.n_visits());
    for (int v = 0; v < s.n_visits(); ++v) {
      Eigen::VectorXd b = study.basis.eval(s.visit_times[v]);
      a_vis[v] = (p.Theta.transpose() * b)[0];
      m_vis[v] = b.dot(p.theta);
      for (int j = 0; j < 2; ++j) {
        double r = s.y(v, j) - s.x[j].row(v).dot(p.beta0[j]) - m_vis[v] * p.beta1[j];
        prec += p.beta1[j] * p.beta1[j] * a_vis[v] * a_vis[v] / p.sigma2[j];
        lin += p.beta1[j] * r * a_vis[v] / p.sigma2[j];
      }
    }
    double v_post = 1.0 / prec, m_post = v_post * lin;
    for (int v = 0; v < s.n_visits(); ++v) {
      for (int j = 0; j < 2; ++j) {
        double r = s.y(v, j) - s.x[j].row(v).dot(p.beta0[j]) - m_vis[v] * p.beta1[j];
        double rbar = r - p.beta1[j] * a_vis[v] * m_post;
        sums[j] += rbar * rbar + p.beta1[j] * p.beta1[j] * a_vis[v] * a_vis[v] * v_post;
        counts[j] += 1.0;
      }
    }
  }
  for (int j = 0; j < 2; ++j)
    CHECK(got[j] == doctest::Approx(sums[j] / counts[j]).epsilon(1e-6));
}

TEST_CASE("update_beta1 recovers an exact loading and pins the first") {
  ModelSpec spec = simple_model(simple_basis(2, 1, 0.0, 3.0), 2, 2, 0, 0);
  OrthoBasis basis = build_basis(spec.basis);
  ParameterSet params = default_params(spec);
  params.theta = Eigen::VectorXd::LinSpaced(spec.basis.q(), 1.0, 0.2);
  Eigen::VectorXd alpha0(2);
  alpha0 << 0.7, -0.4;

  SubjectRecord s = make_subject(spec, {0.0, 1.0, 2.0, 3.0}, 3.0, 0);
  for (int v = 0; v < 4; ++v) {
    double latent = latent_trajectory(params, basis, alpha0, s.visit_times[v]);
    s.y(v, 0) = latent;
    s.y(v, 1) = 0.8 * latent;
  }
  PosteriorSummary post = degenerate_posterior(alpha0, 4, 2);
  Eigen::VectorXd b1 = update_beta1({s}, {post}, params, basis);
  CHECK(b1[0] == 1.0);
  CHECK(b1[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("update_beta1 matches direct accumulation on noisy data") {
  TinyStudy study(15, 0.25, 9);
  GaussHermiteRule rule = gauss_hermite(20);
  auto posteriors = e_step(study.data, study.params, study.basis, rule);
  Eigen::VectorXd got = update_beta1(study.data, posteriors, study.params, study.basis);

  const ParameterSet& p = study.params;
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < study.data.size(); ++i) {
    const auto& s = study.data[i];
    for (int v = 0; v < s.n_visits(); ++v) {
      Eigen::VectorXd b = study.basis.eval(s.visit_times[v]);
      double m = b.dot(p.theta);
      double a = (p.Theta.transpose() * b)[0];
      double e_lin = m + a * posteriors[i].e_alpha[0];
      double e_sq = m * m + 2.0 * m * a * posteriors[i].e_alpha[0] +
                    a * a * posteriors[i].e_alpha_outer(0, 0);
      num += (s.y(v, 1) - s.x[1].row(v).dot(p.beta0[1])) * e_lin;
      den += e_sq;
    }
  }
  CHECK(got[1] == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("Breslow update reduces to Nelson-Aalen when gamma = eta = 0") {
  // 50 subjects with ties in the event times.
  ModelSpec spec = simple_model(simple_basis(2, 2, 0.0, 10.0), 1, 1, 0, 0);
  OrthoBasis basis = build_basis(spec.basis);
  std::vector<SubjectRecord> data;
  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    double t = 0.5 + std::floor(rng.uniform() * 16.0) * 0.5;  // grid times force ties
    int delta = rng.uniform() < 0.7 ? 1 : 0;
    SubjectRecord s = make_subject(spec, {0.0}, t, delta);
    s.id = "r" + std::to_string(i);
    s.y(0, 0) = rng.normal();
    data.push_back(s);
  }
  ParameterSet params = default_params(spec);
  params.gamma = 0.0;
  std::vector<double> times;
  for (const auto& s : data)
    if (s.event_indicator) times.push_back(s.event_time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  params.hazard.jump_times = times;
  params.hazard.increments.assign(times.size(), 0.02);

  GaussHermiteRule rule = gauss_hermite(8);
  auto posteriors = e_step(data, params, basis, rule);
  StepHazard updated = update_hazard(data, posteriors, params, basis);

  for (size_t u = 0; u < times.size(); ++u) {
    double d = 0.0, rsize = 0.0;
    for (const auto& s : data) {
      if (s.event_indicator && s.event_time == times[u]) d += 1.0;
      if (s.event_time >= times[u]) rsize += 1.0;
    }
    CHECK(std::abs(updated.increments[u] - d / rsize) < 1e-12);
  }
}

TEST_CASE("Breslow single-subject closed form") {
  ModelSpec spec = simple_model(simple_basis(2, 1, 0.0, 4.0), 1, 1, 0, 1);
  OrthoBasis basis = build_basis(spec.basis);
  ParameterSet params = default_params(spec);
  params.theta = Eigen::VectorXd::LinSpaced(spec.basis.q(), 0.5, -0.1);
  params.gamma = 0.4;
  params.eta[0] = 0.6;
  params.hazard.jump_times = {2.0};
  params.hazard.increments = {0.1};
  SubjectRecord s = make_subject(spec, {0.5, 1.0}, 2.0, 1);
  s.y << 0.2, -0.3;
  s.z[0] = 1.3;

  GaussHermiteRule rule = gauss_hermite(20);
  auto posteriors = e_step({s}, params, {basis}, rule);
  StepHazard updated = update_hazard({s}, posteriors, params, basis);
  Eigen::VectorXd b = basis.eval(2.0);
  double expect = std::exp(-s.z[0] * params.eta[0] - params.gamma * b.dot(params.theta)) /
                  posteriors[0].e_w[0];
  CHECK(updated.increments[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("Breslow matches the textbook estimator with covariates, gamma = 0") {
  ModelSpec spec = simple_model(simple_basis(2, 1, 0.0, 8.0), 1, 1, 0, 1);
  OrthoBasis basis = build_basis(spec.basis);
  std::vector<SubjectRecord> data;
  Rng rng(7);
  for (int i = 0; i < 5; ++i) {
    SubjectRecord s = make_subject(spec, {0.0}, 1.0 + i, i % 2 == 0 ? 1 : 0);
    s.id = "c" + std::to_string(i);
    s.y(0, 0) = rng.normal();
    s.z[0] = rng.normal();
    data.push_back(s);
  }
  data[4].event_indicator = 1;
  ParameterSet params = default_params(spec);
  params.gamma = 0.0;
  params.eta[0] = 0.45;
  StepHazard skel = testutil::breslow_oracle(data, params.eta);
  params.hazard.jump_times = skel.jump_times;
  params.hazard.increments.assign(skel.jump_times.size(), 0.05);

  auto posteriors = e_step(data, params, basis, gauss_hermite(6));
  StepHazard updated = update_hazard(data, posteriors, params, basis);
  for (size_t u = 0; u < skel.jump_times.size(); ++u)
    CHECK(std::abs(updated.increments[u] - skel.increments[u]) < 1e-12);
}

TEST_CASE("beta0 Newton step is exact weighted least squares when the score is linear") {
  ModelSpec spec = simple_model(simple_basis(1, 1, 0.0, 2.0), 1, 1, 2, 0);
  OrthoBasis basis = build_basis(spec.basis);
  ParameterSet params = default_params(spec);
  params.theta = Eigen::VectorXd::LinSpaced(spec.basis.q(), 0.3, -0.3);

  Rng rng(3);
  std::vector<SubjectRecord> data;
  std::vector<PosteriorSummary> posteriors;
  for (int i = 0; i < 8; ++i) {
    SubjectRecord s = make_subject(spec, {0.2, 0.9, 1.7}, 2.0, 0);
    for (int v = 0; v < 3; ++v) {
      s.x[0](v, 0) = rng.normal();
      s.x[0](v, 1) = rng.normal();
      s.y(v, 0) = rng.normal();
    }
    data.push_back(s);
    posteriors.push_back(degenerate_posterior(Eigen::VectorXd::Zero(1), 3, 1));
  }

  SUBCASE("zero score leaves parameters unchanged") {
    // Set y to reproduce the linear predictor exactly.
    params.beta0[0] << 0.5, -1.2;
    for (auto& s : data)
      for (int v = 0; v < 3; ++v)
        s.y(v, 0) = s.x[0].row(v).dot(params.beta0[0]) +
                    basis.eval(s.visit_times[v]).dot(params.theta);
    auto upd = newton_step_beta0(data, posteriors, params, basis);
    CHECK(upd[0].score.cwiseAbs().maxCoeff() < 1e-12);
    CHECK((upd[0].value - params.beta0[0]).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("one full step lands on the normal-equations solution") {
    params.beta0[0] << 2.0, 2.0;  // arbitrary start
    Eigen::MatrixXd X(24, 2);
    Eigen::VectorXd yadj(24);
    int row = 0;
    for (const auto& s : data)
      for (int v = 0; v < 3; ++v) {
        X.row(row) = s.x[0].row(v);
        yadj[row] = s.y(v, 0) - basis.eval(s.visit_times[v]).dot(params.theta);
        ++row;
      }
    Eigen::VectorXd wls = (X.transpose() * X).ldlt().solve(X.transpose() * yadj);
    auto upd = newton_step_beta0(data, posteriors, params, basis);
    CHECK((upd[0].value - wls).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("beta0 Newton step hand-expanded scalar") {
  ModelSpec spec = simple_model(simple_basis(0, 0, 0.0, 1.0), 1, 1, 1, 0);
  OrthoBasis basis = build_basis(spec.basis);
  ParameterSet params = default_params(spec);
  params.theta[0] = 0.2;
  params.sigma2[0] = 0.5;
  params.beta0[0][0] = 0.1;
  SubjectRecord s = make_subject(spec, {0.5}, 1.0, 0);
  s.y(0, 0) = 2.0;
  s.x[0](0, 0) = 1.5;
  Eigen::VectorXd alpha0 = Eigen::VectorXd::Constant(1, 0.3);
  PosteriorSummary post = degenerate_posterior(alpha0, 1, 1);
  auto upd = newton_step_beta0({s}, {post}, params, basis);
  double resid = 2.0 - 1.5 * 0.1 - 0.2 - 0.3;  // y - x b0 - theta - alpha (b = Theta = 1)
  double expect = 0.1 + (resid * 1.5 / 0.5) / (1.5 * 1.5 / 0.5);
  CHECK(upd[0].value[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("survival Newton scores match finite differences of the log-likelihood") {
  TinyStudy study(30, 0.3, 17);
  GaussHermiteRule rule = gauss_hermite(12);
  auto posteriors = e_step(study.data, study.params, study.basis, rule);

  auto loglik_at = [&](const ParameterSet& p) {
    return observed_loglik(study.data, p, study.basis, rule);
  };

  SUBCASE("gamma score") {
    NewtonUpdate up = newton_step_gamma(study.data, posteriors, study.params, study.basis);
    double h = 1e-6;
    ParameterSet plus = study.params, minus = study.params;
    plus.gamma += h;
    minus.gamma -= h;
    double fd = (loglik_at(plus) - loglik_at(minus)) / (2.0 * h);
    CHECK(std::abs(up.score[0] - fd) / (std::abs(fd) + 1e-8) < 1e-4);
  }

  SUBCASE("eta score") {
    NewtonUpdate up = newton_step_eta(study.data, posteriors, study.params, study.basis);
    double h = 1e-6;
    for (int c = 0; c < study.params.eta.size(); ++c) {
      ParameterSet plus = study.params, minus = study.params;
      plus.eta[c] += h;
      minus.eta[c] -= h;
      double fd = (loglik_at(plus) - loglik_at(minus)) / (2.0 * h);
      CHECK(std::abs(up.score[c] - fd) / (std::abs(fd) + 1e-6) < 1e-4);
    }
  }

  SUBCASE("theta score") {
    NewtonUpdate up = newton_step_theta(study.data, posteriors, study.params, study.basis);
    double h = 1e-6;
    for (int c = 0; c < study.params.theta.size(); c += 2) {
      ParameterSet plus = study.params, minus = study.params;
      plus.theta[c] += h;
      minus.theta[c] -= h;
      double fd = (loglik_at(plus) - loglik_at(minus)) / (2.0 * h);
      CHECK(std::abs(up.score[c] - fd) / (std::abs(fd) + 1e-6) < 1e-4);
    }
  }

  SUBCASE("Theta column score") {
    auto ups = newton_step_Theta(study.data, posteriors, study.params, study.basis);
    double h = 1e-6;
    for (int c = 0; c < study.params.theta.size(); c += 3) {
      ParameterSet plus = study.params, minus = study.params;
      plus.Theta(c, 0) += h;
      minus.Theta(c, 0) -= h;
      double fd = (loglik_at(plus) - loglik_at(minus)) / (2.0 * h);
      CHECK(std::abs(ups[0].score[c] - fd) / (std::abs(fd) + 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("theta step drops survival terms when gamma = 0") {
  TinyStudy study(12, 0.0, 23);
  study.params.gamma = 0.0;
  GaussHermiteRule rule = gauss_hermite(12);
  auto posteriors = e_step(study.data, study.params, study.basis, rule);
  NewtonUpdate up = newton_step_theta(study.data, posteriors, study.params, study.basis);

  const int q = study.params.q();
  Eigen::VectorXd score = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(q, q);
  const ParameterSet& p = study.params;
  for (size_t i = 0; i < study.data.size(); ++i) {
    const auto& s = study.data[i];
    for (int v = 0; v < s.n_visits(); ++v) {
      Eigen::VectorXd b = study.basis.eval(s.visit_times[v]);
      double m = b.dot(p.theta);
      double a = (p.Theta.transpose() * b)[0];
      for (int j = 0; j < 2; ++j) {
        double resid = s.y(v, j) - s.x[j].row(v).dot(p.beta0[j]) - p.beta1[j] * m -
                       p.beta1[j] * a * posteriors[i].e_alpha[0];
        score += (p.beta1[j] * resid / p.sigma2[j]) * b;
        info += (p.beta1[j] * p.beta1[j] / p.sigma2[j]) * b * b.transpose();
      }
    }
  }
  Eigen::VectorXd expect = p.theta + info.ldlt().solve(score);
  CHECK((up.value - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("no events leaves eta and gamma untouched") {
  TinyStudy study(10, 0.2, 31);
  for (auto& s : study.data) s.event_indicator = 0;
  ParameterSet params = study.params;
  params.hazard.jump_times.clear();
  params.hazard.increments.clear();
  GaussHermiteRule rule = gauss_hermite(8);
  auto posteriors = e_step(study.data, params, study.basis, rule);
  NewtonUpdate eta = newton_step_eta(study.data, posteriors, params, study.basis);
  NewtonUpdate gam = newton_step_gamma(study.data, posteriors, params, study.basis);
  CHECK((eta.value - params.eta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(gam.value[0] == params.gamma);
}

TEST_CASE("orthonormalize canonical form") {
  ModelSpec spec = simple_model(simple_basis(2, 3, 0.0, 5.0), 1, 2, 0, 0);
  OrthoBasis basis = build_basis(spec.basis);
  const int q = spec.basis.q();

  SUBCASE("already orthonormal is an identity up to sign") {
    ParameterSet params = default_params(spec);
    params.Theta = smooth_pc_columns(basis, 2);
    params.D << 2.0, 1.0;
    ParameterSet out = orthonormalize(params);
    CHECK((out.D - params.D).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.Theta - params.Theta).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("swapped columns are reordered by variance") {
    ParameterSet params = default_params(spec);
    Eigen::MatrixXd pc = smooth_pc_columns(basis, 2);
    params.Theta.col(0) = pc.col(1);
    params.Theta.col(1) = pc.col(0);
    params.D << 1.0, 2.0;
    ParameterSet out = orthonormalize(params);
    CHECK(out.D[0] == doctest::Approx(2.0));
    CHECK(out.D[1] == doctest::Approx(1.0));
    CHECK((out.Theta.col(0) - pc.col(0)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((out.Theta.col(1) - pc.col(1)).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("kernel is preserved for a random non-orthonormal Theta") {
    ParameterSet params = default_params(spec);
    Rng rng(19);
    for (int r = 0; r < q; ++r)
      for (int c = 0; c < 2; ++c) params.Theta(r, c) = rng.normal();
    params.D << 1.7, 0.4;
    ParameterSet out = orthonormalize(params);
    CHECK((out.Theta.transpose() * out.Theta - Eigen::MatrixXd::Identity(2, 2))
              .cwiseAbs()
              .maxCoeff() < 1e-10);
    CHECK(out.D[0] >= out.D[1]);
    for (int c = 0; c < 2; ++c) {
      for (int r = 0; r < q; ++r) {
        if (std::abs(out.Theta(r, c)) > 1e-9) {
          CHECK(out.Theta(r, c) > 0.0);
          break;
        }
      }
    }
    Rng pts(5);
    for (int rep = 0; rep < 5; ++rep) {
      double t = 5.0 * pts.uniform(), u = 5.0 * pts.uniform();
      Eigen::VectorXd bt = basis.eval(t), bu = basis.eval(u);
      double before = bt.dot(params.Theta * params.D.asDiagonal() *
                             params.Theta.transpose() * bu);
      double after =
          bt.dot(out.Theta * out.D.asDiagonal() * out.Theta.transpose() * bu);
      CHECK(std::abs(before - after) < 1e-10);
    }
  }

  SUBCASE("rank-deficient Theta is rejected") {
    ParameterSet params = default_params(spec);
    params.Theta.col(1) = params.Theta.col(0);
    params.D << 1.0, 1.0;
    try {
      orthonormalize(params);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::RankDeficient);
    }
  }
}

TEST_CASE("orthonormalize preserves the observed log-likelihood") {
  TinyStudy study(15, 0.3, 37);
  ParameterSet params = study.params;
  // Make Theta deliberately non-orthonormal.
  params.Theta *= 1.9;
  params.D[0] = 0.5;
  GaussHermiteRule rule = gauss_hermite(20);
  double before = observed_loglik(study.data, params, study.basis, rule);
  ParameterSet canon = orthonormalize(params);
  double after = observed_loglik(study.data, canon, study.basis, rule);
  CHECK(std::abs(after - before) / (1.0 + std::abs(before)) < 1e-8);
}

TEST_CASE("initialize recovers exact coefficients from noise-free data") {
  ModelSpec spec = simple_model(simple_basis(2, 2, 0.0, 4.0), 2, 1, 1, 0);
  OrthoBasis basis = build_basis(spec.basis);
  Eigen::VectorXd theta_true = Eigen::VectorXd::LinSpaced(spec.basis.q(), 0.9, -0.4);
  Eigen::VectorXd beta0_true(2);
  beta0_true << 0.7, -0.3;

  Rng rng(13);
  std::vector<SubjectRecord> data;
  // More distinct visit times than basis dimensions, so theta is identified.
  for (int i = 0; i < 10; ++i) {
    SubjectRecord s =
        make_subject(spec, {0.0, 0.8, 1.6, 2.4, 3.2, 4.0}, 4.0, i % 3 == 0);
    s.id = "i" + std::to_string(i);
    for (int v = 0; v < s.n_visits(); ++v) {
      double x = rng.normal();
      for (int j = 0; j < 2; ++j) {
        s.x[j](v, 0) = x;
        s.y(v, j) = x * beta0_true[j] + basis.eval(s.visit_times[v]).dot(theta_true);
      }
    }
    data.push_back(s);
  }
  ParameterSet init = initialize(data, spec);
  CHECK(std::abs(init.beta0[0][0] - beta0_true[0]) < 1e-8);
  CHECK(std::abs(init.beta0[1][0] - beta0_true[1]) < 1e-8);
  CHECK((init.theta - theta_true).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(init.gamma == 0.0);

  ParameterSet again = initialize(data, spec);
  CHECK((again.theta - init.theta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(again.sigma2 == init.sigma2);
}

TEST_CASE("initialize rejects underdetermined biomarkers") {
  ModelSpec spec = simple_model(simple_basis(1, 0, 0.0, 2.0), 2, 1, 1, 0);
  SubjectRecord s = make_subject(spec, {0.5}, 1.0, 1);
  s.observed(0, 1) = false;  // biomarker 2 has zero cells
  try {
    initialize({s}, spec);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnderdeterminedInit);
  }
}

TEST_CASE("observed log-likelihood closed forms and dense oracle") {
  SUBCASE("empty dataset gives zero") {
    ModelSpec spec = simple_model(simple_basis(1, 0, 0.0, 1.0), 1, 1, 0, 0);
    OrthoBasis basis = build_basis(spec.basis);
    ParameterSet params = default_params(spec);
    CHECK(observed_loglik({}, params, basis, gauss_hermite(5)) == 0.0);
  }

  SUBCASE("no longitudinal data, gamma = 0, single event") {
    ModelSpec spec = simple_model(simple_basis(1, 0, 0.0, 3.0), 1, 1, 0, 1);
    OrthoBasis basis = build_basis(spec.basis);
    ParameterSet params = default_params(spec);
    params.gamma = 0.0;
    params.eta[0] = 0.8;
    params.hazard.jump_times = {2.0};
    params.hazard.increments = {0.3};
    SubjectRecord s = make_subject(spec, {}, 2.0, 1);
    s.z[0] = 0.9;
    double got = observed_loglik({s}, params, basis, gauss_hermite(10));
    double zeta = 0.9 * 0.8;
    double expect = std::log(0.3) + zeta - 0.3 * std::exp(zeta);
    CHECK(got == doctest::Approx(expect).epsilon(1e-10));
  }

  SUBCASE("dense-grid oracle on a k=1 toy subject") {
    ModelSpec spec = simple_model(simple_basis(2, 2, 0.0, 4.0), 2, 1, 1, 1);
    OrthoBasis basis = build_basis(spec.basis);
    ParameterSet params = default_params(spec);
    params.theta = Eigen::VectorXd::LinSpaced(spec.basis.q(), 0.8, -0.5);
    params.sigma2 << 1.0, 1.6;
    params.beta1[1] = 0.7;
    params.beta0[0][0] = 0.25;
    params.beta0[1][0] = -0.4;
    params.D[0] = 1.2;
    params.eta[0] = 0.3;
    params.gamma = 0.5;
    params.hazard.jump_times = {0.7, 1.4, 2.2, 3.1};
    params.hazard.increments = {0.01, 0.015, 0.02, 0.025};
    SubjectRecord s = make_subject(spec, {0.8, 1.6, 2.0}, 2.2, 1);
    s.y << 1.1, 0.4, 0.7, -0.2, 0.9, 0.5;
    for (int j = 0; j < 2; ++j) s.x[j].setConstant(0.5);
    s.z[0] = 1.0;
    double gh = observed_loglik({s}, params, basis, gauss_hermite(20));
    double dense = dense_marginal_loglik(s, params, basis, 8001);
    CHECK(std::abs(gh - dense) / std::abs(dense) < 1e-5);
  }

  SUBCASE("event with no hazard mass is a zero-likelihood error") {
    ModelSpec spec = simple_model(simple_basis(1, 0, 0.0, 3.0), 1, 1, 0, 0);
    OrthoBasis basis = build_basis(spec.basis);
    ParameterSet params = default_params(spec);
    params.hazard.jump_times = {1.0};
    params.hazard.increments = {0.2};
    SubjectRecord s = make_subject(spec, {}, 2.0, 1);  // event at 2.0, no jump there
    try {
      observed_loglik({s}, params, basis, gauss_hermite(5));
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ZeroLikelihood);
    }
  }
}

TEST_CASE("e_step is deterministic and duplicates agree") {
  TinyStudy study(6, 0.3, 41);
  std::vector<SubjectRecord> two = {study.data[0], study.data[0]};
  two[1].id = "copy";
  GaussHermiteRule rule = gauss_hermite(10);
  auto post = e_step(two, study.params, study.basis, rule);
  REQUIRE(post.size() == 2);
  CHECK(post[0].loglik == post[1].loglik);
  CHECK((post[0].e_alpha - post[1].e_alpha).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(posterior_expectation(two[0], study.params, study.basis, rule,
                                       [](const Eigen::VectorXd&) { return 1.0; }) -
                 1.0) < 1e-12);
}
