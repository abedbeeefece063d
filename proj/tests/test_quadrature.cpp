#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latentjm/quadrature.hpp"
#include "latentjm/simulator.hpp"
#include "testutil.hpp"

using namespace latentjm;
using namespace testutil;

TEST_CASE("Gauss-Hermite closed forms") {
  GaussHermiteRule r1 = gauss_hermite(1);
  CHECK(r1.nodes[0] == 0.0);
  CHECK(r1.weights[0] == doctest::Approx(std::sqrt(M_PI)).epsilon(1e-14));

  GaussHermiteRule r2 = gauss_hermite(2);
  CHECK(r2.nodes[0] == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(r2.nodes[1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(r2.weights[0] == doctest::Approx(0.5 * std::sqrt(M_PI)).epsilon(1e-14));

  GaussHermiteRule r10 = gauss_hermite(10);
  CHECK(std::abs(r10.weights.sum() - std::sqrt(M_PI)) < 1e-12);
  double m4 = 0.0;
  for (int i = 0; i < 10; ++i) m4 += r10.weights[i] * std::pow(r10.nodes[i], 4);
  CHECK(std::abs(m4 - 0.75 * std::sqrt(M_PI)) < 1e-12);
  for (int i = 0; i < 5; ++i) {
    CHECK(r10.nodes[i] == -r10.nodes[9 - i]);
    CHECK(r10.weights[i] == r10.weights[9 - i]);
    CHECK(r10.weights[i] > 0.0);
  }
  CHECK_THROWS_AS(gauss_hermite(0), Error);
}

TEST_CASE("Gauss-Hermite is exact up to degree 2n-1") {
  GaussHermiteRule r = gauss_hermite(6);
  // Moments of exp(-x^2): odd vanish, m_{2j} = (2j-1)!! sqrt(pi) / 2^j.
  std::vector<double> expected = {std::sqrt(M_PI), 0.0, 0.5 * std::sqrt(M_PI), 0.0,
                                  0.75 * std::sqrt(M_PI), 0.0,
                                  15.0 / 8.0 * std::sqrt(M_PI), 0.0,
                                  105.0 / 16.0 * std::sqrt(M_PI), 0.0,
                                  945.0 / 32.0 * std::sqrt(M_PI), 0.0};
  for (int deg = 0; deg <= 11; ++deg) {
    double got = 0.0;
    for (int i = 0; i < r.n; ++i) got += r.weights[i] * std::pow(r.nodes[i], deg);
    CHECK(std::abs(got - expected[deg]) < 1e-11);
  }
}

namespace {

// One-subject fixture: J=1, k=1, degree-0 basis on [0,1] so b(t) = 1.
struct ConjugateToy {
  ModelSpec spec;
  OrthoBasis basis;
  ParameterSet params;
  SubjectRecord subject;

  ConjugateToy() : spec(simple_model(simple_basis(0, 0, 0.0, 1.0), 1, 1, 1, 0)),
                   basis(build_basis(spec.basis)),
                   params(default_params(spec)),
                   subject(make_subject(spec, {0.5}, 0.9, 0)) {
    params.theta[0] = 0.4;
    params.sigma2[0] = 2.0;
    params.D[0] = 1.0;
    params.beta0[0][0] = 0.3;
    subject.y(0, 0) = 1.9;
    subject.x[0](0, 0) = 1.0;
  }
};

}  // namespace

TEST_CASE("conjugate-normal posterior oracle (J=1, k=1, gamma=0)") {
  ConjugateToy toy;
  GaussHermiteRule rule = gauss_hermite(20);
  PosteriorSummary post =
      compute_posterior_summary(toy.subject, toy.params, toy.basis, rule, {});

  // a = b' Theta = 1; v = (1/D + a^2 beta11^2 / sigma^2)^{-1};
  // mean = v a beta11 sigma^{-2} (y - x beta0 - a theta beta11).
  double a = 1.0;
  double v = 1.0 / (1.0 / toy.params.D[0] + a * a / toy.params.sigma2[0]);
  double resid = toy.subject.y(0, 0) - toy.params.beta0[0][0] - a * toy.params.theta[0];
  double mean = v * a * resid / toy.params.sigma2[0];
  CHECK(std::abs(post.e_alpha[0] - mean) < 1e-6);
  CHECK(std::abs(post.e_alpha_outer(0, 0) - (v + mean * mean)) < 1e-6);
}

TEST_CASE("no data and gamma=0 returns the prior") {
  ModelSpec spec = simple_model(simple_basis(1, 1, 0.0, 2.0), 1, 2, 0, 0);
  OrthoBasis basis = build_basis(spec.basis);
  ParameterSet params = default_params(spec);
  params.D << 2.0, 0.7;
  SubjectRecord s = make_subject(spec, {}, 1.0, 0);
  GaussHermiteRule rule = gauss_hermite(12);
  PosteriorSummary post = compute_posterior_summary(s, params, basis, rule, {});
  CHECK(std::abs(post.e_alpha[0]) < 1e-12);
  CHECK(std::abs(post.e_alpha[1]) < 1e-12);
  CHECK(std::abs(post.e_alpha_outer(0, 0) - 2.0) < 1e-10);
  CHECK(std::abs(post.e_alpha_outer(1, 1) - 0.7) < 1e-10);
  CHECK(std::abs(post.e_alpha_outer(0, 1)) < 1e-12);

  double one = posterior_expectation(s, params, basis, rule,
                                     [](const Eigen::VectorXd&) { return 1.0; });
  CHECK(one == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("E[alpha' alpha] equals the trace of E[alpha alpha']") {
  ConjugateToy toy;
  GaussHermiteRule rule = gauss_hermite(15);
  PosteriorSummary post =
      compute_posterior_summary(toy.subject, toy.params, toy.basis, rule, {});
  double direct = posterior_expectation(
      toy.subject, toy.params, toy.basis, rule,
      [](const Eigen::VectorXd& a) { return a.squaredNorm(); });
  CHECK(std::abs(direct - post.e_alpha_outer.trace()) < 1e-12);
}

namespace {

// Two-biomarker toy with an event and a nontrivial hazard, k x J general.
struct SurvivalToy {
  ModelSpec spec;
  OrthoBasis basis;
  ParameterSet params;
  SubjectRecord subject;

  explicit SurvivalToy(int k, double gamma)
      : spec(simple_model(simple_basis(2, 2, 0.0, 4.0), 2, k, 1, 1)),
        basis(build_basis(spec.basis)),
        params(default_params(spec)) {
    params.theta = Eigen::VectorXd::LinSpaced(spec.basis.q(), 0.8, -0.5);
    params.sigma2 << 1.0, 1.6;
    params.beta1[1] = 0.7;
    params.beta0[0][0] = 0.25;
    params.beta0[1][0] = -0.4;
    for (int kk = 0; kk < k; ++kk) params.D[kk] = 1.2 / (kk + 1);
    params.eta[0] = 0.3;
    params.gamma = gamma;
    params.hazard.jump_times = {0.7, 1.4, 2.2, 3.1};
    params.hazard.increments = {0.01, 0.015, 0.02, 0.025};

    // Visits avoid t = 0 where the first orthonormal basis function is
    // largest, keeping the posterior width comparable to the prior so the
    // prior-scaled rule stays accurate at modest node counts.
    subject = make_subject(spec, {0.8, 1.6, 2.0}, 2.2, 1);
    subject.y << 1.1, 0.4, 0.7, -0.2, 0.9, 0.5;
    for (int j = 0; j < 2; ++j) subject.x[j].setConstant(0.5);
    subject.z[0] = 1.0;
  }
};

}  // namespace

TEST_CASE("normalization holds on a nontrivial subject") {
  SurvivalToy toy(2, 0.6);
  GaussHermiteRule rule = gauss_hermite(20);
  double one = posterior_expectation(toy.subject, toy.params, toy.basis, rule,
                                     [](const Eigen::VectorXd&) { return 1.0; });
  CHECK(std::abs(one - 1.0) < 1e-10);
}

TEST_CASE("gamma = 0 makes every link expectation 1") {
  SurvivalToy toy(2, 0.0);
  GaussHermiteRule rule = gauss_hermite(10);
  PosteriorSummary post = compute_posterior_summary(
      toy.subject, toy.params, toy.basis, rule, toy.params.hazard.jump_times);
  REQUIRE(post.n_jumps == 3);  // jumps at 0.7, 1.4, 2.2 are <= T = 2.2
  for (int u = 0; u < post.n_jumps; ++u) CHECK(post.e_w[u] == doctest::Approx(1.0));
  CHECK(post.e_exp_link(1.4) == doctest::Approx(1.0));
}

TEST_CASE("dense-grid equivalence, k = 1") {
  SurvivalToy toy(1, 0.6);
  GaussHermiteRule rule = gauss_hermite(20);
  auto h = [](const Eigen::VectorXd& a) { return a[0]; };
  double gh = posterior_expectation(toy.subject, toy.params, toy.basis, rule, h);
  double dense = dense_posterior_expectation(toy.subject, toy.params, toy.basis, h, 4001);
  CHECK(std::abs(gh - dense) / (std::abs(dense) + 1e-12) < 1e-5);
}

TEST_CASE("dense-grid equivalence, k = 2") {
  SurvivalToy toy(2, 0.5);
  GaussHermiteRule rule = gauss_hermite(20);
  auto h = [](const Eigen::VectorXd& a) { return a[0] * a[1] + 0.5 * a[1]; };
  double gh = posterior_expectation(toy.subject, toy.params, toy.basis, rule, h);
  double dense = dense_posterior_expectation(toy.subject, toy.params, toy.basis, h, 641);
  CHECK(std::abs(gh - dense) / (std::abs(dense) + 1e-12) < 1e-5);
}

TEST_CASE("Monte Carlo oracle for the link expectation, k = 1") {
  SurvivalToy toy(1, 0.6);
  GaussHermiteRule rule = gauss_hermite(20);
  PosteriorSummary post = compute_posterior_summary(toy.subject, toy.params, toy.basis,
                                                    rule, toy.params.hazard.jump_times);
  REQUIRE(post.n_jumps == 3);

  // Importance sampling: the longitudinal history plus the event's linear
  // link term tilt the prior to an exactly normal law; the remaining
  // survival factor exp(-Lambda_i(alpha)) becomes the weight.
  const auto& s = toy.subject;
  const auto& params = toy.params;
  double prec = 1.0 / params.D[0], lin = 0.0;
  for (int v = 0; v < s.n_visits(); ++v) {
    Eigen::VectorXd b = toy.basis.eval(s.visit_times[v]);
    double a = (params.Theta.transpose() * b)[0];
    double m = b.dot(params.theta);
    for (int j = 0; j < 2; ++j) {
      double resid = s.y(v, j) - s.x[j].row(v).dot(params.beta0[j]) - m * params.beta1[j];
      prec += params.beta1[j] * params.beta1[j] * a * a / params.sigma2[j];
      lin += params.beta1[j] * resid * a / params.sigma2[j];
    }
  }
  {
    Eigen::VectorXd b = toy.basis.eval(s.event_time);
    lin += params.gamma * (params.Theta.transpose() * b)[0];
  }
  double v_post = 1.0 / prec, m_post = v_post * lin;

  std::vector<double> a_jump(post.n_jumps), base(post.n_jumps);
  for (int u = 0; u < post.n_jumps; ++u) {
    Eigen::VectorXd b = toy.basis.eval(params.hazard.jump_times[u]);
    a_jump[u] = (params.Theta.transpose() * b)[0];
    base[u] = params.hazard.increments[u] *
              std::exp(s.z.dot(params.eta) + params.gamma * b.dot(params.theta));
  }
  const int M = 1000000;
  Rng rng(20240517ULL);
  const int check_u = 1;
  double sw = 0.0, swr = 0.0;
  std::vector<double> w_draw(M), r_draw(M);
  for (int d = 0; d < M; ++d) {
    double alpha = m_post + std::sqrt(v_post) * rng.normal();
    double cum = 0.0;
    for (int u = 0; u < post.n_jumps; ++u)
      cum += base[u] * std::exp(params.gamma * a_jump[u] * alpha);
    double w = std::exp(-cum);
    double r = std::exp(params.gamma * a_jump[check_u] * alpha);
    w_draw[d] = w;
    r_draw[d] = r;
    sw += w;
    swr += w * r;
  }
  double mc = swr / sw;
  double wbar = sw / M;
  double var_acc = 0.0;
  for (int d = 0; d < M; ++d) {
    double infl = w_draw[d] * (r_draw[d] - mc) / wbar;
    var_acc += infl * infl;
  }
  double mc_se = std::sqrt(var_acc) / M;
  CHECK(std::abs(post.e_w[check_u] - mc) < 3.0 * mc_se + 1e-9);
}

TEST_CASE("node-count refinement is monotone for a smooth functional") {
  SurvivalToy toy(1, 0.6);
  auto h = [](const Eigen::VectorXd& a) { return std::exp(0.3 * a[0]); };
  double e5 = posterior_expectation(toy.subject, toy.params, toy.basis, gauss_hermite(5), h);
  double e10 =
      posterior_expectation(toy.subject, toy.params, toy.basis, gauss_hermite(10), h);
  double e20 =
      posterior_expectation(toy.subject, toy.params, toy.basis, gauss_hermite(20), h);
  CHECK(std::abs(e10 - e20) <= std::abs(e5 - e10) + 1e-14);
}

TEST_CASE("log-space stability under a 1e-3 residual rescaling") {
  SurvivalToy toy(2, 0.6);
  GaussHermiteRule rule = gauss_hermite(15);
  PosteriorSummary base = compute_posterior_summary(toy.subject, toy.params, toy.basis,
                                                    rule, toy.params.hazard.jump_times);

  // Scale Y, beta0, theta, Theta by c and sigma by c (sigma2 by c^2); gamma
  // by 1/c. The posterior of alpha is unchanged in exact arithmetic.
  const double c = 1e-3;
  SurvivalToy scaled(2, 0.6);
  scaled.params.gamma = toy.params.gamma / c;
  scaled.params.theta = c * toy.params.theta;
  scaled.params.Theta = c * toy.params.Theta;
  scaled.params.sigma2 = c * c * toy.params.sigma2;
  for (int j = 0; j < 2; ++j) scaled.params.beta0[j] = c * toy.params.beta0[j];
  scaled.subject.y = c * toy.subject.y;
  PosteriorSummary got = compute_posterior_summary(
      scaled.subject, scaled.params, scaled.basis, rule, scaled.params.hazard.jump_times);

  for (int kk = 0; kk < 2; ++kk)
    CHECK(std::abs(got.e_alpha[kk] - base.e_alpha[kk]) /
              (std::abs(base.e_alpha[kk]) + 1.0) <
          1e-10);
  for (int u = 0; u < base.n_jumps; ++u)
    CHECK(std::abs(got.e_w[u] - base.e_w[u]) / std::abs(base.e_w[u]) < 1e-10);
}

TEST_CASE("invalid variance and degenerate likelihood are reported") {
  ConjugateToy toy;
  GaussHermiteRule rule = gauss_hermite(5);
  toy.params.D[0] = -1.0;
  try {
    compute_posterior_summary(toy.subject, toy.params, toy.basis, rule, {});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidVariance);
  }

  ConjugateToy toy2;
  toy2.subject.y(0, 0) = 1e200;  // residual overflows the Gaussian log-density
  try {
    compute_posterior_summary(toy2.subject, toy2.params, toy2.basis, rule, {});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateLikelihood);
  }
}
