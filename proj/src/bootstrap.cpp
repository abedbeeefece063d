#include "latentjm/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "latentjm/simulator.hpp"
#include "latentjm/threading.hpp"

namespace latentjm {

namespace {

enum class ParamKind { location, variance };

struct FlatLayout {
  std::vector<std::string> names;
  std::vector<ParamKind> kinds;
  std::vector<bool> wald;  // Wald p-value reported
};

FlatLayout flat_layout(const ModelSpec& spec) {
  FlatLayout lay;
  auto add = [&](const std::string& nm, ParamKind kind, bool wald) {
    lay.names.push_back(nm);
    lay.kinds.push_back(kind);
    lay.wald.push_back(wald);
  };
  for (int j = 0; j < spec.J; ++j)
    for (int c = 0; c < spec.p[j]; ++c)
      add(spec.p[j] > 1 ? "beta0_" + std::to_string(j + 1) + "_" + std::to_string(c + 1)
                        : "beta0_" + std::to_string(j + 1),
          ParamKind::location, true);
  for (int j = 1; j < spec.J; ++j)
    add("beta1_" + std::to_string(j + 1), ParamKind::location, true);
  for (int j = 0; j < spec.J; ++j)
    add("sigma2_" + std::to_string(j + 1), ParamKind::variance, false);
  for (int c = 0; c < spec.basis.q(); ++c)
    add("theta_" + std::to_string(c + 1), ParamKind::location, false);
  for (int w = 0; w < spec.k; ++w)
    for (int c = 0; c < spec.basis.q(); ++c)
      add("Theta_" + std::to_string(c + 1) + "_" + std::to_string(w + 1),
          ParamKind::location, false);
  for (int w = 0; w < spec.k; ++w)
    add("D_" + std::to_string(w + 1) + std::to_string(w + 1), ParamKind::variance, false);
  for (int c = 0; c < spec.r; ++c)
    add("eta_" + std::to_string(c + 1), ParamKind::location, true);
  add("gamma", ParamKind::location, true);
  return lay;
}

Eigen::VectorXd flatten_phi(const ParameterSet& params, const ModelSpec& spec) {
  std::vector<double> v;
  for (int j = 0; j < spec.J; ++j)
    for (int c = 0; c < spec.p[j]; ++c) v.push_back(params.beta0[j][c]);
  for (int j = 1; j < spec.J; ++j) v.push_back(params.beta1[j]);
  for (int j = 0; j < spec.J; ++j) v.push_back(params.sigma2[j]);
  for (int c = 0; c < spec.basis.q(); ++c) v.push_back(params.theta[c]);
  for (int w = 0; w < spec.k; ++w)
    for (int c = 0; c < spec.basis.q(); ++c) v.push_back(params.Theta(c, w));
  for (int w = 0; w < spec.k; ++w) v.push_back(params.D[w]);
  for (int c = 0; c < spec.r; ++c) v.push_back(params.eta[c]);
  v.push_back(params.gamma);
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<int>(v.size()));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

Eigen::VectorXd bootstrap_se(const Eigen::MatrixXd& replicate_estimates) {
  const int B = static_cast<int>(replicate_estimates.rows());
  if (B < 2) throw Error(ErrorCode::InsufficientReplicates, "need B >= 2");
  Eigen::VectorXd out(replicate_estimates.cols());
  for (int c = 0; c < replicate_estimates.cols(); ++c) {
    // Shift by the first replicate so identical replicates give exactly zero.
    Eigen::ArrayXd d = replicate_estimates.col(c).array() - replicate_estimates(0, c);
    double dbar = d.mean();
    out[c] = std::sqrt((d - dbar).square().sum() / (B - 1));
  }
  return out;
}

BootstrapResult bootstrap_inference(const std::vector<SubjectRecord>& data,
                                    const ModelSpec& spec, const FitConfig& fit_config,
                                    int B, uint64_t seed) {
  if (B < 2) throw Error(ErrorCode::InsufficientReplicates, "need B >= 2");
  if (data.empty()) throw Error(ErrorCode::NoData, "empty dataset");

  BootstrapResult result;
  result.B = B;
  result.base_fit = fit(data, spec, fit_config);
  FlatLayout lay = flat_layout(spec);
  Eigen::VectorXd point = flatten_phi(result.base_fit.params, spec);
  const int P = static_cast<int>(point.size());
  const int n = static_cast<int>(data.size());

  std::vector<Eigen::VectorXd> est(B);
  std::vector<char> ok(B, 0);
  parallel_for(B, [&](int b) {
    Rng rng(Rng::derive(seed, b + 1));
    std::vector<SubjectRecord> sample;
    sample.reserve(n);
    for (int i = 0; i < n; ++i) {
      int pick = static_cast<int>(rng.uniform() * n);
      if (pick >= n) pick = n - 1;
      SubjectRecord s = data[pick];
      // Fresh ids so duplicated subjects stay distinct and the Breslow step
      // sees the resampled tie structure.
      s.id = "b" + std::to_string(b + 1) + "_" + std::to_string(i + 1) + "_" + s.id;
      sample.push_back(std::move(s));
    }
    try {
      FitResult res = fit(sample, spec, fit_config);
      est[b] = flatten_phi(res.params, spec);
      ok[b] = 1;
    } catch (const std::exception&) {
      ok[b] = 0;
    }
  });

  int n_ok = 0;
  for (int b = 0; b < B; ++b) n_ok += ok[b];
  result.n_failed = B - n_ok;
  result.unstable = result.n_failed > 0.2 * B;
  if (n_ok < 2)
    throw Error(ErrorCode::InsufficientReplicates, "fewer than 2 successful replicate fits");

  Eigen::MatrixXd mat(n_ok, P);
  int row = 0;
  for (int b = 0; b < B; ++b)
    if (ok[b]) mat.row(row++) = est[b];

  Eigen::VectorXd se = bootstrap_se(mat);
  result.rows.resize(P);
  for (int c = 0; c < P; ++c) {
    BootstrapRow& r = result.rows[c];
    r.name = lay.names[c];
    r.estimate = point[c];
    r.se = se[c];
    if (lay.kinds[c] == ParamKind::variance) {
      r.log_scale_ci = true;
      Eigen::ArrayXd logs = mat.col(c).array().log();
      double lmean = logs.mean();
      double lse = std::sqrt((logs - lmean).square().sum() / (n_ok - 1));
      r.ci_lo = std::exp(std::log(point[c]) - 1.96 * lse);
      r.ci_hi = std::exp(std::log(point[c]) + 1.96 * lse);
    } else {
      r.ci_lo = r.estimate - 1.96 * r.se;
      r.ci_hi = r.estimate + 1.96 * r.se;
    }
    if (lay.wald[c]) {
      r.has_p = true;
      if (r.se > 0.0)
        r.p_value = 2.0 * (1.0 - normal_cdf(std::abs(r.estimate) / r.se));
      else
        r.p_value = r.estimate == 0.0 ? 1.0 : 0.0;
    }
  }
  return result;
}

void write_bootstrap_csv(const BootstrapResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out.precision(10);
  out << "parameter,estimate,se,ci_lo,ci_hi,p_value\n";
  for (const auto& r : result.rows) {
    out << r.name << "," << r.estimate << "," << r.se << "," << r.ci_lo << ","
        << r.ci_hi << ",";
    if (r.has_p) out << r.p_value;
    out << "\n";
  }
}

}  // namespace latentjm
