// latentjm: joint modeling of correlated longitudinal biomarkers and a
// right-censored event time. Subcommands: fit, simulate, replicate, predict,
// evaluate, bootstrap, scan.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "latentjm/bootstrap.hpp"
#include "latentjm/data_model.hpp"
#include "latentjm/em.hpp"
#include "latentjm/predictor.hpp"
#include "latentjm/simulator.hpp"
#include "latentjm/threading.hpp"

using namespace latentjm;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kValidation = 2, kFitFailure = 3 };

int log_level() {
  const char* env = std::getenv("LATENTJM_LOG");
  if (!env) return 0;
  std::string v(env);
  if (v == "debug" || v == "2") return 2;
  if (v == "info" || v == "1") return 1;
  return 0;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[latentjm] " << msg << "\n";
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CommonFlags {
  uint64_t seed = 12345;
  int threads = 0;
  int quad_nodes = 0;     // 0 = keep config value
  int max_iters = 0;
  double tol = 0.0;
  int knots = -1;
  int rank = 0;
  std::string time_transform;
};

void add_common(CLI::App* cmd, CommonFlags& fl, bool model_overrides = true) {
  cmd->add_option("--seed", fl.seed, "random seed");
  cmd->add_option("--threads", fl.threads, "worker threads (1 = serial)");
  cmd->add_option("--quad-nodes", fl.quad_nodes, "Gauss-Hermite nodes per dimension");
  cmd->add_option("--max-iters", fl.max_iters, "EM iteration cap");
  cmd->add_option("--tol", fl.tol, "relative log-likelihood tolerance");
  if (model_overrides) {
    cmd->add_option("--knots", fl.knots, "interior knot count (evenly spaced)");
    cmd->add_option("--rank", fl.rank, "number of principal components k");
  }
  cmd->add_option("--time-transform", fl.time_transform, "identity or log1p");
}

struct FitSetup {
  ModelSpec spec;
  FitConfig config;
};

FitSetup load_fit_setup(const std::string& config_path, const CommonFlags& fl) {
  FitSetup out;
  json j = json::parse(slurp(config_path));
  const json& jm = j.at("model");
  out.spec.J = jm.at("J").get<int>();
  out.spec.k = jm.at("k").get<int>();
  out.spec.r = jm.at("r").get<int>();
  out.spec.p = jm.at("p").get<std::vector<int>>();
  out.spec.basis = basis_spec_from_json(jm.at("basis").dump());
  if (j.contains("fit")) {
    const json& jf = j["fit"];
    out.config.max_iters = jf.value("max_iters", out.config.max_iters);
    out.config.loglik_rel_tol = jf.value("loglik_rel_tol", out.config.loglik_rel_tol);
    out.config.param_abs_tol = jf.value("param_abs_tol", out.config.param_abs_tol);
    out.config.quad_nodes = jf.value("quad_nodes", out.config.quad_nodes);
    out.config.newton_damping = jf.value("newton_damping", out.config.newton_damping);
    out.config.orthonormalize_each_iter =
        jf.value("orthonormalize_each_iter", out.config.orthonormalize_each_iter);
  }
  if (fl.quad_nodes > 0) out.config.quad_nodes = fl.quad_nodes;
  if (fl.max_iters > 0) out.config.max_iters = fl.max_iters;
  if (fl.tol > 0.0) out.config.loglik_rel_tol = fl.tol;
  if (fl.rank > 0) out.spec.k = fl.rank;
  if (fl.knots >= 0)
    out.spec.basis.interior_knots = evenly_spaced_knots(
        fl.knots, out.spec.basis.t_lo, out.spec.basis.t_hi, out.spec.basis.time_transform);
  if (!fl.time_transform.empty()) {
    if (fl.time_transform == "log1p")
      out.spec.basis.time_transform = TimeTransform::log1p;
    else if (fl.time_transform == "identity")
      out.spec.basis.time_transform = TimeTransform::identity;
    else
      throw Error(ErrorCode::InvalidSpec, "unknown time transform " + fl.time_transform);
  }
  out.spec.validate();
  out.config.validate();
  return out;
}

json fit_result_to_json(const FitResult& res, const ModelSpec& spec) {
  json j;
  j["params"] = json::parse(params_to_json(res.params, spec));
  j["loglik_trace"] = res.loglik_trace;
  j["loglik"] = res.loglik();
  j["converged"] = res.converged;
  j["reason"] = res.reason;
  j["n_iters"] = res.n_iters;
  j["aic"] = res.aic;
  j["dim_phi"] = ParameterSet::dim_phi(spec);
  std::vector<double> props(res.pc_variance_proportions.data(),
                            res.pc_variance_proportions.data() +
                                res.pc_variance_proportions.size());
  j["pc_variance_proportions"] = props;
  j["monotonicity_violation"] = res.monotonicity_violation;
  j["variance_floored"] = res.variance_floored;
  return j;
}

void load_fitted_params(const std::string& path, ParameterSet& params, ModelSpec& spec) {
  json j = json::parse(slurp(path));
  const json& jp = j.contains("params") ? j["params"] : j;
  params_from_json(jp.dump(), params, spec);
}

Scenario resolve_scenario(const std::string& name, const std::string& file) {
  if (!file.empty()) return scenario_from_json(slurp(file));
  if (name == "model1") return builtin_scenario(BuiltinScenario::model1);
  if (name == "model1_n500") return builtin_scenario(BuiltinScenario::model1_n500);
  if (name == "model2") return builtin_scenario(BuiltinScenario::model2);
  if (name == "model3") return builtin_scenario(BuiltinScenario::model3);
  throw Error(ErrorCode::InvalidSpec,
              "unknown scenario '" + name + "' (use model1, model1_n500, model2, model3)");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text;
}

int run_fit(const std::string& lng, const std::string& surv, const std::string& config,
            const std::string& out_path, const std::string& hazard_out,
            const CommonFlags& fl) {
  FitSetup setup;
  std::vector<SubjectRecord> data;
  try {
    setup = load_fit_setup(config, fl);
    data = load_dataset(lng, surv, setup.spec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  log_info("fitting " + std::to_string(data.size()) + " subjects");
  FitResult res;
  try {
    res = fit(data, setup.spec, setup.config);
  } catch (const std::exception& e) {
    std::cerr << "fit failed: " << e.what() << "\n";
    return kFitFailure;
  }
  write_text(out_path, fit_result_to_json(res, setup.spec).dump(2) + "\n");
  std::string hz = hazard_out.empty() ? out_path + ".hazard.csv" : hazard_out;
  write_hazard_csv(res.params.hazard, hz);
  std::cout << "loglik " << res.loglik() << "\n";
  std::cout << "aic " << res.aic << "\n";
  std::cout << "converged " << (res.converged ? "true" : "false") << " (" << res.reason
            << ", " << res.n_iters << " iterations)\n";
  std::cout << "pc_variance_proportions";
  for (int w = 0; w < res.pc_variance_proportions.size(); ++w)
    std::cout << " " << res.pc_variance_proportions[w];
  std::cout << "\n";
  return kOk;
}

int run_scan(const std::string& lng, const std::string& surv, const std::string& config,
             const std::string& out_path, std::vector<int> knots, std::vector<int> ranks,
             const CommonFlags& fl) {
  FitSetup base;
  try {
    base = load_fit_setup(config, fl);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  if (knots.empty()) knots = {static_cast<int>(base.spec.basis.interior_knots.size())};
  if (ranks.empty()) ranks = {base.spec.k};

  struct Row {
    int knots, rank;
    bool ok = false;
    double loglik = 0, aic = 0;
    int n_params = 0;
    std::string pc, error;
  };
  std::vector<Row> rows;
  for (int kn : knots) {
    for (int rk : ranks) {
      Row row;
      row.knots = kn;
      row.rank = rk;
      ModelSpec spec = base.spec;
      spec.basis.interior_knots = evenly_spaced_knots(
          kn, spec.basis.t_lo, spec.basis.t_hi, spec.basis.time_transform);
      spec.k = rk;
      try {
        spec.validate();
        auto data = load_dataset(lng, surv, spec);
        FitResult res = fit(data, spec, base.config);
        row.ok = true;
        row.loglik = res.loglik();
        row.aic = res.aic;
        row.n_params = ParameterSet::dim_phi(spec);
        std::ostringstream pc;
        for (int w = 0; w < res.pc_variance_proportions.size(); ++w)
          pc << (w ? ";" : "") << res.pc_variance_proportions[w];
        row.pc = pc.str();
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      log_info("scan knots=" + std::to_string(kn) + " rank=" + std::to_string(rk) +
               (row.ok ? " done" : " failed"));
      rows.push_back(row);
    }
  }
  int best = -1;
  for (size_t i = 0; i < rows.size(); ++i)
    if (rows[i].ok && (best < 0 || rows[i].aic < rows[best].aic))
      best = static_cast<int>(i);

  std::ostringstream csv;
  csv.precision(10);
  csv << "knots,rank,status,loglik,n_params,aic,pc_proportions,aic_best\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    csv << r.knots << "," << r.rank << "," << (r.ok ? "ok" : "failed") << ",";
    if (r.ok)
      csv << r.loglik << "," << r.n_params << "," << r.aic << "," << r.pc;
    else
      csv << ",,,";
    csv << "," << (static_cast<int>(i) == best ? 1 : 0) << "\n";
  }
  if (!out_path.empty()) write_text(out_path, csv.str());
  std::cout << csv.str();
  if (best >= 0)
    std::cout << "best_aic knots=" << rows[best].knots << " rank=" << rows[best].rank
              << " aic=" << rows[best].aic << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint model for correlated longitudinal biomarkers and an event time"};
  app.require_subcommand(1);

  // fit
  auto* cmd_fit = app.add_subcommand("fit", "fit the joint model to CSV data");
  std::string fit_lng, fit_surv, fit_config, fit_out, fit_hazard_out;
  CommonFlags fit_fl;
  cmd_fit->add_option("--longitudinal", fit_lng)->required();
  cmd_fit->add_option("--survival", fit_surv)->required();
  cmd_fit->add_option("--config", fit_config)->required();
  cmd_fit->add_option("--out", fit_out)->required();
  cmd_fit->add_option("--hazard-out", fit_hazard_out,
                      "cumulative-hazard CSV (default <out>.hazard.csv)");
  add_common(cmd_fit, fit_fl);

  // simulate
  auto* cmd_sim = app.add_subcommand("simulate", "generate a dataset from a scenario");
  std::string sim_name = "model1", sim_file, sim_long, sim_surv, sim_truth;
  CommonFlags sim_fl;
  int sim_n = 0;
  cmd_sim->add_option("--scenario", sim_name, "model1, model1_n500, model2, model3");
  cmd_sim->add_option("--scenario-file", sim_file, "scenario JSON (overrides --scenario)");
  cmd_sim->add_option("--n", sim_n, "override subject count");
  cmd_sim->add_option("--out-long", sim_long)->required();
  cmd_sim->add_option("--out-surv", sim_surv)->required();
  cmd_sim->add_option("--out-truth", sim_truth, "scenario JSON with the generating truth");
  add_common(cmd_sim, sim_fl);

  // replicate
  auto* cmd_rep = app.add_subcommand("replicate", "simulate-and-fit bias table");
  std::string rep_name = "model1", rep_file, rep_out;
  CommonFlags rep_fl;
  int rep_reps = 10, rep_n = 0;
  cmd_rep->add_option("--scenario", rep_name);
  cmd_rep->add_option("--scenario-file", rep_file);
  cmd_rep->add_option("--reps", rep_reps)->required();
  cmd_rep->add_option("--n", rep_n, "override subject count");
  cmd_rep->add_option("--out", rep_out)->required();
  add_common(cmd_rep, rep_fl);

  // predict
  auto* cmd_pred = app.add_subcommand("predict", "conditional event probabilities");
  std::string pr_params, pr_lng, pr_surv, pr_queries, pr_out;
  CommonFlags pr_fl;
  cmd_pred->add_option("--params", pr_params)->required();
  cmd_pred->add_option("--longitudinal", pr_lng)->required();
  cmd_pred->add_option("--survival", pr_surv)->required();
  cmd_pred->add_option("--queries", pr_queries, "CSV with id,s,t")->required();
  cmd_pred->add_option("--out", pr_out)->required();
  add_common(cmd_pred, pr_fl);

  // evaluate
  auto* cmd_eval = app.add_subcommand("evaluate", "censoring-weighted prediction error");
  std::string ev_params, ev_lng, ev_surv, ev_out;
  double ev_s = 0.0, ev_t = 0.0;
  CommonFlags ev_fl;
  cmd_eval->add_option("--params", ev_params)->required();
  cmd_eval->add_option("--longitudinal", ev_lng)->required();
  cmd_eval->add_option("--survival", ev_surv)->required();
  cmd_eval->add_option("--s", ev_s, "landmark time")->required();
  cmd_eval->add_option("--t", ev_t, "horizon increment")->required();
  cmd_eval->add_option("--out", ev_out)->required();
  add_common(cmd_eval, ev_fl);

  // bootstrap
  auto* cmd_boot = app.add_subcommand("bootstrap", "nonparametric bootstrap inference");
  std::string bo_lng, bo_surv, bo_config, bo_out;
  int bo_B = 100;
  CommonFlags bo_fl;
  cmd_boot->add_option("--longitudinal", bo_lng)->required();
  cmd_boot->add_option("--survival", bo_surv)->required();
  cmd_boot->add_option("--config", bo_config)->required();
  cmd_boot->add_option("-B,--replicates", bo_B)->required();
  cmd_boot->add_option("--out", bo_out)->required();
  add_common(cmd_boot, bo_fl);

  // scan
  auto* cmd_scan = app.add_subcommand("scan", "AIC table over knot counts and ranks");
  std::string sc_lng, sc_surv, sc_config, sc_out;
  std::vector<int> sc_knots, sc_ranks;
  CommonFlags sc_fl;
  cmd_scan->add_option("--longitudinal", sc_lng)->required();
  cmd_scan->add_option("--survival", sc_surv)->required();
  cmd_scan->add_option("--config", sc_config)->required();
  cmd_scan->add_option("--knots", sc_knots, "knot counts to scan")->delimiter(',');
  cmd_scan->add_option("--ranks", sc_ranks, "ranks to scan")->delimiter(',');
  cmd_scan->add_option("--out", sc_out);
  add_common(cmd_scan, sc_fl, /*model_overrides=*/false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_fit->parsed()) {
      set_max_threads(fit_fl.threads);
      return run_fit(fit_lng, fit_surv, fit_config, fit_out, fit_hazard_out, fit_fl);
    }

    if (cmd_sim->parsed()) {
      set_max_threads(sim_fl.threads);
      Scenario sc;
      try {
        sc = resolve_scenario(sim_name, sim_file);
        if (sim_n > 0) sc.n = sim_n;
        sc.validate();
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
      }
      SimOutput sim = simulate(sc, sim_fl.seed);
      if (sim.no_events) std::cerr << "warning: no events were generated\n";
      write_dataset(sim.subjects, sc.model_spec(), sim_long, sim_surv);
      if (!sim_truth.empty()) write_text(sim_truth, scenario_to_json(sc) + "\n");
      int nev = 0;
      for (const auto& s : sim.subjects) nev += s.event_indicator;
      std::cout << "subjects " << sc.n << "\nevents " << nev << "\n";
      return kOk;
    }

    if (cmd_rep->parsed()) {
      set_max_threads(rep_fl.threads);
      Scenario sc;
      FitConfig cfg;
      try {
        sc = resolve_scenario(rep_name, rep_file);
        if (rep_n > 0) sc.n = rep_n;
        if (rep_fl.quad_nodes > 0) cfg.quad_nodes = rep_fl.quad_nodes;
        if (rep_fl.max_iters > 0) cfg.max_iters = rep_fl.max_iters;
        if (rep_fl.tol > 0.0) cfg.loglik_rel_tol = rep_fl.tol;
        cfg.validate();
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
      }
      ReplicateReport rep = replicate_study(sc, rep_reps, rep_fl.seed, cfg);
      write_replicate_csv(rep, rep_out);
      std::cout << "replicates " << rep.n_requested << "\nfailed " << rep.n_failed << "\n";
      for (size_t c = 0; c < rep.param_names.size(); ++c)
        std::cout << rep.param_names[c] << " bias " << rep.bias[c] << " sd " << rep.sd[c]
                  << "\n";
      return kOk;
    }

    if (cmd_pred->parsed()) {
      set_max_threads(pr_fl.threads);
      ParameterSet params;
      ModelSpec spec;
      std::vector<SubjectRecord> data;
      std::vector<std::tuple<std::string, double, double>> queries;
      try {
        load_fitted_params(pr_params, params, spec);
        data = load_dataset(pr_lng, pr_surv, spec);
        std::ifstream in(pr_queries);
        if (!in) throw Error(ErrorCode::IoError, "cannot open " + pr_queries);
        std::string line;
        bool header = true;
        int row = 0;
        while (std::getline(in, line)) {
          ++row;
          if (header) {
            header = false;
            continue;
          }
          if (line.empty()) continue;
          std::stringstream ss(line);
          std::string id, s_str, t_str;
          if (!std::getline(ss, id, ',') || !std::getline(ss, s_str, ',') ||
              !std::getline(ss, t_str, ','))
            throw Error(ErrorCode::ParseError, "bad query row " + std::to_string(row));
          queries.emplace_back(id, std::stod(s_str), std::stod(t_str));
        }
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
      }
      OrthoBasis basis = build_basis(spec.basis);
      GaussHermiteRule rule =
          gauss_hermite(pr_fl.quad_nodes > 0 ? pr_fl.quad_nodes : 20);
      std::ofstream out(pr_out);
      if (!out) {
        std::cerr << "error: cannot write " << pr_out << "\n";
        return kValidation;
      }
      out.precision(10);
      out << "id,s,t,probability\n";
      for (const auto& [id, s, t] : queries) {
        const SubjectRecord* subj = nullptr;
        for (const auto& rec : data)
          if (rec.id == id) subj = &rec;
        if (!subj) {
          std::cerr << "error: query id '" << id << "' not in the dataset\n";
          return kValidation;
        }
        PredictionQuery q{*subj, s, t};
        auto res = conditional_event_probability(q, params, basis, rule);
        if (res.extrapolated)
          std::cerr << "warning: query for '" << id
                    << "' extends beyond the fitted hazard support\n";
        out << id << "," << s << "," << t << "," << res.probability << "\n";
      }
      return kOk;
    }

    if (cmd_eval->parsed()) {
      set_max_threads(ev_fl.threads);
      ParameterSet params;
      ModelSpec spec;
      std::vector<SubjectRecord> data;
      try {
        load_fitted_params(ev_params, params, spec);
        data = load_dataset(ev_lng, ev_surv, spec);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
      }
      OrthoBasis basis = build_basis(spec.basis);
      GaussHermiteRule rule =
          gauss_hermite(ev_fl.quad_nodes > 0 ? ev_fl.quad_nodes : 20);
      auto res = prediction_error(data, params, basis, rule, ev_s, ev_t);
      std::ofstream out(ev_out);
      if (!out) {
        std::cerr << "error: cannot write " << ev_out << "\n";
        return kValidation;
      }
      out.precision(10);
      out << "s,t,n_risk,err\n"
          << ev_s << "," << ev_t << "," << res.n_risk << "," << res.err << "\n";
      std::cout << "n_risk " << res.n_risk << "\nerr " << res.err << "\n";
      return kOk;
    }

    if (cmd_boot->parsed()) {
      set_max_threads(bo_fl.threads);
      FitSetup setup;
      std::vector<SubjectRecord> data;
      try {
        setup = load_fit_setup(bo_config, bo_fl);
        data = load_dataset(bo_lng, bo_surv, setup.spec);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
      }
      BootstrapResult res;
      try {
        res = bootstrap_inference(data, setup.spec, setup.config, bo_B, bo_fl.seed);
      } catch (const std::exception& e) {
        std::cerr << "bootstrap failed: " << e.what() << "\n";
        return kFitFailure;
      }
      write_bootstrap_csv(res, bo_out);
      std::cout << "replicates " << res.B << "\nfailed " << res.n_failed << "\n";
      if (res.unstable)
        std::cerr << "warning: more than 20% of replicate fits failed\n";
      return kOk;
    }

    if (cmd_scan->parsed()) {
      set_max_threads(sc_fl.threads);
      return run_scan(sc_lng, sc_surv, sc_config, sc_out, sc_knots, sc_ranks, sc_fl);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFitFailure;
  }
  return kUsage;
}
