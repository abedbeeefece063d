#include "latentjm/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace latentjm {

using nlohmann::json;

void ModelSpec::validate() const {
  if (J < 1) throw Error(ErrorCode::InvalidSpec, "J must be >= 1");
  if (k < 1 || k > basis.q())
    throw Error(ErrorCode::InvalidSpec, "k must satisfy 1 <= k <= q");
  if (static_cast<int>(p.size()) != J)
    throw Error(ErrorCode::InvalidSpec, "p must have one entry per biomarker");
  for (int pj : p)
    if (pj < 0) throw Error(ErrorCode::InvalidSpec, "p[j] must be >= 0");
  if (r < 0) throw Error(ErrorCode::InvalidSpec, "r must be >= 0");
}

Eigen::VectorXd StepCovariate::at(double t) const {
  if (change_times.empty()) return Eigen::VectorXd();
  auto it = std::upper_bound(change_times.begin(), change_times.end(), t);
  int idx = static_cast<int>(it - change_times.begin()) - 1;
  if (idx < 0) idx = 0;
  return values.row(idx);
}

double StepHazard::cumulative(double t) const {
  double s = 0.0;
  for (size_t u = 0; u < jump_times.size() && jump_times[u] <= t; ++u) s += increments[u];
  return s;
}

int StepHazard::n_jumps_upto(double t) const {
  auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  return static_cast<int>(it - jump_times.begin());
}

int StepHazard::find_jump(double t) const {
  auto it = std::lower_bound(jump_times.begin(), jump_times.end(), t);
  if (it != jump_times.end() && *it == t) return static_cast<int>(it - jump_times.begin());
  return -1;
}

void ParameterSet::validate(const ModelSpec& spec) const {
  spec.validate();
  const int J = spec.J, q_ = spec.basis.q(), k_ = spec.k;
  if (static_cast<int>(beta0.size()) != J)
    throw Error(ErrorCode::InvalidSpec, "beta0 must have J entries");
  for (int j = 0; j < J; ++j)
    if (beta0[j].size() != spec.p[j])
      throw Error(ErrorCode::InvalidSpec, "beta0[j] dimension mismatch");
  if (beta1.size() != J || beta1[0] != 1.0)
    throw Error(ErrorCode::InvalidSpec, "beta1 must have J entries with beta1[1] = 1");
  if (sigma2.size() != J || (sigma2.array() <= 0.0).any())
    throw Error(ErrorCode::InvalidVariance, "sigma2 must be positive");
  if (theta.size() != q_) throw Error(ErrorCode::InvalidSpec, "theta dimension mismatch");
  if (Theta.rows() != q_ || Theta.cols() != k_)
    throw Error(ErrorCode::InvalidSpec, "Theta dimension mismatch");
  if (D.size() != k_ || (D.array() <= 0.0).any())
    throw Error(ErrorCode::InvalidVariance, "D must be positive");
  if (eta.size() != spec.r) throw Error(ErrorCode::InvalidSpec, "eta dimension mismatch");
  if (hazard.increments.size() != hazard.jump_times.size())
    throw Error(ErrorCode::InvalidSpec, "hazard jump/increment size mismatch");
  for (size_t u = 0; u < hazard.jump_times.size(); ++u) {
    if (hazard.increments[u] < 0.0)
      throw Error(ErrorCode::InvalidSpec, "hazard increments must be >= 0");
    if (u > 0 && !(hazard.jump_times[u] > hazard.jump_times[u - 1]))
      throw Error(ErrorCode::InvalidSpec, "hazard jump times must be strictly increasing");
  }
}

int ParameterSet::dim_phi(const ModelSpec& spec) {
  int d = 0;
  for (int pj : spec.p) d += pj;
  d += spec.J - 1;                  // beta1, first loading pinned
  d += spec.J;                      // sigma2
  d += spec.basis.q();              // theta
  d += spec.basis.q() * spec.k;     // Theta
  d += spec.k;                      // D
  d += spec.r;                      // eta
  d += 1;                           // gamma
  return d;
}

double latent_trajectory(const ParameterSet& params, const OrthoBasis& basis,
                         const Eigen::VectorXd& alpha, double t) {
  Eigen::VectorXd b = basis.eval(t);
  return b.dot(params.theta) + b.dot(params.Theta * alpha);
}

// --- CSV helpers -----------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_number(const std::string& s, int row, const char* what) {
  const char* c = s.c_str();
  char* end = nullptr;
  double v = std::strtod(c, &end);
  if (end == c || *end != '\0' || !std::isfinite(v)) {
    throw Error(ErrorCode::ParseError,
                std::string("non-numeric ") + what + " at row " + std::to_string(row) +
                    ": '" + s + "'");
  }
  return v;
}

struct LongRow {
  double time;
  int j;           // 0-based
  double value;
  Eigen::VectorXd x;
};

}  // namespace

std::vector<SubjectRecord> load_dataset(const std::string& longitudinal_file,
                                        const std::string& survival_file,
                                        const ModelSpec& spec) {
  spec.validate();
  const int J = spec.J;

  std::ifstream surv(survival_file);
  if (!surv) throw Error(ErrorCode::IoError, "cannot open survival file " + survival_file);
  std::vector<SubjectRecord> subjects;
  std::map<std::string, int> index_of;
  {
    std::string line;
    int row = 0;
    bool header = true;
    while (std::getline(surv, line)) {
      ++row;
      if (trim(line).empty()) continue;
      auto f = split_csv(line);
      if (header) {
        header = false;
        continue;
      }
      if (static_cast<int>(f.size()) < 3 + spec.r)
        throw Error(ErrorCode::ParseError,
                    "survival row " + std::to_string(row) + " has too few columns");
      SubjectRecord s;
      s.id = f[0];
      s.event_time = parse_number(f[1], row, "event_time");
      double ind = parse_number(f[2], row, "event_indicator");
      if (ind != 0.0 && ind != 1.0)
        throw Error(ErrorCode::ParseError,
                    "event_indicator must be 0 or 1 at row " + std::to_string(row));
      s.event_indicator = static_cast<int>(ind);
      if (!(s.event_time > 0.0) || s.event_time > spec.basis.t_hi)
        throw Error(ErrorCode::ParseError, "event_time outside (0, t_hi] at row " +
                                                std::to_string(row));
      s.z.resize(spec.r);
      for (int c = 0; c < spec.r; ++c) s.z[c] = parse_number(f[3 + c], row, "z");
      if (index_of.count(s.id))
        throw Error(ErrorCode::DuplicateCell, "duplicate id in survival file: " + s.id);
      index_of[s.id] = static_cast<int>(subjects.size());
      subjects.push_back(std::move(s));
    }
  }

  std::ifstream lng(longitudinal_file);
  if (!lng) throw Error(ErrorCode::IoError, "cannot open longitudinal file " + longitudinal_file);
  std::vector<std::vector<LongRow>> rows_by_subject(subjects.size());
  std::set<std::tuple<int, double, int>> seen;
  {
    std::string line;
    int row = 0;
    bool header = true;
    while (std::getline(lng, line)) {
      ++row;
      if (trim(line).empty()) continue;
      auto f = split_csv(line);
      if (header) {
        header = false;
        continue;
      }
      if (f.size() < 4)
        throw Error(ErrorCode::ParseError,
                    "longitudinal row " + std::to_string(row) + " has too few columns");
      auto it = index_of.find(f[0]);
      if (it == index_of.end())
        throw Error(ErrorCode::OrphanLongitudinal,
                    "longitudinal id '" + f[0] + "' missing from survival file (row " +
                        std::to_string(row) + ")");
      int si = it->second;
      LongRow lr;
      lr.time = parse_number(f[1], row, "time");
      double jd = parse_number(f[2], row, "biomarker_index");
      int j1 = static_cast<int>(jd);
      if (jd != j1 || j1 < 1 || j1 > J)
        throw Error(ErrorCode::ParseError,
                    "biomarker_index out of 1..J at row " + std::to_string(row));
      lr.j = j1 - 1;
      lr.value = parse_number(f[3], row, "value");
      if (lr.time > subjects[si].event_time)
        throw Error(ErrorCode::FollowupAfterEvent,
                    "visit after event time for id '" + f[0] + "' (row " +
                        std::to_string(row) + ")");
      if (lr.time < 0.0)
        throw Error(ErrorCode::ParseError, "negative time at row " + std::to_string(row));
      int pj = spec.p[lr.j];
      if (static_cast<int>(f.size()) < 4 + pj)
        throw Error(ErrorCode::ParseError,
                    "missing covariate columns at row " + std::to_string(row));
      lr.x.resize(pj);
      for (int c = 0; c < pj; ++c) lr.x[c] = parse_number(f[4 + c], row, "x");
      if (!seen.insert({si, lr.time, lr.j}).second)
        throw Error(ErrorCode::DuplicateCell,
                    "duplicate (id, time, biomarker) cell at row " + std::to_string(row));
      rows_by_subject[si].push_back(std::move(lr));
    }
  }

  for (size_t si = 0; si < subjects.size(); ++si) {
    auto& s = subjects[si];
    auto& rows = rows_by_subject[si];
    std::vector<double> times;
    for (const auto& lr : rows) times.push_back(lr.time);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    int n = static_cast<int>(times.size());
    s.visit_times = times;
    s.y = Eigen::MatrixXd::Zero(n, J);
    s.observed.setConstant(n, J, false);
    s.x.resize(J);
    for (int j = 0; j < J; ++j) s.x[j] = Eigen::MatrixXd::Zero(n, spec.p[j]);
    for (const auto& lr : rows) {
      int u = static_cast<int>(
          std::lower_bound(times.begin(), times.end(), lr.time) - times.begin());
      s.y(u, lr.j) = lr.value;
      s.observed(u, lr.j) = true;
      if (spec.p[lr.j] > 0) s.x[lr.j].row(u) = lr.x;
    }
  }
  return subjects;
}

void write_dataset(const std::vector<SubjectRecord>& data, const ModelSpec& spec,
                   const std::string& longitudinal_file, const std::string& survival_file) {
  int pmax = 0;
  for (int pj : spec.p) pmax = std::max(pmax, pj);

  std::ofstream lng(longitudinal_file);
  if (!lng) throw Error(ErrorCode::IoError, "cannot write " + longitudinal_file);
  lng.precision(17);
  lng << "id,time,biomarker_index,value";
  for (int c = 1; c <= pmax; ++c) lng << ",x_" << c;
  lng << "\n";
  for (const auto& s : data) {
    for (int u = 0; u < s.n_visits(); ++u) {
      for (int j = 0; j < spec.J; ++j) {
        if (!s.observed(u, j)) continue;
        lng << s.id << "," << s.visit_times[u] << "," << (j + 1) << "," << s.y(u, j);
        for (int c = 0; c < pmax; ++c)
          lng << "," << (c < spec.p[j] ? s.x[j](u, c) : 0.0);
        lng << "\n";
      }
    }
  }

  std::ofstream surv(survival_file);
  if (!surv) throw Error(ErrorCode::IoError, "cannot write " + survival_file);
  surv.precision(17);
  surv << "id,event_time,event_indicator";
  for (int c = 1; c <= spec.r; ++c) surv << ",z_" << c;
  surv << "\n";
  for (const auto& s : data) {
    surv << s.id << "," << s.event_time << "," << s.event_indicator;
    for (int c = 0; c < spec.r; ++c) surv << "," << s.z[c];
    surv << "\n";
  }
}

// --- JSON ------------------------------------------------------------------

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i)));
  return rows;
}

Eigen::MatrixXd mat_from_json(const json& rows) {
  int nr = static_cast<int>(rows.size());
  int nc = nr > 0 ? static_cast<int>(rows[0].size()) : 0;
  Eigen::MatrixXd m(nr, nc);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j) m(i, j) = rows[i][j].get<double>();
  return m;
}

json basis_to_json_obj(const BasisSpec& b) {
  return json{{"degree", b.degree},
              {"interior_knots", b.interior_knots},
              {"t_lo", b.t_lo},
              {"t_hi", b.t_hi},
              {"time_transform",
               b.time_transform == TimeTransform::log1p ? "log1p" : "identity"}};
}

BasisSpec basis_from_json_obj(const json& jb) {
  BasisSpec b;
  b.degree = jb.at("degree").get<int>();
  b.interior_knots = jb.at("interior_knots").get<std::vector<double>>();
  b.t_lo = jb.at("t_lo").get<double>();
  b.t_hi = jb.at("t_hi").get<double>();
  std::string tf = jb.value("time_transform", "identity");
  if (tf == "log1p")
    b.time_transform = TimeTransform::log1p;
  else if (tf == "identity")
    b.time_transform = TimeTransform::identity;
  else
    throw Error(ErrorCode::ParseError, "unknown time_transform '" + tf + "'");
  return b;
}

}  // namespace

std::string basis_spec_to_json(const BasisSpec& spec) { return basis_to_json_obj(spec).dump(2); }

BasisSpec basis_spec_from_json(const std::string& text) {
  return basis_from_json_obj(json::parse(text));
}

std::string params_to_json(const ParameterSet& params, const ModelSpec& spec) {
  json j;
  j["model"] = {{"J", spec.J}, {"k", spec.k}, {"r", spec.r}, {"p", spec.p},
                {"basis", basis_to_json_obj(spec.basis)}};
  json b0 = json::array();
  for (const auto& b : params.beta0) b0.push_back(vec_to_json(b));
  j["beta0"] = b0;
  j["beta1"] = vec_to_json(params.beta1);
  j["sigma2"] = vec_to_json(params.sigma2);
  j["theta"] = vec_to_json(params.theta);
  j["Theta"] = mat_to_json(params.Theta);
  j["D"] = vec_to_json(params.D);
  j["eta"] = vec_to_json(params.eta);
  j["gamma"] = params.gamma;
  j["hazard"] = {{"jump_times", params.hazard.jump_times},
                 {"increments", params.hazard.increments}};
  return j.dump(2);
}

void params_from_json(const std::string& text, ParameterSet& params, ModelSpec& spec) {
  json j = json::parse(text);
  const json& jm = j.at("model");
  spec.J = jm.at("J").get<int>();
  spec.k = jm.at("k").get<int>();
  spec.r = jm.at("r").get<int>();
  spec.p = jm.at("p").get<std::vector<int>>();
  spec.basis = basis_from_json_obj(jm.at("basis"));
  params.beta0.clear();
  for (const auto& b : j.at("beta0")) params.beta0.push_back(vec_from_json(b));
  params.beta1 = vec_from_json(j.at("beta1"));
  params.sigma2 = vec_from_json(j.at("sigma2"));
  params.theta = vec_from_json(j.at("theta"));
  params.Theta = mat_from_json(j.at("Theta"));
  params.D = vec_from_json(j.at("D"));
  params.eta = vec_from_json(j.at("eta"));
  params.gamma = j.at("gamma").get<double>();
  params.hazard.jump_times = j.at("hazard").at("jump_times").get<std::vector<double>>();
  params.hazard.increments = j.at("hazard").at("increments").get<std::vector<double>>();
  params.validate(spec);
}

void write_hazard_csv(const StepHazard& hazard, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out.precision(17);
  out << "time,cumulative_hazard\n0,0\n";
  double cum = 0.0;
  for (size_t u = 0; u < hazard.jump_times.size(); ++u) {
    cum += hazard.increments[u];
    out << hazard.jump_times[u] << "," << cum << "\n";
  }
}

}  // namespace latentjm
