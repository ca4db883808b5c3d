#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adversary.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "student.hpp"
#include "synthdata.hpp"
#include "teacher.hpp"

namespace relulab {

inline constexpr int kCsvSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Closed-form bound values.

struct ClassificationBounds {
  double upper_standard;
  double upper_robust;
  double lower_robust;
  bool vacuous_standard;
  bool vacuous_robust;
};

inline ClassificationBounds classification_bounds(double j_norm, double jbar_norm, double zeta, double bayes_risk,
                                                  double c0, double delta, std::size_t d, std::size_t n) {
  const double dd = static_cast<double>(d), nn = static_cast<double>(n);
  ClassificationBounds b;
  b.upper_standard = 2.0 * j_norm * std::pow((2.0 + 2.0 * c0) * delta, dd) * nn;
  b.upper_robust = 3.0 * j_norm * std::pow((4.0 + 2.0 * c0) * delta, dd) * nn;
  b.lower_robust = 2.0 * zeta * jbar_norm * bayes_risk * std::pow(4.0 * delta, dd) * nn;
  b.vacuous_standard = b.upper_standard >= 1.0;
  b.vacuous_robust = b.upper_robust >= 1.0;
  return b;
}

// Constant of the robustness term of f_rho in the regression lower bound.
inline double regression_lower_constant(double norm_bound, double output_bound) {
  return (2.0 * norm_bound + 2.0 * output_bound) * norm_bound;
}

inline double regression_lower_bound(double jbar_norm, double j_norm, double sigma2, double norm_bound,
                                     double output_bound, double delta, std::size_t d, std::size_t n) {
  const double dd = static_cast<double>(d);
  return jbar_norm * sigma2 * std::pow(4.0 * delta, dd) * static_cast<double>(n) -
         regression_lower_constant(norm_bound, output_bound) * j_norm * std::sqrt(dd) * delta;
}

inline double regression_upper_shape(double c0, double delta, std::size_t d, std::size_t n) {
  return std::sqrt(static_cast<double>(d)) *
         std::max(delta, std::pow((4.0 + 2.0 * c0) * delta, static_cast<double>(d)) * static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Tables.

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void write_csv(std::ostream& out) const {
    out << "schema_version";
    for (const auto& c : columns) out << "," << c;
    out << "\n";
    for (const auto& r : rows) {
      out << kCsvSchemaVersion;
      for (const auto& v : r) out << "," << v;
      out << "\n";
    }
  }

  std::string csv() const {
    std::ostringstream s;
    write_csv(s);
    return s.str();
  }
};

inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Configuration.

enum class ExperimentKind { classification, regression_rate, regression_robust, gap };

inline ExperimentKind experiment_from_string(const std::string& s) {
  if (s == "classification") return ExperimentKind::classification;
  if (s == "regression_rate") return ExperimentKind::regression_rate;
  if (s == "regression_robust") return ExperimentKind::regression_robust;
  if (s == "gap") return ExperimentKind::gap;
  throw InputError("unknown experiment '" + s + "'");
}

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::classification: return "classification";
    case ExperimentKind::regression_rate: return "regression_rate";
    case ExperimentKind::regression_robust: return "regression_robust";
    case ExperimentKind::gap: return "gap";
  }
  return "?";
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::classification;
  nlohmann::json spec;
  std::vector<std::size_t> n_values{100};
  std::vector<std::uint64_t> seeds{1};
  double delta_cap = 1.0;
  double c0 = 0.1;
  double tau_fraction = 0.5;  // tau = tau_fraction * C0 * delta
  LossKind loss = LossKind::hinge;
  double beta = 0.1;
  std::size_t mc_samples = 1000000;
  std::size_t probes_per_ball = 200;
  double eval_delta_scale = 1.0;  // gap experiment: attack radius / build radius
  double slope_threshold = -0.5;
  double ratio_tolerance = 0.3;
  AttackConfig attack;
  unsigned threads = 0;
  std::string output;

  void validate() const {
    if (n_values.empty() || seeds.empty()) throw InputError("config: n and seeds must be nonempty");
    for (auto n : n_values)
      if (n < 2) throw InputError("config: every n must be >= 2");
    if (!(c0 > 0.0 && c0 <= 1.0)) throw InputError("config: c0 must lie in (0, 1]");
    if (!(tau_fraction > 0.0 && tau_fraction <= 1.0)) throw InputError("config: tau_fraction must lie in (0, 1]");
    if (!(delta_cap > 0.0)) throw InputError("config: delta_cap must be positive");
    if (mc_samples < 1000) throw InputError("config: mc_samples must be >= 1000");
    if (!(eval_delta_scale >= 0.0)) throw InputError("config: eval_delta_scale must be nonnegative");
  }
};

// spec_file paths are resolved against base_dir.
inline ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig c;
  c.kind = experiment_from_string(j.at("experiment").get<std::string>());
  if (j.contains("spec")) {
    c.spec = j.at("spec");
  } else if (j.contains("spec_file")) {
    auto path = base_dir / j.at("spec_file").get<std::string>();
    std::ifstream in(path);
    if (!in) throw InputError("config: spec file not found: " + path.string());
    try {
      c.spec = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("spec file: ") + e.what(), e.byte);
    }
  } else {
    throw InputError("config: needs 'spec' or 'spec_file'");
  }
  c.n_values = j.value("n", c.n_values);
  c.seeds = j.value("seeds", c.seeds);
  c.delta_cap = j.value("delta_cap", c.delta_cap);
  c.c0 = j.value("c0", c.c0);
  c.tau_fraction = j.value("tau_fraction", c.tau_fraction);
  c.loss = loss_from_string(j.value("loss", std::string(to_string(c.loss))));
  c.beta = j.value("beta", c.beta);
  c.mc_samples = j.value("mc_samples", c.mc_samples);
  c.probes_per_ball = j.value("probes_per_ball", c.probes_per_ball);
  c.eval_delta_scale = j.value("eval_delta_scale", c.eval_delta_scale);
  c.slope_threshold = j.value("slope_threshold", c.slope_threshold);
  c.ratio_tolerance = j.value("ratio_tolerance", c.ratio_tolerance);
  c.threads = j.value("threads", c.threads);
  c.output = j.value("output", c.output);
  if (j.contains("attack")) {
    const auto& a = j["attack"];
    c.attack.grid_per_dim = a.value("grid_per_dim", c.attack.grid_per_dim);
    c.attack.random_restarts = a.value("random_restarts", c.attack.random_restarts);
    c.attack.coord_ascent_iters = a.value("coord_ascent_iters", c.attack.coord_ascent_iters);
    c.attack.seed = a.value("seed", c.attack.seed);
    if (a.value("mode", std::string("exhaustive")) == "heuristic") c.attack.mode = AttackMode::heuristic;
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), e.byte);
  }
  return config_from_json(j, path.parent_path());
}

namespace detail {

inline std::uint64_t mc_seed(std::uint64_t seed, std::size_t n) { return mix64(seed * 0x9e3779b97f4a7c15ULL + n); }

inline std::unique_ptr<RangeOracle> oracle_for(const ReluNetwork& net, const AttackConfig& cfg) {
  return make_network_oracle(net, cfg);
}

inline FunctionRangeOracle target_oracle(const SmoothTarget& t) {
  return FunctionRangeOracle(t.dim, [&t](std::span<const double> x) { return t(x); }, t.dim == 1 ? 33 : 9);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Classification.

struct ClassificationRow {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double delta = 0, tau = 0, q_x = 0;
  bool audit_delta = false, audit_tau = false, audit_zeta = false;
  bool certified = false;
  double cert_max_deviation = 0;
  double emp_adv_risk = 0;
  bool training_ok = false;
  McEstimate risk_standard, risk_robust, gap;
  bool dominated = false;
  double bayes_risk = 0;
  double excess_standard = 0, excess_robust = 0;
  std::optional<ClassificationBounds> bounds;
  bool pass_standard = false, pass_robust_upper = false, pass_robust_lower = false;
  std::size_t nonzero_params = 0, teacher_nonzero_params = 0;

  bool audits() const { return audit_delta && audit_tau && audit_zeta; }
  bool pass() const {
    return audits() && certified && training_ok && dominated && pass_standard && pass_robust_upper && pass_robust_lower;
  }
};

struct ClassificationReport {
  ExperimentKind kind = ExperimentKind::classification;
  std::vector<ClassificationRow> rows;
  nlohmann::json teacher;

  bool all_pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass(); });
  }

  Table table() const {
    Table t;
    t.columns = {"n",          "seed",           "delta",          "tau",           "q_x",
                 "audit_delta", "audit_tau",     "audit_zeta",     "certified",     "cert_max_deviation",
                 "emp_adv_risk", "training_ok",  "risk_standard",  "risk_standard_se", "risk_robust",
                 "risk_robust_se", "gap",        "gap_se",         "dominated",     "bayes_risk",
                 "excess_standard", "excess_robust", "upper_standard", "upper_robust", "lower_robust",
                 "vacuous_standard", "vacuous_robust", "pass_standard", "pass_robust_upper", "pass_robust_lower",
                 "nonzero_params", "teacher_nonzero_params", "pass"};
    for (const auto& r : rows) {
      auto bound = [&](double ClassificationBounds::*m) { return r.bounds ? fmt_num((*r.bounds).*m) : std::string(); };
      auto flag = [&](bool ClassificationBounds::*m) { return r.bounds ? fmt_bool((*r.bounds).*m) : std::string(); };
      t.rows.push_back({std::to_string(r.n), std::to_string(r.seed), fmt_num(r.delta), fmt_num(r.tau),
                        fmt_num(r.q_x), fmt_bool(r.audit_delta), fmt_bool(r.audit_tau), fmt_bool(r.audit_zeta),
                        fmt_bool(r.certified), fmt_num(r.cert_max_deviation), fmt_num(r.emp_adv_risk),
                        fmt_bool(r.training_ok), fmt_num(r.risk_standard.estimate),
                        fmt_num(r.risk_standard.std_error), fmt_num(r.risk_robust.estimate),
                        fmt_num(r.risk_robust.std_error), fmt_num(r.gap.estimate), fmt_num(r.gap.std_error),
                        fmt_bool(r.dominated), fmt_num(r.bayes_risk), fmt_num(r.excess_standard),
                        fmt_num(r.excess_robust), bound(&ClassificationBounds::upper_standard),
                        bound(&ClassificationBounds::upper_robust), bound(&ClassificationBounds::lower_robust),
                        flag(&ClassificationBounds::vacuous_standard), flag(&ClassificationBounds::vacuous_robust),
                        fmt_bool(r.pass_standard), fmt_bool(r.pass_robust_upper), fmt_bool(r.pass_robust_lower),
                        std::to_string(r.nonzero_params), std::to_string(r.teacher_nonzero_params),
                        fmt_bool(r.pass())});
    }
    return t;
  }

  nlohmann::json summary() const {
    std::size_t vacuous = 0, gap_positive = 0;
    for (const auto& r : rows) {
      if (r.bounds && (r.bounds->vacuous_standard || r.bounds->vacuous_robust)) ++vacuous;
      if (r.gap.estimate - 3.0 * r.gap.std_error > 0.0) ++gap_positive;
    }
    auto count = [&](auto pred) { return std::count_if(rows.begin(), rows.end(), pred); };
    return {{"experiment", to_string(kind)},
            {"rows", rows.size()},
            {"all_pass", all_pass()},
            {"passing_rows", count([](const auto& r) { return r.pass(); })},
            {"all_dominated", count([](const auto& r) { return r.dominated; }) == static_cast<long>(rows.size())},
            {"all_certified", count([](const auto& r) { return r.certified; }) == static_cast<long>(rows.size())},
            {"vacuous_rows", vacuous},
            {"gap_excludes_zero_rows", gap_positive},
            {"teacher", teacher}};
  }
};

struct ClassificationRun {
  ClassificationRow row;
  StudentBundle student;
  Dataset dataset;
};

inline TeacherResult classification_teacher(const ClassificationSpec& spec) {
  const double eps = 2.0 * spec.zeta / 3.0;
  return build_sup_approximant(spec.regression_function(), {.eps_target = eps});
}

// One pipeline run. eval_delta scales the attack radius relative to the build radius.
inline ClassificationRun run_classification_once(const ClassificationSpec& spec, const ReluNetwork& teacher,
                                                 std::size_t n, std::uint64_t seed, const ExperimentConfig& cfg,
                                                 std::optional<double> tau_override = {}) {
  ClassificationRow r;
  r.n = n;
  r.seed = seed;
  auto ds = sample_classification(spec, n, seed);
  r.q_x = separation(ds.xs);
  r.delta = admissible_delta(r.q_x, cfg.delta_cap, spec.delta_max);
  r.tau = tau_override.value_or(cfg.tau_fraction * cfg.c0 * r.delta);
  r.audit_delta = r.delta < r.q_x / 3.0;
  r.audit_tau = r.tau > 0.0 && r.tau <= cfg.c0 * r.delta;
  r.audit_zeta = true;
  for (const auto& x : ds.xs) r.audit_zeta = r.audit_zeta && std::abs(spec.eta_at(x) - 0.5) > spec.zeta;

  StudentParams p;
  p.delta = r.delta;
  p.tau = r.tau;
  p.c0 = cfg.c0;
  p.eps = 2.0 * spec.zeta / 3.0;
  p.theta = p.eps;
  p.beta = cfg.beta;
  auto student = build_classification_student(teacher, ds, p, cfg.probes_per_ball, cfg.threads);
  if (cfg.loss == LossKind::logistic) student = build_logistic_student(student, cfg.beta, cfg.probes_per_ball, cfg.threads);
  r.certified = student.certification.valid();
  r.cert_max_deviation = student.certification.max_deviation;
  if (!student.certification.pairwise_ok) throw PreconditionError("classification run: certification failed");

  const double eval_delta = cfg.eval_delta_scale * r.delta;
  r.emp_adv_risk = empirical_adv_risk(student.net, ds, eval_delta, cfg.loss, cfg.attack, cfg.threads).value;
  r.training_ok = cfg.loss == LossKind::logistic ? std::abs(r.emp_adv_risk - std::log1p(cfg.beta)) <= 1e-9
                                                 : r.emp_adv_risk == 0.0;

  auto oracle = detail::oracle_for(student.net, cfg.attack);
  auto risks = mc_classification_risks(*oracle, spec, eval_delta, cfg.mc_samples, detail::mc_seed(seed, n), cfg.threads);
  r.risk_standard = risks.standard;
  r.risk_robust = risks.robust;
  r.gap = risks.gap;
  r.dominated = risks.dominated;

  const auto bq = bayes_quantities(spec);
  r.bayes_risk = bq.bayes_risk;
  r.excess_standard = r.risk_standard.estimate - bq.bayes_risk;
  r.excess_robust = r.risk_robust.estimate - bq.bayes_risk;
  if (r.audits()) {
    r.bounds = classification_bounds(bq.j_norm, bq.jbar_norm, spec.zeta, bq.bayes_risk, cfg.c0, r.delta, spec.dim, n);
    r.pass_standard = r.excess_standard <= r.bounds->upper_standard + 3.0 * r.risk_standard.std_error;
    r.pass_robust_upper = r.excess_robust <= r.bounds->upper_robust + 3.0 * r.risk_robust.std_error;
    r.pass_robust_lower = r.excess_robust >= r.bounds->lower_robust - 3.0 * r.risk_robust.std_error;
  }
  auto budget = parameter_budget_report(student);
  r.nonzero_params = budget.nonzero_params;
  r.teacher_nonzero_params = budget.teacher_nonzero_params;
  return {r, std::move(student), std::move(ds)};
}

inline ClassificationReport run_classification_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  auto spec = classification_spec_from_json(cfg.spec);
  if (spec.dim > 3) throw PreconditionError("classification experiment: d must be <= 3");
  auto teacher = classification_teacher(spec);
  ClassificationReport rep;
  rep.kind = cfg.kind;
  rep.teacher = teacher.report.to_json();
  for (auto n : cfg.n_values)
    for (auto s : cfg.seeds) rep.rows.push_back(run_classification_once(spec, teacher.net, n, s, cfg).row);
  return rep;
}

// Paired standard / robust risks of certified students; nonnegativity of the
// gap is exact at every draw.
inline ClassificationReport run_gap_experiment(const ExperimentConfig& cfg) {
  auto rep = run_classification_experiment(cfg);
  rep.kind = ExperimentKind::gap;
  return rep;
}

// ---------------------------------------------------------------------------
// Regression.

struct RegressionRow {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double eps = 0, theta = 0, delta = 0, tau = 0, q_x = 0, delta_hypothesis = 0;
  bool audit_delta = false, audit_tau = false;
  bool certified = false;
  double emp_adv_risk = 0;
  std::size_t teacher_grid_n = 0;
  double teacher_sup_error = 0;
  std::optional<double> teacher_lipschitz_deviation;
  RegressionRisks risks;
  double lower_bound = 0;
  bool pass_lower = true;
  double upper_shape = 0;
  std::size_t nonzero_params = 0;

  bool pass() const { return audit_delta && audit_tau && certified && emp_adv_risk == 0.0 && risks.dominated && pass_lower; }
};

struct RegressionReport {
  ExperimentKind kind = ExperimentKind::regression_rate;
  std::vector<RegressionRow> rows;
  double sigma2_eff = 0;
  std::optional<double> slope;
  bool floor_hit = false;
  std::vector<std::size_t> dropped_n;
  std::vector<double> ratio_checks;
  bool ratio_ok = true;
  double fitted_c3 = 0;
  double slope_threshold = -0.5;
  nlohmann::json teacher;

  bool all_pass() const {
    bool ok = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass(); });
    if (kind == ExperimentKind::regression_rate) ok = ok && (floor_hit || (slope && *slope <= slope_threshold));
    if (kind == ExperimentKind::regression_robust) ok = ok && ratio_ok;
    return ok;
  }

  Table table() const {
    Table t;
    t.columns = {"n", "seed", "eps", "theta", "delta", "tau", "q_x", "delta_hypothesis", "audit_delta", "audit_tau",
                 "certified", "emp_adv_risk", "teacher_grid_n", "teacher_sup_error", "teacher_lipschitz_deviation",
                 "risk_standard", "risk_standard_se", "risk_robust", "risk_robust_se", "gap", "gap_se", "dominated",
                 "excess_standard", "excess_standard_se", "robust_excess_lower", "robust_excess_lower_se",
                 "robust_excess_upper", "robust_excess_upper_se", "lower_bound", "pass_lower", "upper_shape",
                 "nonzero_params", "pass"};
    for (const auto& r : rows) {
      const auto& k = r.risks;
      t.rows.push_back(
          {std::to_string(r.n), std::to_string(r.seed), fmt_num(r.eps), fmt_num(r.theta), fmt_num(r.delta),
           fmt_num(r.tau), fmt_num(r.q_x), fmt_num(r.delta_hypothesis), fmt_bool(r.audit_delta),
           fmt_bool(r.audit_tau), fmt_bool(r.certified), fmt_num(r.emp_adv_risk), std::to_string(r.teacher_grid_n),
           fmt_num(r.teacher_sup_error),
           r.teacher_lipschitz_deviation ? fmt_num(*r.teacher_lipschitz_deviation) : std::string(),
           fmt_num(k.standard.estimate), fmt_num(k.standard.std_error), fmt_num(k.robust.estimate),
           fmt_num(k.robust.std_error), fmt_num(k.gap.estimate), fmt_num(k.gap.std_error), fmt_bool(k.dominated),
           fmt_num(k.excess_standard.estimate), fmt_num(k.excess_standard.std_error),
           fmt_num(k.robust_excess_lower.estimate), fmt_num(k.robust_excess_lower.std_error),
           fmt_num(k.robust_excess_upper.estimate), fmt_num(k.robust_excess_upper.std_error),
           fmt_num(r.lower_bound), fmt_bool(r.pass_lower), fmt_num(r.upper_shape), std::to_string(r.nonzero_params),
           fmt_bool(r.pass())});
    }
    return t;
  }

  nlohmann::json summary() const {
    nlohmann::json j{{"experiment", to_string(kind)},
                     {"rows", rows.size()},
                     {"all_pass", all_pass()},
                     {"sigma2_eff", sigma2_eff},
                     {"all_dominated", std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.risks.dominated; })},
                     {"teacher", teacher}};
    if (kind == ExperimentKind::regression_rate) {
      j["slope"] = slope ? nlohmann::json(*slope) : nlohmann::json(nullptr);
      j["slope_threshold"] = slope_threshold;
      j["floor_hit"] = floor_hit;
      j["dropped_n"] = dropped_n;
    } else {
      j["ratio_checks"] = ratio_checks;
      j["ratio_ok"] = ratio_ok;
      j["fitted_c3"] = fitted_c3;
    }
    return j;
  }
};

namespace detail {

inline void fill_regression_row(RegressionRow& r, const RegressionSpec& spec, const ReluNetwork& teacher,
                                const Dataset& ds, const ExperimentConfig& cfg) {
  r.tau = cfg.tau_fraction * cfg.c0 * r.delta;
  r.audit_delta = r.delta < r.q_x / 3.0;
  r.audit_tau = r.tau > 0.0 && r.tau <= cfg.c0 * r.delta;
  StudentParams p;
  p.delta = r.delta;
  p.tau = r.tau;
  p.c0 = cfg.c0;
  p.eps = std::min(r.eps, 0.5);
  p.theta = r.theta;
  auto student = build_regression_student(teacher, ds, p, cfg.probes_per_ball, cfg.threads);
  r.certified = student.certification.valid();
  r.emp_adv_risk = empirical_adv_risk(student.net, ds, r.delta, LossKind::squared, cfg.attack, cfg.threads).value;
  auto oracle = oracle_for(student.net, cfg.attack);
  auto truth = target_oracle(spec.target);
  r.risks = mc_regression_risks(*oracle, truth, spec, r.delta, cfg.mc_samples, mc_seed(r.seed, r.n), cfg.threads);
  r.nonzero_params = nonzero_param_count(student.net);
}

}  // namespace detail

inline RegressionReport run_regression_rate_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  auto spec = regression_spec_from_json(cfg.spec);
  const double alpha = spec.target.alpha, d = static_cast<double>(spec.dim());
  RegressionReport rep;
  rep.kind = ExperimentKind::regression_rate;
  rep.sigma2_eff = spec.effective_variance();
  rep.slope_threshold = cfg.slope_threshold;
  std::vector<std::size_t> ns = cfg.n_values;
  std::sort(ns.begin(), ns.end());
  nlohmann::json teachers = nlohmann::json::array();
  std::vector<double> lx, ly;
  for (std::size_t idx = 0; idx < ns.size(); ++idx) {
    const std::size_t n = ns[idx];
    const double nn = static_cast<double>(n);
    const double eps = std::pow(nn, -alpha / (2.0 * alpha + d));
    std::optional<TeacherResult> teacher;
    try {
      teacher = build_sup_approximant(spec.target, {.eps_target = eps});
    } catch (const BuildError&) {
      if (idx == 0) {
        rep.dropped_n.push_back(n);
        continue;
      }
      throw;
    }
    teachers.push_back(teacher->report.to_json());
    double mean_excess = 0.0;
    for (auto s : cfg.seeds) {
      RegressionRow r;
      r.n = n;
      r.seed = s;
      r.eps = eps;
      r.theta = eps;
      auto ds = sample_regression(spec, n, s);
      r.q_x = separation(ds.xs);
      r.delta_hypothesis = std::pow(nn, -2.0 * alpha / ((2.0 * alpha + d) * d) - 1.0 / d);
      r.delta = admissible_delta(r.q_x, cfg.delta_cap, 0.9 * r.delta_hypothesis);
      r.teacher_grid_n = teacher->report.grid_n;
      r.teacher_sup_error = teacher->report.sup_error;
      detail::fill_regression_row(r, spec, teacher->net, ds, cfg);
      r.audit_delta = r.audit_delta && r.delta < r.delta_hypothesis;
      mean_excess += r.risks.excess_standard.estimate;
      rep.rows.push_back(std::move(r));
    }
    mean_excess /= static_cast<double>(cfg.seeds.size());
    if (mean_excess < 1e-10) rep.floor_hit = true;
    lx.push_back(std::log(nn));
    ly.push_back(std::log(std::max(mean_excess, 1e-300)));
  }
  rep.teacher = teachers;
  if (!rep.floor_hit && lx.size() >= 2) rep.slope = ols_slope(lx, ly);
  return rep;
}

inline RegressionReport run_regression_robust_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  auto spec = regression_spec_from_json(cfg.spec);
  if (spec.target.alpha < 2) throw PreconditionError("regression robust experiment: needs alpha >= 2");
  RegressionReport rep;
  rep.kind = ExperimentKind::regression_robust;
  rep.sigma2_eff = spec.effective_variance();
  std::vector<std::size_t> ns = cfg.n_values;
  std::sort(ns.begin(), ns.end());

  // one radius for every dataset so the n-dependence is isolated
  std::map<std::pair<std::size_t, std::uint64_t>, Dataset> data;
  double delta = std::numeric_limits<double>::infinity();
  for (auto n : ns)
    for (auto s : cfg.seeds) {
      auto ds = sample_regression(spec, n, s);
      delta = std::min(delta, admissible_delta(separation(ds.xs), cfg.delta_cap));
      data.emplace(std::make_pair(n, s), std::move(ds));
    }
  const double theta = std::sqrt(delta);
  std::optional<TeacherResult> teacher;
  try {
    teacher = build_sup_approximant(spec.target, {.eps_target = theta, .w1_theta = theta});
  } catch (const BuildError&) {
    teacher = build_sup_approximant(spec.target, {.eps_target = theta, .w1_theta = theta, .max_rounds = 12});
  }
  rep.teacher = teacher->report.to_json();

  const auto& density = spec.density;
  const double j_norm = density.sup(), jbar_norm = 1.0 / density.inf_positive();
  std::map<std::size_t, double> mean_upper;
  for (auto n : ns) {
    for (auto s : cfg.seeds) {
      RegressionRow r;
      r.n = n;
      r.seed = s;
      r.eps = theta;
      r.theta = theta;
      r.delta = delta;
      const auto& ds = data.at({n, s});
      r.q_x = separation(ds.xs);
      r.teacher_grid_n = teacher->report.grid_n;
      r.teacher_sup_error = teacher->report.sup_error;
      r.teacher_lipschitz_deviation = teacher->report.lipschitz_deviation;
      detail::fill_regression_row(r, spec, teacher->net, ds, cfg);
      r.lower_bound = regression_lower_bound(jbar_norm, j_norm, rep.sigma2_eff, spec.target.norm_bound,
                                             spec.output_bound, delta, spec.dim(), n);
      r.pass_lower =
          r.risks.robust_excess_upper.estimate >= r.lower_bound - 3.0 * r.risks.robust_excess_upper.std_error;
      r.upper_shape = regression_upper_shape(cfg.c0, delta, spec.dim(), n);
      rep.fitted_c3 = std::max(rep.fitted_c3, r.risks.robust_excess_upper.estimate / r.upper_shape);
      mean_upper[n] += r.risks.robust_excess_upper.estimate / static_cast<double>(cfg.seeds.size());
      rep.rows.push_back(std::move(r));
    }
  }
  for (std::size_t i = 1; i < ns.size(); ++i) {
    const double ratio = (mean_upper[ns[i]] / mean_upper[ns[i - 1]]) /
                         (static_cast<double>(ns[i]) / static_cast<double>(ns[i - 1]));
    rep.ratio_checks.push_back(ratio);
    rep.ratio_ok = rep.ratio_ok && std::abs(ratio - 1.0) <= cfg.ratio_tolerance;
  }
  return rep;
}

// ---------------------------------------------------------------------------

struct ExperimentOutput {
  Table table;
  nlohmann::json summary;
  bool all_pass = false;
};

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::classification:
    case ExperimentKind::gap: {
      auto r = cfg.kind == ExperimentKind::gap ? run_gap_experiment(cfg) : run_classification_experiment(cfg);
      return {r.table(), r.summary(), r.all_pass()};
    }
    case ExperimentKind::regression_rate: {
      auto r = run_regression_rate_experiment(cfg);
      return {r.table(), r.summary(), r.all_pass()};
    }
    case ExperimentKind::regression_robust: {
      auto r = run_regression_robust_experiment(cfg);
      return {r.table(), r.summary(), r.all_pass()};
    }
  }
  throw InputError("unknown experiment");
}

// Writes <stem>.csv and <stem>.json.
inline void write_outputs(const ExperimentOutput& out, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream csv(stem.string() + ".csv", std::ios::binary);
  out.table.write_csv(csv);
  std::ofstream js(stem.string() + ".json", std::ios::binary);
  nlohmann::json s = out.summary;
  s["schema_version"] = kCsvSchemaVersion;
  js << s.dump(2) << "\n";
  if (!csv || !js) throw InputError("could not write outputs at " + stem.string());
}

}  // namespace relulab
