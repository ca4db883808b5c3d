#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "relulab/harness.hpp"

using namespace relulab;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  bool seed_set = false;
  unsigned threads = 0;
  std::string out;
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
}

void write_text(const std::string& path, const std::string& text) {
  auto p = std::filesystem::path(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw InputError("cannot write " + path);
}

std::vector<double> parse_point(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
  if (v.empty()) throw InputError("empty point");
  return v;
}

// ---- gadget ----------------------------------------------------------------

struct GadgetArgs {
  double eps = 0.0039;
  std::string center = "0.5";
  double half_width = 0.1;
  double theta = 0.01;
  double a = 0.3, b = 0.6;
  bool verify = false;
};

int gadget_product(const GadgetArgs& g, const Globals& gl) {
  auto choice = choose_product_gate(g.eps);
  auto net = product_gate_with_depth(choice.m);
  std::printf("product gate: depth parameter %d, layers %zu, nonzeros %zu\n", choice.m, net.depth(),
              nonzero_param_count(net));
  std::printf("sup error on 201x201 grid: %.17g (requested %.17g)\n", choice.grid_error, g.eps);
  bool ok = choice.grid_error <= g.eps;
  if (g.verify) {
    std::mt19937_64 gen(gl.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      double t = u(gen);
      const double x0[2] = {0.0, t}, x1[2] = {t, 0.0};
      worst = std::max({worst, std::abs(net.evaluate(x0)), std::abs(net.evaluate(x1))});
    }
    std::printf("annihilation max |gate(0,v)|, |gate(u,0)|: %.3g\n", worst);
    ok = ok && worst <= 1e-12;
  }
  if (!gl.out.empty()) write_text(gl.out, serialize(net));
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int gadget_box(const GadgetArgs& g, const Globals& gl) {
  auto c = parse_point(g.center);
  auto net = box_indicator(c, g.half_width, g.theta);
  std::printf("box indicator: d=%zu, layers %zu, nonzeros %zu\n", c.size(), net.depth(), nonzero_param_count(net));
  bool ok = true;
  if (g.verify) {
    std::mt19937_64 gen(gl.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double core_dev = 0.0, outer_dev = 0.0, range_dev = 0.0;
    const double reach = g.half_width + g.theta;
    std::vector<double> x(c.size());
    for (int i = 0; i < 10000; ++i) {
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = c[k] + 1.5 * reach * u(gen);
      double dist = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) dist = std::max(dist, std::abs(x[k] - c[k]));
      const double v = net.evaluate(x);
      range_dev = std::max({range_dev, -v, v - 1.0});
      if (dist <= g.half_width) core_dev = std::max(core_dev, std::abs(v - 1.0));
      if (dist >= reach) outer_dev = std::max(outer_dev, std::abs(v));
    }
    std::printf("core deviation %.3g, outside deviation %.3g, range violation %.3g\n", core_dev, outer_dev,
                std::max(range_dev, 0.0));
    ok = core_dev <= 1e-9 && outer_dev <= 1e-9 && range_dev <= 1e-9;
  }
  if (!gl.out.empty()) write_text(gl.out, serialize(net));
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int gadget_trapezoid(const GadgetArgs& g, const Globals& gl) {
  auto net = trapezoid(g.a, g.b, g.theta);
  bool ok = true;
  if (g.verify) {
    double worst = 0.0;
    for (int i = 0; i <= 10000; ++i) {
      const double t = -1.0 + 3.0 * i / 10000.0;
      const double x[1] = {t};
      const double v = net.evaluate(x);
      if (t >= g.a && t <= g.b) worst = std::max(worst, std::abs(v - 1.0));
      if (t <= g.a - g.theta || t >= g.b + g.theta) worst = std::max(worst, std::abs(v));
    }
    std::printf("max deviation from 0/1 plateaus: %.3g\n", worst);
    ok = worst <= 1e-9;
  }
  if (!gl.out.empty()) write_text(gl.out, serialize(net));
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

// ---- teacher / student -----------------------------------------------------

// A spec file describes a full distribution; a target file just the function.
SmoothTarget target_from_file(const nlohmann::json& j) {
  const std::string kind = j.value("kind", "");
  if (kind == "classification") return classification_spec_from_json(j).regression_function();
  if (kind == "regression") return regression_spec_from_json(j).target;
  return target_from_json(j);
}

struct TeacherArgs {
  std::string file;
  double eps = 0.05;
  std::optional<double> w1_theta;
};

int run_teacher(const TeacherArgs& a, const Globals& gl) {
  auto target = target_from_file(read_json(a.file));
  TeacherOptions opt;
  opt.eps_target = a.eps;
  opt.w1_theta = a.w1_theta;
  auto res = build_sup_approximant(target, opt);
  std::cout << res.report.to_json().dump(2) << "\n";
  if (!gl.out.empty()) write_text(gl.out, serialize(res.net));
  return res.report.success ? 0 : 1;
}

struct StudentArgs {
  std::string spec;
  std::size_t n = 100;
  double c0 = 0.1;
  double tau_fraction = 0.5;
  double delta_cap = 1.0;
  std::string loss = "hinge";
  double beta = 0.1;
  std::size_t probes = 200;
};

int run_student(const StudentArgs& a, const Globals& gl) {
  auto j = read_json(a.spec);
  const std::string kind = j.value("kind", "");
  const LossKind loss = loss_from_string(a.loss);
  std::optional<StudentBundle> bundle;
  Dataset ds;
  StudentParams p;
  p.c0 = a.c0;
  p.beta = a.beta;
  if (kind == "classification") {
    auto spec = classification_spec_from_json(j);
    ds = sample_classification(spec, a.n, gl.seed);
    p.delta = admissible_delta(separation(ds.xs), a.delta_cap, spec.delta_max);
    p.eps = p.theta = 2.0 * spec.zeta / 3.0;
    p.tau = a.tau_fraction * a.c0 * p.delta;
    auto teacher = classification_teacher(spec);
    bundle = build_classification_student(teacher.net, ds, p, a.probes, gl.threads);
    if (loss == LossKind::logistic) bundle = build_logistic_student(*bundle, a.beta, a.probes, gl.threads);
  } else if (kind == "regression") {
    auto spec = regression_spec_from_json(j);
    ds = sample_regression(spec, a.n, gl.seed);
    p.delta = admissible_delta(separation(ds.xs), a.delta_cap);
    p.eps = p.theta = std::min(0.5, std::sqrt(p.delta));
    p.tau = a.tau_fraction * a.c0 * p.delta;
    auto teacher = build_sup_approximant(spec.target, {.eps_target = p.eps});
    bundle = build_regression_student(teacher.net, ds, p, a.probes, gl.threads);
  } else {
    throw InputError("student: spec kind must be classification or regression");
  }
  const LossKind train_loss = kind == "regression" ? LossKind::squared : loss;
  const double risk = empirical_adv_risk(bundle->net, ds, p.delta, train_loss, {}, gl.threads).value;
  const double expected = train_loss == LossKind::logistic ? std::log1p(a.beta) : 0.0;
  nlohmann::json summary{{"certificate", bundle->certification.to_json()},
                         {"budget", parameter_budget_report(*bundle).to_json()},
                         {"params", bundle->params.to_json()},
                         {"empirical_adversarial_risk", risk}};
  std::cout << summary.dump(2) << "\n";
  if (!gl.out.empty()) write_text(gl.out, export_bundle(*bundle).dump());
  const bool ok = bundle->certification.valid() && std::abs(risk - expected) <= 1e-9;
  return ok ? 0 : 1;
}

// ---- attack / risk ---------------------------------------------------------

ReluNetwork network_from_file(const std::string& path) {
  auto j = read_json(path);
  return j.contains("network") ? from_json(j["network"]) : from_json(j);
}

struct AttackArgs {
  std::string network;
  std::string x;
  double y = 1.0;
  double delta = 0.01;
  std::string loss = "hinge";
  bool heuristic = false;
  std::size_t grid = 9;
};

int run_attack(const AttackArgs& a, const Globals& gl) {
  auto net = network_from_file(a.network);
  AttackConfig cfg;
  cfg.seed = gl.seed;
  cfg.grid_per_dim = a.grid;
  cfg.mode = a.heuristic ? AttackMode::heuristic : AttackMode::exhaustive;
  auto x = parse_point(a.x);
  auto r = ball_max_loss(net, x, a.y, a.delta, loss_from_string(a.loss), cfg);
  nlohmann::json out{{"value", r.value}, {"witness", r.witness}, {"lower_bound", r.lower_bound}};
  std::cout << out.dump(2) << "\n";
  if (!gl.out.empty()) write_text(gl.out, out.dump(2));
  return 0;
}

struct RiskArgs {
  std::string network;
  std::string spec;
  double delta = 0.0;
  std::size_t m = 1000000;
};

int run_risk(const RiskArgs& a, const Globals& gl) {
  auto net = network_from_file(a.network);
  auto j = read_json(a.spec);
  auto oracle = make_network_oracle(net);
  nlohmann::json out;
  bool dominated = false;
  if (j.value("kind", "") == "classification") {
    auto spec = classification_spec_from_json(j);
    auto r = mc_classification_risks(*oracle, spec, a.delta, a.m, gl.seed, gl.threads);
    out = {{"standard", r.standard.to_json()}, {"robust", r.robust.to_json()}, {"gap", r.gap.to_json()},
           {"bayes_risk", bayes_quantities(spec).bayes_risk}};
    dominated = r.dominated;
  } else {
    auto spec = regression_spec_from_json(j);
    FunctionRangeOracle truth(spec.dim(), [&](std::span<const double> x) { return spec.target(x); });
    auto r = mc_regression_risks(*oracle, truth, spec, a.delta, a.m, gl.seed, gl.threads);
    out = {{"standard", r.standard.to_json()},
           {"robust", r.robust.to_json()},
           {"gap", r.gap.to_json()},
           {"excess_standard", r.excess_standard.to_json()},
           {"robust_excess_lower", r.robust_excess_lower.to_json()},
           {"robust_excess_upper", r.robust_excess_upper.to_json()}};
    dominated = r.dominated;
  }
  out["dominated"] = dominated;
  std::cout << out.dump(2) << "\n";
  if (!gl.out.empty()) write_text(gl.out, out.dump(2));
  return dominated ? 0 : 1;
}

// ---- experiment ------------------------------------------------------------

int run_experiment_cmd(const std::string& config_path, const Globals& gl) {
  auto cfg = load_config(config_path);
  if (gl.seed_set) cfg.seeds = {gl.seed};
  if (gl.threads) cfg.threads = gl.threads;
  std::string stem = !gl.out.empty() ? gl.out : !cfg.output.empty() ? cfg.output : "relulab_report";
  auto out = run_experiment(cfg);
  write_outputs(out, stem);
  std::cout << out.summary.dump(2) << "\n";
  std::cout << "wrote " << stem << ".csv and " << stem << ".json\n";
  return out.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relulab: ReLU interpolation and adversarial-risk toolkit"};
  app.require_subcommand(1);
  Globals gl;
  auto* seed_opt = app.add_option("--seed", gl.seed, "random seed")->capture_default_str();
  app.add_option("--threads", gl.threads, "worker threads (0 = hardware)");
  app.add_option("--out", gl.out, "output path");

  GadgetArgs ga;
  auto* gadget = app.add_subcommand("gadget", "build or verify a gadget");
  gadget->require_subcommand(1);
  auto* g_prod = gadget->add_subcommand("product", "product gate");
  g_prod->add_option("--eps", ga.eps, "target sup error")->capture_default_str();
  g_prod->add_flag("--verify", ga.verify, "check annihilation at random points");
  auto* g_box = gadget->add_subcommand("box", "box indicator");
  g_box->add_option("--center", ga.center, "comma separated center")->capture_default_str();
  g_box->add_option("--half-width", ga.half_width)->capture_default_str();
  g_box->add_option("--theta", ga.theta, "ramp width")->capture_default_str();
  g_box->add_flag("--verify", ga.verify);
  auto* g_trap = gadget->add_subcommand("trapezoid", "1D trapezoid");
  g_trap->add_option("--a", ga.a)->capture_default_str();
  g_trap->add_option("--b", ga.b)->capture_default_str();
  g_trap->add_option("--theta", ga.theta)->capture_default_str();
  g_trap->add_flag("--verify", ga.verify);

  TeacherArgs ta;
  auto* teacher = app.add_subcommand("teacher", "build and verify a smooth-function approximant");
  teacher->add_option("--target", ta.file, "target or spec JSON")->required()->check(CLI::ExistingFile);
  teacher->add_option("--eps", ta.eps)->capture_default_str();
  teacher->add_option("--w1-theta", ta.w1_theta, "also require Lipschitz deviation <= theta");

  StudentArgs sa;
  auto* student = app.add_subcommand("student", "sample data, build and certify an interpolating student");
  student->add_option("--spec", sa.spec)->required()->check(CLI::ExistingFile);
  student->add_option("--n", sa.n)->capture_default_str()->check(CLI::Range(std::size_t{2}, std::size_t{1} << 24));
  student->add_option("--c0", sa.c0)->capture_default_str();
  student->add_option("--tau-fraction", sa.tau_fraction)->capture_default_str();
  student->add_option("--delta-cap", sa.delta_cap)->capture_default_str();
  student->add_option("--loss", sa.loss)->capture_default_str()->check(CLI::IsMember({"hinge", "logistic"}));
  student->add_option("--beta", sa.beta)->capture_default_str();
  student->add_option("--probes", sa.probes, "probe points per ball")->capture_default_str();

  AttackArgs aa;
  auto* attack = app.add_subcommand("attack", "maximize the loss over one ball");
  attack->add_option("--network", aa.network)->required()->check(CLI::ExistingFile);
  attack->add_option("--x", aa.x, "comma separated point")->required();
  attack->add_option("--y", aa.y)->capture_default_str();
  attack->add_option("--delta", aa.delta)->capture_default_str();
  attack->add_option("--loss", aa.loss)->capture_default_str();
  attack->add_option("--grid", aa.grid)->capture_default_str();
  attack->add_flag("--heuristic", aa.heuristic);

  RiskArgs ra;
  auto* risk = app.add_subcommand("risk", "Monte Carlo standard and robust risks");
  risk->add_option("--network", ra.network)->required()->check(CLI::ExistingFile);
  risk->add_option("--spec", ra.spec)->required()->check(CLI::ExistingFile);
  risk->add_option("--delta", ra.delta)->capture_default_str();
  risk->add_option("--m", ra.m, "sample count")->capture_default_str();

  std::string config;
  auto* experiment = app.add_subcommand("experiment", "run a config, write CSV and JSON summary");
  experiment->add_option("--config", config)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  gl.seed_set = seed_opt->count() > 0;

  try {
    if (*g_prod) return gadget_product(ga, gl);
    if (*g_box) return gadget_box(ga, gl);
    if (*g_trap) return gadget_trapezoid(ga, gl);
    if (*teacher) return run_teacher(ta, gl);
    if (*student) return run_student(sa, gl);
    if (*attack) return run_attack(aa, gl);
    if (*risk) return run_risk(ra, gl);
    if (*experiment) return run_experiment_cmd(config, gl);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
