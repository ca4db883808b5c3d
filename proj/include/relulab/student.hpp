#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "gadgets.hpp"
#include "parallel.hpp"
#include "pwl1d.hpp"
#include "relunet.hpp"
#include "rng.hpp"
#include "synthdata.hpp"
#include "teacher.hpp"

namespace relulab {

struct StudentParams {
  double delta = 0.0;   // attack radius
  double tau = 0.0;     // ramp width of the ball indicators
  double eps = 0.05;    // product gate accuracy
  double theta = 0.05;  // accuracy the teacher was built for
  double c0 = 0.1;
  double beta = 0.5;      // logistic rescale
  double c_scale = 0.0;   // 0 means measure from the teacher

  void validate() const {
    if (!(delta > 0.0)) throw PreconditionError("student: delta must be positive");
    if (!(c0 > 0.0 && c0 <= 1.0)) throw PreconditionError("student: C0 must lie in (0, 1]");
    if (!(tau > 0.0 && tau <= c0 * delta)) throw PreconditionError("student: need 0 < tau <= C0 * delta");
    if (!(eps > 0.0 && eps < 1.0)) throw PreconditionError("student: eps must lie in (0, 1)");
    if (!(theta > 0.0)) throw PreconditionError("student: theta must be positive");
    if (!(c_scale >= 0.0)) throw PreconditionError("student: c_scale must be nonnegative");
  }

  nlohmann::json to_json() const {
    return {{"delta", delta}, {"tau", tau}, {"eps", eps}, {"theta", theta},
            {"c0", c0},       {"beta", beta}, {"c_scale", c_scale}};
  }
};

struct BallCertificate {
  bool pairwise_ok = false;
  double min_pairwise_distance = 0.0;
  double required_distance = 0.0;  // 2 delta + tau
  std::size_t spot_checks = 0;
  double max_deviation = 0.0;

  bool valid() const { return pairwise_ok && max_deviation <= 1e-9; }

  nlohmann::json to_json() const {
    return {{"pairwise_ok", pairwise_ok},
            {"min_pairwise_distance", min_pairwise_distance},
            {"required_distance", required_distance},
            {"spot_checks", spot_checks},
            {"max_deviation", max_deviation}};
  }
};

enum class StudentKind { hinge, logistic, regression };

inline const char* to_string(StudentKind k) {
  switch (k) {
    case StudentKind::hinge: return "hinge";
    case StudentKind::logistic: return "logistic";
    case StudentKind::regression: return "regression";
  }
  return "?";
}

struct StudentBundle {
  ReluNetwork net;
  StudentParams params;
  std::shared_ptr<const Dataset> dataset;
  std::shared_ptr<const ReluNetwork> teacher;
  BallCertificate certification;
  StudentKind kind = StudentKind::hinge;
  double output_scale = 1.0;  // labels on the balls are output_scale * y_i
  std::size_t teacher_nonzeros = 0;
};

// Spot-check points of ball i: the 2^d corners (d <= 3) or random corners,
// the center, and uniform points; clipped to [0, 1]^d.
inline std::vector<std::vector<double>> ball_probe_points(const std::vector<double>& center, double delta,
                                                          std::size_t count, std::uint64_t seed, std::size_t index) {
  const std::size_t d = center.size();
  std::vector<std::vector<double>> pts;
  auto clip = [](std::vector<double> x) {
    for (auto& v : x) v = std::clamp(v, 0.0, 1.0);
    return x;
  };
  pts.push_back(center);
  CounterRng rng(seed, index);
  if (d <= 3) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
      auto x = center;
      for (std::size_t k = 0; k < d; ++k) x[k] += (mask >> k & 1) ? delta : -delta;
      pts.push_back(clip(std::move(x)));
    }
  } else {
    for (int c = 0; c < 8; ++c) {
      auto x = center;
      for (std::size_t k = 0; k < d; ++k) x[k] += rng.uniform() < 0.5 ? delta : -delta;
      pts.push_back(clip(std::move(x)));
    }
  }
  while (pts.size() < count) {
    auto x = center;
    for (std::size_t k = 0; k < d; ++k) x[k] += rng.uniform(-delta, delta);
    pts.push_back(clip(std::move(x)));
  }
  return pts;
}

inline double min_pairwise_linf(const std::vector<std::vector<double>>& xs) { return 2.0 * separation(xs); }

// Disjointness of the inflated balls, plus optional evaluation of a built
// student on probe points of every ball.
inline BallCertificate certify_ball_constancy(const Dataset& ds, const StudentParams& p,
                                              const ReluNetwork* net = nullptr, double label_scale = 1.0,
                                              std::size_t probes_per_ball = 200, unsigned threads = 1,
                                              std::uint64_t seed = 0x5eed) {
  BallCertificate c;
  c.required_distance = 2.0 * p.delta + p.tau;
  c.min_pairwise_distance = ds.size() >= 2 ? min_pairwise_linf(ds.xs) : std::numeric_limits<double>::infinity();
  c.pairwise_ok = c.min_pairwise_distance > c.required_distance;
  if (!net) return c;
  std::vector<double> worst(ds.size(), 0.0);
  std::vector<std::size_t> counts(ds.size(), 0);
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    Workspace ws;
    const double target = label_scale * ds.ys[i];
    for (const auto& x : ball_probe_points(ds.xs[i], p.delta, probes_per_ball, seed, i)) {
      worst[i] = std::max(worst[i], std::abs(net->evaluate(x, ws) - target));
      ++counts[i];
    }
  });
  for (std::size_t i = 0; i < ds.size(); ++i) {
    c.max_deviation = std::max(c.max_deviation, worst[i]);
    c.spot_checks += counts[i];
  }
  return c;
}

// Sup |net| on [0, 1]^d: exact from the knots for d = 1, else a dense grid.
inline double measured_sup_abs(const ReluNetwork& net, std::size_t grid_points = 40000) {
  if (net.input_dim() == 1) {
    auto f = PiecewiseLinear1D::from_network(net, 0.0, 1.0);
    double m = 0.0;
    for (double v : f.values()) m = std::max(m, std::abs(v));
    return m;
  }
  auto grid = GridSpec::with_total(net.input_dim(), grid_points);
  double m = 0.0;
  Workspace ws;
  for (std::size_t i = 0; i < grid.size(); ++i) m = std::max(m, std::abs(net.evaluate(grid.point(i), ws)));
  return m;
}

namespace detail {

// Heads (S, V): S = sum_j y_j Gamma_j, V = 1 - sum_j Gamma_j.
inline MultiHeadNetwork ball_bank(const Dataset& ds, double delta, double tau) {
  auto layers = box_indicator_layers(ds.xs, delta, tau, true);
  const std::size_t n = ds.size();
  std::vector<double> s(n + 1, 0.0), v(n + 1, -1.0);
  for (std::size_t j = 0; j < n; ++j) s[j] = ds.ys[j];
  v[n] = 1.0;
  return {ds.dim, std::move(layers), {std::move(s), std::move(v)}};
}

inline StudentBundle assemble_student(const ReluNetwork& teacher, const Dataset& ds, StudentParams p, StudentKind kind,
                                      std::size_t probes_per_ball, unsigned threads) {
  p.validate();
  if (ds.size() < 1) throw InputError("student: empty dataset");
  if (teacher.input_dim() != ds.dim) throw PreconditionError("student: teacher input_dim differs from data dimension");
  if (ds.size() >= 2) {
    const double q = separation(ds.xs);
    if (!(p.delta < q / 3.0))
      throw PreconditionError("student: delta " + std::to_string(p.delta) + " violates delta < q_X/3 (q_X = " +
                              std::to_string(q) + ")");
  }
  const double sup = measured_sup_abs(teacher);
  const double needed = std::max(1.05 * sup, 1e-12);
  if (p.c_scale == 0.0) {
    p.c_scale = needed;
  } else if (p.c_scale < sup) {
    throw PreconditionError("student: c_scale " + std::to_string(p.c_scale) + " is below sup|teacher| " +
                            std::to_string(sup));
  }

  auto inner = fan_out(std::vector<MultiHeadNetwork>{ball_bank(ds, p.delta, p.tau), as_multi_head(teacher)});
  // outer inputs: 0 = S, 1 = V, 2 = teacher
  auto gate = remap_inputs(scaled_product(p.c_scale, p.eps), 3, {2, 1});
  auto pass = pad_to_depth(identity_network(3, 0), gate.depth());
  auto outer = stack_parallel({gate, pass}, {1.0, 1.0});

  StudentBundle b{compose_serial(outer, inner), p, std::make_shared<const Dataset>(ds),
                  std::make_shared<const ReluNetwork>(teacher), {}, kind, 1.0, nonzero_param_count(teacher)};
  b.certification = certify_ball_constancy(ds, p, &b.net, 1.0, probes_per_ball, threads);
  if (!b.certification.pairwise_ok)
    throw PreconditionError("student: inflated balls overlap (min distance " +
                            std::to_string(b.certification.min_pairwise_distance) + " <= 2 delta + tau)");
  return b;
}

}  // namespace detail

inline StudentBundle build_classification_student(const ReluNetwork& teacher, const Dataset& ds, const StudentParams& p,
                                                  std::size_t probes_per_ball = 200, unsigned threads = 1) {
  for (double y : ds.ys)
    if (y != 1.0 && y != -1.0) throw InputError("classification student: labels must be +-1");
  return detail::assemble_student(teacher, ds, p, StudentKind::hinge, probes_per_ball, threads);
}

inline StudentBundle build_regression_student(const ReluNetwork& teacher, const Dataset& ds, const StudentParams& p,
                                              std::size_t probes_per_ball = 200, unsigned threads = 1) {
  return detail::assemble_student(teacher, ds, p, StudentKind::regression, probes_per_ball, threads);
}

// Output multiplied by log(1/beta); ball values become +-log(1/beta).
inline StudentBundle build_logistic_student(const StudentBundle& hinge, double beta, std::size_t probes_per_ball = 200,
                                            unsigned threads = 1) {
  if (!(beta > 0.0 && beta < 1.0)) throw PreconditionError("logistic student: beta must lie in (0, 1)");
  if (hinge.kind != StudentKind::hinge) throw PreconditionError("logistic student: needs a hinge student");
  StudentBundle b = hinge;
  b.kind = StudentKind::logistic;
  b.params.beta = beta;
  b.output_scale = std::log(1.0 / beta);
  b.net = scale_output(hinge.net, b.output_scale);
  b.certification =
      certify_ball_constancy(*b.dataset, b.params, &b.net, b.output_scale, probes_per_ball, threads);
  return b;
}

struct BudgetReport {
  std::size_t n = 0;
  std::size_t depth = 0;
  std::vector<std::size_t> widths;
  std::size_t nonzero_params = 0;
  std::size_t teacher_nonzero_params = 0;
  double nonzero_per_sample = 0.0;

  nlohmann::json to_json() const {
    return {{"n", n},
            {"depth", depth},
            {"widths", widths},
            {"nonzero_params", nonzero_params},
            {"teacher_nonzero_params", teacher_nonzero_params},
            {"nonzero_per_sample", nonzero_per_sample}};
  }
};

inline BudgetReport parameter_budget_report(const StudentBundle& b) {
  BudgetReport r;
  r.n = b.dataset->size();
  r.depth = b.net.depth();
  r.widths = b.net.widths();
  r.nonzero_params = nonzero_param_count(b.net);
  r.teacher_nonzero_params = b.teacher_nonzeros;
  r.nonzero_per_sample = static_cast<double>(r.nonzero_params) / static_cast<double>(r.n);
  return r;
}

// Nonzeros of one standalone ball indicator with its read-out weight.
inline std::size_t ball_gadget_nonzeros(std::size_t d) {
  return nonzero_param_count(box_indicator(std::vector<double>(d, 0.5), 0.1, 0.01));
}

inline nlohmann::json export_bundle(const StudentBundle& b) {
  return {{"kind", to_string(b.kind)},
          {"network", to_json(b.net)},
          {"params", b.params.to_json()},
          {"output_scale", b.output_scale},
          {"certificate", b.certification.to_json()},
          {"budget", parameter_budget_report(b).to_json()}};
}

}  // namespace relulab
