#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "gadgets.hpp"
#include "pwl1d.hpp"
#include "relunet.hpp"
#include "smooth_target.hpp"

namespace relulab {

struct TeacherOptions {
  double eps_target = 0.05;
  // When set, the result must also satisfy lipschitz_deviation <= w1_theta.
  std::optional<double> w1_theta;
  int max_rounds = 8;
  std::size_t verify_points = 10000;
  // Refuse rounds whose patch count would exceed this.
  std::size_t max_patches = 200000;
};

struct TeacherReport {
  bool success = false;
  bool exact_affine = false;
  std::size_t grid_n = 0;
  int degree = 0;
  int gate_depth = 0;
  double gate_eps = 0.0;
  double sup_error = 0.0;
  std::optional<double> lipschitz_deviation;
  std::size_t verify_grid_per_dim = 0;
  int rounds = 0;
  std::size_t depth = 0;
  std::size_t max_width = 0;
  std::size_t nonzero_params = 0;
  std::size_t params = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"success", success},
                     {"exact_affine", exact_affine},
                     {"grid_n", grid_n},
                     {"degree", degree},
                     {"gate_depth", gate_depth},
                     {"gate_eps", gate_eps},
                     {"sup_error", sup_error},
                     {"verify_grid_per_dim", verify_grid_per_dim},
                     {"rounds", rounds},
                     {"depth", depth},
                     {"max_width", max_width},
                     {"nonzero_params", nonzero_params},
                     {"params", params}};
    j["lipschitz_deviation"] = lipschitz_deviation ? nlohmann::json(*lipschitz_deviation) : nlohmann::json(nullptr);
    return j;
  }
};

struct TeacherResult {
  ReluNetwork net;
  TeacherReport report;
};

// Uniform grid with per_dim points per axis including both ends of [0, 1].
struct GridSpec {
  std::size_t dim = 1;
  std::size_t per_dim = 10000;

  static GridSpec with_total(std::size_t dim, std::size_t total) {
    std::size_t g = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(total), 1.0 / dim) - 1e-9));
    return {dim, std::max<std::size_t>(g, 2)};
  }

  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t k = 0; k < dim; ++k) n *= per_dim;
    return n;
  }

  std::vector<double> point(std::size_t index) const {
    std::vector<double> x(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      x[k] = static_cast<double>(index % per_dim) / static_cast<double>(per_dim - 1);
      index /= per_dim;
    }
    return x;
  }
};

// Bump of grid node m out of N on one axis; the bumps m = 0..N sum to 1 on [0, 1].
inline ReluNetwork grid_bump(std::size_t n_cells, std::size_t node) {
  const double n = static_cast<double>(n_cells);
  const double c = static_cast<double>(node) / n;
  const double third = 1.0 / (3.0 * n);
  return trapezoid(c - third, c + third, third);
}

namespace detail {

// Evaluates f either through the network or, for d = 1, its exact knot form.
class FastEvaluator {
 public:
  explicit FastEvaluator(const ReluNetwork& net) : net_(net) {
    if (net.input_dim() == 1) pwl_.emplace(PiecewiseLinear1D::from_network(net, 0.0, 1.0));
  }

  double operator()(std::span<const double> x) {
    if (pwl_ && x[0] >= 0.0 && x[0] <= 1.0) return pwl_->value(x[0]);
    return net_.evaluate(x, ws_);
  }

 private:
  const ReluNetwork& net_;
  std::optional<PiecewiseLinear1D> pwl_;
  Workspace ws_;
};

constexpr double kFiniteDifferenceStep = 1e-4;

template <class F>
double lipschitz_deviation_impl(F&& f, const SmoothTarget& target, const GridSpec& grid) {
  double worst = 0.0;
  std::vector<double> xp, xm;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto x = grid.point(i);
    const auto g = target.gradient(x);
    for (std::size_t k = 0; k < grid.dim; ++k) {
      xp = x;
      xm = x;
      xp[k] = std::min(1.0, x[k] + kFiniteDifferenceStep);
      xm[k] = std::max(0.0, x[k] - kFiniteDifferenceStep);
      const double fd = (f(xp) - f(xm)) / (xp[k] - xm[k]);
      worst = std::max(worst, std::abs(fd - g[k]));
    }
  }
  return worst;
}

inline std::vector<std::vector<int>> multi_indices(std::size_t dim, int max_total) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(dim, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t k, int left) {
    if (k == dim) {
      out.push_back(cur);
      return;
    }
    for (int o = 0; o <= left; ++o) {
      cur[k] = o;
      rec(k + 1, left - o);
    }
    cur[k] = 0;
  };
  rec(0, max_total);
  return out;
}

// Balanced product tree over the factors.
inline ReluNetwork product_tree(std::vector<ReluNetwork> factors, const ReluNetwork& gate) {
  while (factors.size() > 1) {
    std::vector<ReluNetwork> next;
    for (std::size_t i = 0; i + 1 < factors.size(); i += 2)
      next.push_back(compose_serial(gate, fan_out(std::vector<ReluNetwork>{factors[i], factors[i + 1]})));
    if (factors.size() % 2 == 1) next.push_back(factors.back());
    factors = std::move(next);
  }
  return factors.front();
}

inline double factorial(int k) {
  double f = 1.0;
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

}  // namespace detail

// Max over the grid of the L-infinity mismatch between the central
// finite-difference gradient of the net (step 1e-4) and the exact gradient.
inline double lipschitz_deviation(const ReluNetwork& net, const SmoothTarget& target, const GridSpec& grid) {
  if (net.input_dim() != target.dim || grid.dim != target.dim) throw InputError("lipschitz_deviation: dimension mismatch");
  detail::FastEvaluator f(net);
  return detail::lipschitz_deviation_impl(f, target, grid);
}

inline double sup_error_on_grid(const ReluNetwork& net, const SmoothTarget& target, const GridSpec& grid) {
  detail::FastEvaluator f(net);
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto x = grid.point(i);
    worst = std::max(worst, std::abs(f(x) - target(x)));
  }
  return worst;
}

namespace detail {

// Partition-of-unity Taylor approximant on an N^d grid with product gates of depth m.
inline ReluNetwork assemble_teacher(const SmoothTarget& target, std::size_t n_cells, int degree, int gate_depth) {
  const std::size_t d = target.dim;
  const double n = static_cast<double>(n_cells);
  const double half_support = 2.0 / (3.0 * n);
  const auto orders = multi_indices(d, degree);
  const ReluNetwork gate = product_gate_with_depth(gate_depth);

  std::vector<ReluNetwork> bumps;  // bumps[k * (N+1) + node], remapped to axis k
  std::vector<ReluNetwork> offsets;
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t node = 0; node <= n_cells; ++node) {
      std::vector<std::size_t> axis{k};
      bumps.push_back(remap_inputs(grid_bump(n_cells, node), d, axis));
      std::vector<double> w(d, 0.0);
      w[k] = 1.0 / half_support;
      offsets.push_back(affine_network(w, -(static_cast<double>(node) / n) / half_support));
    }
  }

  std::vector<ReluNetwork> terms;
  std::vector<double> coeffs;
  std::vector<std::size_t> node(d, 0);
  std::vector<double> center(d);
  const std::size_t patches = static_cast<std::size_t>(std::pow(n + 1.0, static_cast<double>(d)) + 0.5);
  for (std::size_t p = 0; p < patches; ++p) {
    std::size_t rest = p;
    for (std::size_t k = 0; k < d; ++k) {
      node[k] = rest % (n_cells + 1);
      rest /= (n_cells + 1);
      center[k] = static_cast<double>(node[k]) / n;
    }
    for (const auto& order : orders) {
      double c = target.partial(order, center);
      const int total = total_order(order);
      for (int o : order) c /= factorial(o);
      c *= std::pow(half_support, total);
      if (c == 0.0) continue;
      std::vector<ReluNetwork> factors;
      for (std::size_t k = 0; k < d; ++k) factors.push_back(bumps[k * (n_cells + 1) + node[k]]);
      for (std::size_t k = 0; k < d; ++k)
        for (int r = 0; r < order[k]; ++r) factors.push_back(offsets[k * (n_cells + 1) + node[k]]);
      terms.push_back(product_tree(std::move(factors), gate));
      coeffs.push_back(c);
    }
  }
  if (terms.empty()) return affine_network(std::vector<double>(d, 0.0), 0.0);
  std::size_t depth = 0;
  for (const auto& t : terms) depth = std::max(depth, t.depth());
  for (auto& t : terms) t = pad_to_depth(t, depth);
  return stack_parallel(terms, coeffs);
}

// Largest per-point weight of gate errors: sum over the 2^d overlapping patches
// of |coeff| * (number of gates in the term's tree).
inline double gate_error_weight(const SmoothTarget& target, std::size_t n_cells, int degree) {
  const std::size_t d = target.dim;
  const double n = static_cast<double>(n_cells);
  const double half_support = 2.0 / (3.0 * n);
  const auto orders = multi_indices(d, degree);
  const std::size_t patches = static_cast<std::size_t>(std::pow(n + 1.0, static_cast<double>(d)) + 0.5);
  double worst = 0.0;
  std::vector<double> center(d);
  for (std::size_t p = 0; p < patches; ++p) {
    std::size_t rest = p;
    for (std::size_t k = 0; k < d; ++k) {
      center[k] = static_cast<double>(rest % (n_cells + 1)) / n;
      rest /= (n_cells + 1);
    }
    double sum = 0.0;
    for (const auto& order : orders) {
      const int gates = static_cast<int>(d) + total_order(order) - 1;
      if (gates <= 0) continue;
      double c = std::abs(target.partial(order, center)) * std::pow(half_support, total_order(order));
      for (int o : order) c /= factorial(o);
      sum += c * gates;
    }
    worst = std::max(worst, sum);
  }
  return worst * std::pow(2.0, static_cast<double>(d));
}

}  // namespace detail

inline TeacherResult build_sup_approximant(const SmoothTarget& target, const TeacherOptions& opt) {
  if (!(opt.eps_target > 0.0 && opt.eps_target < 1.0)) throw PreconditionError("teacher: eps_target must lie in (0, 1)");
  if (target.dim < 1 || target.dim > 3) throw PreconditionError("teacher: dimension must be 1, 2 or 3");
  if (opt.w1_theta && !(*opt.w1_theta > 0.0)) throw PreconditionError("teacher: w1_theta must be positive");
  const GridSpec grid = GridSpec::with_total(target.dim, opt.verify_points);

  auto finish = [&](ReluNetwork net, TeacherReport rep) {
    rep.depth = net.depth();
    auto w = net.widths();
    rep.max_width = *std::max_element(w.begin(), w.end());
    rep.nonzero_params = nonzero_param_count(net);
    rep.params = param_count(net);
    rep.verify_grid_per_dim = grid.per_dim;
    return TeacherResult{std::move(net), rep};
  };

  if (target.affine) {
    ReluNetwork net = affine_network(target.affine->weights, target.affine->offset);
    TeacherReport rep;
    rep.exact_affine = true;
    rep.degree = 1;
    rep.sup_error = sup_error_on_grid(net, target, grid);
    if (opt.w1_theta) rep.lipschitz_deviation = lipschitz_deviation(net, target, grid);
    rep.success = true;
    rep.rounds = 1;
    return finish(std::move(net), rep);
  }

  const int degree = target.alpha - 1;
  std::size_t n_cells = static_cast<std::size_t>(std::ceil(std::pow(opt.eps_target, -1.0 / target.alpha) - 1e-12));
  n_cells = std::max<std::size_t>(n_cells, 1);
  double best = std::numeric_limits<double>::infinity();
  for (int round = 0; round < opt.max_rounds; ++round, n_cells *= 2) {
    const double patches = std::pow(static_cast<double>(n_cells + 1), static_cast<double>(target.dim));
    if (patches > static_cast<double>(opt.max_patches)) break;
    const double weight = detail::gate_error_weight(target, n_cells, degree);
    double gate_eps = 0.5;
    if (weight > 0.0) {
      gate_eps = std::min(gate_eps, 0.5 * opt.eps_target / weight);
      if (opt.w1_theta) gate_eps = std::min(gate_eps, 0.5 * *opt.w1_theta * detail::kFiniteDifferenceStep / weight);
    }
    const auto gate = choose_product_gate(gate_eps);
    ReluNetwork net = detail::assemble_teacher(target, n_cells, degree, gate.m);

    TeacherReport rep;
    rep.grid_n = n_cells;
    rep.degree = degree;
    rep.gate_depth = gate.m;
    rep.gate_eps = gate_eps;
    rep.rounds = round + 1;
    rep.sup_error = sup_error_on_grid(net, target, grid);
    bool ok = rep.sup_error <= opt.eps_target;
    if (opt.w1_theta) {
      rep.lipschitz_deviation = lipschitz_deviation(net, target, grid);
      ok = ok && *rep.lipschitz_deviation <= *opt.w1_theta;
    }
    best = std::min(best, rep.sup_error);
    if (ok) {
      rep.success = true;
      return finish(std::move(net), rep);
    }
  }
  throw BuildError("teacher: refinement budget exhausted, best sup error " + std::to_string(best), best);
}

}  // namespace relulab
