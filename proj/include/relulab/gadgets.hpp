#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "errors.hpp"
#include "relunet.hpp"

namespace relulab {

struct GadgetParams {
  double a = 0.0;
  double b = 1.0;
  double theta = 0.1;
  int m = 4;
  double eps = 0.01;

  void validate() const {
    if (!(a < b)) throw PreconditionError("gadget: need a < b");
    if (!(theta > 0.0 && theta <= 1.0)) throw PreconditionError("gadget: theta must lie in (0, 1]");
    if (m < 1) throw PreconditionError("gadget: m must be at least 1");
    if (!(eps > 0.0 && eps < 1.0)) throw PreconditionError("gadget: eps must lie in (0, 1)");
  }
};

// 1 on [a, b], 0 outside [a - theta, b + theta], linear ramps in between.
inline ReluNetwork trapezoid(double a, double b, double theta) {
  if (!(a < b)) throw PreconditionError("trapezoid: need a < b");
  if (!(theta > 0.0)) throw PreconditionError("trapezoid: theta must be positive");
  SparseMatrix::Builder w(1);
  for (int i = 0; i < 4; ++i) {
    w.add(0, 1.0);
    w.end_row();
  }
  std::vector<double> bias{theta - a, -a, -b, -b - theta};
  double s = 1.0 / theta;
  return ReluNetwork(1, {{w.finish(), bias}}, {s, -s, -s, s});
}

// Two layers realizing one box indicator per center. Each box uses 2d units in
// the first layer, sigma(lo_k - x_k) and sigma(x_k - hi_k), and one unit
//   sigma(1 - sum(...) / theta)
// in the second. An optional trailing unit of the second layer is the constant 1.
inline std::vector<Layer> box_indicator_layers(const std::vector<std::vector<double>>& centers, double half_width,
                                               double theta, bool constant_unit) {
  if (centers.empty()) throw InputError("box_indicator: no centers");
  if (!(theta > 0.0)) throw PreconditionError("box_indicator: theta must be positive");
  if (!(half_width > 0.0)) throw PreconditionError("box_indicator: half_width must be positive");
  const std::size_t d = centers.front().size();
  if (d == 0) throw InputError("box_indicator: empty center");
  SparseMatrix::Builder first(d);
  std::vector<double> first_bias;
  for (const auto& c : centers) {
    if (c.size() != d) throw InputError("box_indicator: centers differ in dimension");
    for (std::size_t k = 0; k < d; ++k) {
      const double lo = c[k] - half_width;
      const double hi = c[k] + half_width;
      first.add(k, -1.0);
      first.end_row();
      first_bias.push_back(lo);
      first.add(k, 1.0);
      first.end_row();
      first_bias.push_back(-hi);
    }
  }
  SparseMatrix::Builder second(2 * d * centers.size());
  std::vector<double> second_bias;
  const double slope = -1.0 / theta;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t u = 0; u < 2 * d; ++u) second.add(2 * d * i + u, slope);
    second.end_row();
    second_bias.push_back(1.0);
  }
  if (constant_unit) {
    second.end_row();
    second_bias.push_back(1.0);
  }
  return {{first.finish(), std::move(first_bias)}, {second.finish(), std::move(second_bias)}};
}

inline ReluNetwork box_indicator(const std::vector<double>& center, double half_width, double theta) {
  auto layers = box_indicator_layers({center}, half_width, theta, false);
  return ReluNetwork(center.size(), std::move(layers), {1.0});
}

namespace detail {

struct Term {
  std::size_t col;
  double weight;
};

// Appends the sawtooth squaring chains. chain_inputs[c] lists the affine
// combination of the previous layer that is the chain's argument t in [0, 1].
// Each chain keeps three tooth units and a running remainder
//   r_s = t - sum_{k<=s} g_k(t) / 4^k
// and ends in a single unit holding r_m = sq_m(t).
inline void append_square_chains(std::vector<Layer>& layers, std::size_t prev_width,
                                 const std::vector<std::vector<Term>>& chain_inputs, int m) {
  const std::size_t chains = chain_inputs.size();
  {
    SparseMatrix::Builder b(prev_width);
    std::vector<double> bias;
    for (const auto& in : chain_inputs) {
      const double offsets[4] = {0.0, -0.5, -1.0, 0.0};
      for (double off : offsets) {
        for (const auto& t : in) b.add(t.col, t.weight);
        b.end_row();
        bias.push_back(off);
      }
    }
    layers.push_back({b.finish(), std::move(bias)});
  }
  double scale = 0.25;
  for (int s = 2; s <= m; ++s) {
    SparseMatrix::Builder b(4 * chains);
    std::vector<double> bias;
    for (std::size_t c = 0; c < chains; ++c) {
      const std::size_t base = 4 * c;
      const double offsets[3] = {0.0, -0.5, -1.0};
      for (double off : offsets) {
        b.add(base, 2.0);
        b.add(base + 1, -4.0);
        b.add(base + 2, 2.0);
        b.end_row();
        bias.push_back(off);
      }
      b.add(base, -2.0 * scale);
      b.add(base + 1, 4.0 * scale);
      b.add(base + 2, -2.0 * scale);
      b.add(base + 3, 1.0);
      b.end_row();
      bias.push_back(0.0);
    }
    layers.push_back({b.finish(), std::move(bias)});
    scale *= 0.25;
  }
  SparseMatrix::Builder b(4 * chains);
  for (std::size_t c = 0; c < chains; ++c) {
    const std::size_t base = 4 * c;
    b.add(base, -2.0 * scale);
    b.add(base + 1, 4.0 * scale);
    b.add(base + 2, -2.0 * scale);
    b.add(base + 3, 1.0);
    b.end_row();
  }
  layers.push_back({b.finish(), std::vector<double>(chains, 0.0)});
}

}  // namespace detail

// Piecewise-linear interpolant of t^2 on the dyadic grid of spacing 2^-m,
// exact at 0 and 1. Depth m + 1, width 4.
inline ReluNetwork square_gate(int m) {
  if (m < 1) throw PreconditionError("square_gate: m must be at least 1");
  std::vector<Layer> layers;
  detail::append_square_chains(layers, 1, {{{0, 1.0}}}, m);
  return ReluNetwork(1, std::move(layers), {1.0});
}

// x*y ~ sq(|p|) - sq(|q|), p = (cx + cy)/2, q = (cx - cy)/2, where cx is x
// clipped to [-1, 1]. With either input exactly zero the two branches see
// bit-identical arguments, so the output is exactly zero.
inline ReluNetwork product_gate_with_depth(int m) {
  if (m < 1) throw PreconditionError("product_gate: m must be at least 1");
  std::vector<Layer> layers;
  {
    SparseMatrix::Builder b(2);
    std::vector<double> bias;
    for (std::size_t in = 0; in < 2; ++in) {
      const double w[4] = {1.0, 1.0, -1.0, -1.0};
      const double off[4] = {0.0, -1.0, 0.0, -1.0};
      for (int u = 0; u < 4; ++u) {
        b.add(in, w[u]);
        b.end_row();
        bias.push_back(off[u]);
      }
    }
    layers.push_back({b.finish(), std::move(bias)});
  }
  {
    const double clip[4] = {0.5, -0.5, -0.5, 0.5};
    SparseMatrix::Builder b(8);
    const double sign_y[2] = {1.0, -1.0};
    for (double sy : sign_y) {
      for (double outer : {1.0, -1.0}) {
        for (int u = 0; u < 4; ++u) b.add(u, outer * clip[u]);
        for (int u = 0; u < 4; ++u) b.add(4 + u, outer * sy * clip[u]);
        b.end_row();
      }
    }
    layers.push_back({b.finish(), std::vector<double>(4, 0.0)});
  }
  detail::append_square_chains(layers, 4, {{{0, 1.0}, {1, 1.0}}, {{2, 1.0}, {3, 1.0}}}, m);
  return ReluNetwork(2, std::move(layers), {1.0, -1.0});
}

// Smallest m whose error bound 4^-(m+1) meets eps.
inline int product_gate_depth_bound(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw PreconditionError("product_gate: eps must lie in (0, 1)");
  int m = 1;
  while (std::pow(4.0, -(m + 1)) > eps) ++m;
  return m;
}

// Sup error of the depth-m gate over the 201 x 201 grid of [-1, 1]^2.
inline double product_gate_grid_error(int m) {
  static std::mutex mutex;
  static std::map<int, double> cache;
  {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(m);
    if (it != cache.end()) return it->second;
  }
  const ReluNetwork gate = product_gate_with_depth(m);
  Workspace ws;
  double worst = 0.0;
  for (int i = 0; i <= 200; ++i) {
    for (int j = 0; j <= 200; ++j) {
      const double x[2] = {-1.0 + i / 100.0, -1.0 + j / 100.0};
      worst = std::max(worst, std::abs(gate.evaluate(x, ws) - x[0] * x[1]));
    }
  }
  std::lock_guard<std::mutex> lock(mutex);
  cache[m] = worst;
  return worst;
}

struct ProductGateChoice {
  int m;
  double grid_error;
};

inline ProductGateChoice choose_product_gate(double eps) {
  int m = product_gate_depth_bound(eps);
  while (product_gate_grid_error(m) > eps) ++m;
  return {m, product_gate_grid_error(m)};
}

inline ReluNetwork product_gate(double eps) { return product_gate_with_depth(choose_product_gate(eps).m); }

// c * gate(u / c, v): accurate to c * eps for |u| <= c, v in [-1, 1].
inline ReluNetwork scaled_product(double c_scale, double eps) {
  if (!(c_scale > 0.0)) throw PreconditionError("scaled_product: c_scale must be positive");
  return scale_output(scale_inputs(product_gate(eps), {1.0 / c_scale, 1.0}), c_scale);
}

}  // namespace relulab
