#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"

namespace relulab {

struct AffineForm {
  std::vector<double> weights;
  double offset = 0.0;
};

// A synthetic target with exact values and exact partial derivatives.
struct SmoothTarget {
  std::size_t dim = 1;
  int alpha = 1;
  double norm_bound = 1.0;
  std::function<double(std::span<const double>)> value;
  // order[k] = derivative order along coordinate k
  std::function<double(const std::vector<int>&, std::span<const double>)> partial;
  std::optional<AffineForm> affine;
  nlohmann::json description;

  double operator()(std::span<const double> x) const { return value(x); }

  std::vector<double> gradient(std::span<const double> x) const {
    std::vector<double> g(dim);
    std::vector<int> order(dim, 0);
    for (std::size_t k = 0; k < dim; ++k) {
      order[k] = 1;
      g[k] = partial(order, x);
      order[k] = 0;
    }
    return g;
  }
};

inline int total_order(const std::vector<int>& order) {
  int s = 0;
  for (int o : order) s += o;
  return s;
}

inline SmoothTarget affine_target(std::vector<double> w, double b) {
  if (w.empty()) throw InputError("affine target needs a dimension");
  SmoothTarget t;
  t.dim = w.size();
  t.alpha = 2;
  double bound = std::abs(b);
  for (double v : w) bound += std::abs(v);
  t.norm_bound = bound;
  t.value = [w, b](std::span<const double> x) {
    double s = b;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * x[k];
    return s;
  };
  t.partial = [w, b](const std::vector<int>& order, std::span<const double> x) {
    int total = total_order(order);
    if (total == 0) {
      double s = b;
      for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * x[k];
      return s;
    }
    if (total > 1) return 0.0;
    for (std::size_t k = 0; k < order.size(); ++k)
      if (order[k] == 1) return w[k];
    return 0.0;
  };
  t.affine = AffineForm{w, b};
  t.description = {{"family", "affine"}, {"weights", w}, {"offset", b}};
  return t;
}

inline SmoothTarget constant_target(std::size_t dim, double c) {
  auto t = affine_target(std::vector<double>(dim, 0.0), c);
  t.description = {{"family", "constant"}, {"dim", dim}, {"value", c}};
  return t;
}

// amplitude * sin(2 pi freq.x + phase)
inline SmoothTarget sine_target(double amplitude, std::vector<double> freq, double phase, int alpha) {
  if (freq.empty()) throw InputError("sine target needs a dimension");
  if (alpha < 1) throw InputError("sine target: alpha must be >= 1");
  SmoothTarget t;
  t.dim = freq.size();
  t.alpha = alpha;
  double fmax = 0.0;
  for (double w : freq) fmax = std::max(fmax, std::abs(w));
  double bound = 0.0;
  for (int j = 0; j <= alpha; ++j) bound = std::max(bound, std::abs(amplitude) * std::pow(2.0 * std::numbers::pi * fmax, j));
  t.norm_bound = bound;
  auto arg = [freq, phase](std::span<const double> x) {
    double s = phase;
    for (std::size_t k = 0; k < freq.size(); ++k) s += 2.0 * std::numbers::pi * freq[k] * x[k];
    return s;
  };
  t.value = [amplitude, arg](std::span<const double> x) { return amplitude * std::sin(arg(x)); };
  t.partial = [amplitude, freq, arg](const std::vector<int>& order, std::span<const double> x) {
    double scale = amplitude;
    int total = 0;
    for (std::size_t k = 0; k < freq.size(); ++k) {
      scale *= std::pow(2.0 * std::numbers::pi * freq[k], order[k]);
      total += order[k];
    }
    return scale * std::sin(arg(x) + total * std::numbers::pi / 2.0);
  };
  t.description = {{"family", "sine"}, {"amplitude", amplitude}, {"frequency", freq}, {"phase", phase}, {"alpha", alpha}};
  return t;
}

// One-dimensional profile: low for t <= start, high for t >= stop, joined by a
// half cosine. C^1 with bounded second derivative.
struct CosineStep {
  double low = 0.0;
  double high = 1.0;
  double start = 0.4;
  double stop = 0.6;

  double derivative(int order, double t) const {
    if (t <= start) return order == 0 ? low : 0.0;
    if (t >= stop) return order == 0 ? high : 0.0;
    const double w = stop - start;
    const double s = (t - start) / w;
    if (order == 0) return low + (high - low) * 0.5 * (1.0 - std::cos(std::numbers::pi * s));
    return -(high - low) * 0.5 * std::pow(std::numbers::pi / w, order) *
           std::cos(std::numbers::pi * s + order * std::numbers::pi / 2.0);
  }

  double operator()(double t) const { return derivative(0, t); }
};

// scale * step(x[axis]) + shift
inline SmoothTarget ridge_step_target(std::size_t dim, std::size_t axis, CosineStep step, double scale, double shift) {
  if (axis >= dim) throw InputError("ridge target: axis out of range");
  if (!(step.start < step.stop)) throw InputError("ridge target: step needs start < stop");
  SmoothTarget t;
  t.dim = dim;
  t.alpha = 2;
  const double w = step.stop - step.start;
  const double jump = std::abs(scale * (step.high - step.low));
  t.norm_bound = std::max({std::abs(scale * step.low + shift), std::abs(scale * step.high + shift),
                           jump * 0.5 * std::numbers::pi / w, jump * 0.5 * std::pow(std::numbers::pi / w, 2)});
  t.value = [=](std::span<const double> x) { return scale * step(x[axis]) + shift; };
  t.partial = [=](const std::vector<int>& order, std::span<const double> x) {
    for (std::size_t k = 0; k < order.size(); ++k)
      if (k != axis && order[k] != 0) return 0.0;
    int o = order[axis];
    return o == 0 ? scale * step(x[axis]) + shift : scale * step.derivative(o, x[axis]);
  };
  t.description = {{"family", "ridge_step"}, {"dim", dim},    {"axis", axis},   {"low", step.low},
                   {"high", step.high},      {"start", step.start}, {"stop", step.stop}, {"scale", scale},
                   {"shift", shift}};
  return t;
}

inline SmoothTarget target_from_json(const nlohmann::json& j) {
  const std::string family = j.value("family", "");
  if (family == "constant") return constant_target(j.at("dim").get<std::size_t>(), j.at("value").get<double>());
  if (family == "affine") return affine_target(j.at("weights").get<std::vector<double>>(), j.value("offset", 0.0));
  if (family == "sine")
    return sine_target(j.at("amplitude").get<double>(), j.at("frequency").get<std::vector<double>>(),
                       j.value("phase", 0.0), j.value("alpha", 2));
  if (family == "ridge_step") {
    CosineStep s{j.at("low").get<double>(), j.at("high").get<double>(), j.at("start").get<double>(),
                 j.at("stop").get<double>()};
    return ridge_step_target(j.at("dim").get<std::size_t>(), j.value("axis", std::size_t{0}), s,
                             j.value("scale", 1.0), j.value("shift", 0.0));
  }
  throw InputError("unknown target family '" + family + "'");
}

}  // namespace relulab
