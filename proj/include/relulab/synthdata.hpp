#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "rng.hpp"
#include "smooth_target.hpp"

namespace relulab {

struct Box {
  std::vector<double> lo, hi;

  double volume() const {
    double v = 1.0;
    for (std::size_t k = 0; k < lo.size(); ++k) v *= hi[k] - lo[k];
    return v;
  }

  bool contains(std::span<const double> x) const {
    for (std::size_t k = 0; k < lo.size(); ++k)
      if (x[k] < lo[k] || x[k] > hi[k]) return false;
    return true;
  }
};

// L-infinity distance between two boxes.
inline double box_gap(const Box& a, const Box& b) {
  double gap = 0.0;
  for (std::size_t k = 0; k < a.lo.size(); ++k) gap = std::max({gap, b.lo[k] - a.hi[k], a.lo[k] - b.hi[k]});
  return gap;
}

// Piecewise-constant density on a union of boxes.
struct BoxDensity {
  std::vector<Box> boxes;
  std::vector<double> values;

  double mass() const {
    double m = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) m += values[i] * boxes[i].volume();
    return m;
  }

  double sup() const { return *std::max_element(values.begin(), values.end()); }

  double inf_positive() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : values)
      if (v > 0.0) m = std::min(m, v);
    return m;
  }

  double at(std::span<const double> x) const {
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (boxes[i].contains(x)) return values[i];
    return 0.0;
  }

  std::vector<double> sample(CounterRng& rng) const {
    double u = rng.uniform() * mass();
    std::size_t pick = boxes.size() - 1;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      u -= values[i] * boxes[i].volume();
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
    const Box& b = boxes[pick];
    std::vector<double> x(b.lo.size());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = rng.uniform(b.lo[k], b.hi[k]);
    return x;
  }

  void validate(std::size_t dim) const {
    if (boxes.empty() || boxes.size() != values.size()) throw InputError("density: one value per box required");
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const Box& b = boxes[i];
      if (b.lo.size() != dim || b.hi.size() != dim) throw InputError("density: box dimension mismatch");
      for (std::size_t k = 0; k < dim; ++k)
        if (!(0.0 <= b.lo[k] && b.lo[k] < b.hi[k] && b.hi[k] <= 1.0))
          throw InputError("density: boxes must be nonempty and inside [0,1]^d");
      if (!(values[i] > 0.0)) throw InputError("density: values must be positive");
      for (std::size_t j = 0; j < i; ++j)
        if (box_gap(boxes[i], boxes[j]) <= 0.0) {
          // touching or overlapping boxes are allowed only if interiors are disjoint
          double overlap = 1.0;
          for (std::size_t k = 0; k < dim; ++k)
            overlap *= std::max(0.0, std::min(boxes[i].hi[k], boxes[j].hi[k]) - std::max(boxes[i].lo[k], boxes[j].lo[k]));
          if (overlap > 0.0) throw InputError("density: boxes overlap");
        }
    }
    if (std::abs(mass() - 1.0) > 1e-9) throw InputError("density: total mass is " + std::to_string(mass()) + ", not 1");
  }
};

struct ClassificationSpec {
  std::size_t dim = 1;
  std::vector<Box> region_a, region_b;
  BoxDensity density;  // boxes of A followed by boxes of B
  // eta = step(x[axis]) with step = eta_a up to start, eta_b from stop on.
  std::size_t eta_axis = 0;
  CosineStep eta{0.9, 0.1, 0.4, 0.6};
  double zeta = 0.3;
  int alpha = 2;
  double delta_max = 0.05;

  double eta_at(std::span<const double> x) const { return eta(x[eta_axis]); }

  // 2 eta - 1, the regression function of the +-1 labels
  SmoothTarget regression_function() const { return ridge_step_target(dim, eta_axis, eta, 2.0, -1.0); }

  void validate() const {
    if (dim < 1) throw InputError("classification spec: dim must be positive");
    density.validate(dim);
    if (density.boxes.size() != region_a.size() + region_b.size())
      throw InputError("classification spec: density boxes must be region_a then region_b");
    if (eta_axis >= dim) throw InputError("classification spec: eta axis out of range");
    if (!(zeta > 0.0 && zeta < 0.5)) throw InputError("classification spec: zeta must lie in (0, 0.5)");
    if (!(eta.low >= 0.0 && eta.low <= 1.0 && eta.high >= 0.0 && eta.high <= 1.0))
      throw InputError("classification spec: eta must take values in [0, 1]");
    for (const auto& a : region_a) {
      if (a.hi[eta_axis] > eta.start) throw InputError("classification spec: region A must lie where eta is flat (low side)");
      if (!(std::abs(eta.low - 0.5) > zeta)) throw InputError("classification spec: |eta - 0.5| <= zeta on A");
    }
    for (const auto& b : region_b) {
      if (b.lo[eta_axis] < eta.stop) throw InputError("classification spec: region B must lie where eta is flat (high side)");
      if (!(std::abs(eta.high - 0.5) > zeta)) throw InputError("classification spec: |eta - 0.5| <= zeta on B");
    }
    for (const auto& a : region_a)
      for (const auto& b : region_b)
        if (box_gap(a, b) < 2.0 * delta_max - 1e-12) throw InputError("classification spec: class gap below 2 delta_max");
  }
};

struct RegressionSpec {
  SmoothTarget target;
  double noise_sigma = 0.1;
  double output_bound = 1.0;
  BoxDensity density;
  double target_sup = 0.0;  // upper bound on sup |f_rho| over the support
  double target_sup_slack = 0.0;

  std::size_t dim() const { return target.dim; }

  // Noise is truncated to [-c, c] with c = M - sup|f_rho|.
  double noise_bound() const { return output_bound - target_sup; }

  double effective_variance() const {
    if (noise_sigma == 0.0) return 0.0;
    const double k = noise_bound() / noise_sigma;
    const double pdf = std::exp(-0.5 * k * k) / std::sqrt(2.0 * std::numbers::pi);
    const double mass = std::erf(k / std::numbers::sqrt2);  // 2 Phi(k) - 1
    return noise_sigma * noise_sigma * (1.0 - 2.0 * k * pdf / mass);
  }

  void validate() const {
    density.validate(target.dim);
    if (!(noise_sigma >= 0.0)) throw InputError("regression spec: sigma must be nonnegative");
    if (!(noise_bound() > 0.0) && noise_sigma > 0.0)
      throw InputError("regression spec: output bound leaves no room for noise");
    if (noise_bound() < 0.0) throw InputError("regression spec: |f_rho| exceeds the output bound");
  }
};

// sup |f| over a grid refined near the support; used for the truncation level.
// Grid maximum plus a Lipschitz allowance for the gaps between grid points.
inline double measured_sup(const SmoothTarget& t, const BoxDensity& density, double* slack = nullptr,
                           std::size_t total_points = 200000) {
  double worst = 0.0, gap = 0.0;
  for (const auto& b : density.boxes) {
    std::size_t per = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(total_points), 1.0 / t.dim)));
    per = std::max<std::size_t>(per, 2);
    std::size_t total = 1;
    for (std::size_t k = 0; k < t.dim; ++k) total *= per;
    std::vector<double> x(t.dim);
    double box_gap_sum = 0.0;
    for (std::size_t k = 0; k < t.dim; ++k) box_gap_sum += 0.5 * (b.hi[k] - b.lo[k]) / static_cast<double>(per - 1);
    gap = std::max(gap, box_gap_sum);
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t r = i;
      for (std::size_t k = 0; k < t.dim; ++k) {
        x[k] = b.lo[k] + (b.hi[k] - b.lo[k]) * static_cast<double>(r % per) / static_cast<double>(per - 1);
        r /= per;
      }
      worst = std::max(worst, std::abs(t(x)));
    }
  }
  const double allowance = std::min(t.norm_bound * gap, std::max(0.0, t.norm_bound - worst));
  if (slack) *slack = allowance;
  return worst + allowance;
}

inline RegressionSpec make_regression_spec(SmoothTarget target, double sigma, double output_bound, BoxDensity density) {
  RegressionSpec s{std::move(target), sigma, output_bound, std::move(density), 0.0, 0.0};
  s.target_sup = measured_sup(s.target, s.density, &s.target_sup_slack);
  s.validate();
  return s;
}

inline BoxDensity uniform_unit_cube(std::size_t dim) {
  return {{Box{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)}}, {1.0}};
}

// A = {x_0 <= 0.4}, B = {x_0 >= 0.6}, uniform density 1.25 on A u B,
// eta = 0.9 on A and 0.1 on B with a half-cosine transition in the gap.
inline ClassificationSpec two_region_spec(std::size_t dim, double eta_a = 0.9, double eta_b = 0.1) {
  ClassificationSpec s;
  s.dim = dim;
  Box a{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  Box b = a;
  a.hi[0] = 0.4;
  b.lo[0] = 0.6;
  s.region_a = {a};
  s.region_b = {b};
  s.density = {{a, b}, {1.25, 1.25}};
  s.eta = CosineStep{eta_a, eta_b, 0.4, 0.6};
  s.zeta = std::min(std::abs(eta_a - 0.5), std::abs(eta_b - 0.5)) - 0.1;
  s.alpha = 2;
  s.delta_max = 0.1;
  s.validate();
  return s;
}

struct Dataset {
  std::size_t dim = 1;
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  std::uint64_t seed = 0;

  std::size_t size() const { return xs.size(); }
};

struct SampleStats {
  double q_x = 0.0;
  std::size_t n = 0;
  std::size_t d = 0;
};

inline Dataset sample_classification(const ClassificationSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InputError("sample_classification: n must be >= 1");
  Dataset ds{spec.dim, {}, {}, seed};
  ds.xs.reserve(n);
  ds.ys.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(seed, i);
    auto x = spec.density.sample(rng);
    const double eta = spec.eta_at(x);
    ds.ys.push_back(rng.uniform() < eta ? 1.0 : -1.0);
    ds.xs.push_back(std::move(x));
  }
  return ds;
}

inline double truncated_normal(CounterRng& rng, double sigma, double bound) {
  if (sigma == 0.0) return 0.0;
  for (;;) {
    double e = sigma * rng.normal();
    if (std::abs(e) <= bound) return e;
  }
}

inline Dataset sample_regression(const RegressionSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InputError("sample_regression: n must be >= 1");
  Dataset ds{spec.dim(), {}, {}, seed};
  ds.xs.reserve(n);
  ds.ys.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(seed, i);
    auto x = spec.density.sample(rng);
    ds.ys.push_back(spec.target(x) + truncated_normal(rng, spec.noise_sigma, spec.noise_bound()));
    ds.xs.push_back(std::move(x));
  }
  return ds;
}

// Half the minimal pairwise L-infinity distance.
inline double separation(const std::vector<std::vector<double>>& xs) {
  if (xs.size() < 2) throw InputError("separation: need at least two points");
  const std::size_t d = xs.front().size();
  double best = std::numeric_limits<double>::infinity();
  if (d == 1) {
    std::vector<double> v;
    v.reserve(xs.size());
    for (const auto& x : xs) v.push_back(x[0]);
    std::sort(v.begin(), v.end());
    for (std::size_t i = 1; i < v.size(); ++i) best = std::min(best, v[i] - v[i - 1]);
    return 0.5 * best;
  }
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) dist = std::max(dist, std::abs(xs[i][k] - xs[j][k]));
      best = std::min(best, dist);
    }
  return 0.5 * best;
}

inline SampleStats sample_stats(const Dataset& ds) { return {separation(ds.xs), ds.size(), ds.dim}; }

inline double admissible_delta(double q_x, double user_cap,
                               double delta_max = std::numeric_limits<double>::infinity()) {
  if (!(q_x > 0.0)) throw PreconditionError("admissible_delta: q_X must be positive (duplicate inputs?)");
  double delta = std::min({user_cap, 0.9 * q_x / 3.0, delta_max});
  if (!(delta > 0.0)) throw PreconditionError("admissible_delta: resulting delta is not positive");
  return delta;
}

struct BayesQuantities {
  double bayes_risk;
  double j_norm;
  double jbar_norm;
};

inline BayesQuantities bayes_quantities(const ClassificationSpec& spec) {
  double risk = 0.0;
  for (std::size_t i = 0; i < spec.density.boxes.size(); ++i) {
    const bool in_a = i < spec.region_a.size();
    const double eta = in_a ? spec.eta.low : spec.eta.high;
    risk += spec.density.values[i] * spec.density.boxes[i].volume() * std::min(eta, 1.0 - eta);
  }
  return {risk, spec.density.sup(), 1.0 / spec.density.inf_positive()};
}

inline void write_csv(std::ostream& out, const Dataset& ds) {
  for (std::size_t k = 0; k < ds.dim; ++k) out << "x" << k << ",";
  out << "y\n";
  std::ostringstream line;
  line.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    line.str("");
    for (double v : ds.xs[i]) line << v << ",";
    line << ds.ys[i] << "\n";
    out << line.str();
  }
}

namespace detail {

inline Box box_from_json(const nlohmann::json& j) {
  return {j.at("lo").get<std::vector<double>>(), j.at("hi").get<std::vector<double>>()};
}

inline nlohmann::json box_to_json(const Box& b, double density) {
  return {{"lo", b.lo}, {"hi", b.hi}, {"density", density}};
}

}  // namespace detail

inline ClassificationSpec classification_spec_from_json(const nlohmann::json& j) {
  ClassificationSpec s;
  s.dim = j.at("dim").get<std::size_t>();
  for (const auto& b : j.at("region_a")) {
    s.region_a.push_back(detail::box_from_json(b));
    s.density.boxes.push_back(s.region_a.back());
    s.density.values.push_back(b.at("density").get<double>());
  }
  for (const auto& b : j.value("region_b", nlohmann::json::array())) {
    s.region_b.push_back(detail::box_from_json(b));
    s.density.boxes.push_back(s.region_b.back());
    s.density.values.push_back(b.at("density").get<double>());
  }
  const auto& e = j.at("eta");
  s.eta_axis = e.value("axis", std::size_t{0});
  s.eta = CosineStep{e.at("on_a").get<double>(), e.at("on_b").get<double>(), e.at("start").get<double>(),
                     e.at("stop").get<double>()};
  s.zeta = j.at("zeta").get<double>();
  s.alpha = j.value("alpha", 2);
  s.delta_max = j.value("delta_max", 0.05);
  s.validate();
  return s;
}

inline nlohmann::json to_json(const ClassificationSpec& s) {
  nlohmann::json a = nlohmann::json::array(), b = nlohmann::json::array();
  for (std::size_t i = 0; i < s.region_a.size(); ++i) a.push_back(detail::box_to_json(s.region_a[i], s.density.values[i]));
  for (std::size_t i = 0; i < s.region_b.size(); ++i)
    b.push_back(detail::box_to_json(s.region_b[i], s.density.values[s.region_a.size() + i]));
  return {{"kind", "classification"},
          {"dim", s.dim},
          {"region_a", a},
          {"region_b", b},
          {"eta", {{"axis", s.eta_axis}, {"on_a", s.eta.low}, {"on_b", s.eta.high}, {"start", s.eta.start}, {"stop", s.eta.stop}}},
          {"zeta", s.zeta},
          {"alpha", s.alpha},
          {"delta_max", s.delta_max}};
}

inline RegressionSpec regression_spec_from_json(const nlohmann::json& j) {
  BoxDensity density;
  for (const auto& b : j.at("support")) {
    density.boxes.push_back(detail::box_from_json(b));
    density.values.push_back(b.at("density").get<double>());
  }
  return make_regression_spec(target_from_json(j.at("target")), j.at("noise_sigma").get<double>(),
                              j.at("output_bound").get<double>(), std::move(density));
}

inline nlohmann::json to_json(const RegressionSpec& s) {
  nlohmann::json sup = nlohmann::json::array();
  for (std::size_t i = 0; i < s.density.boxes.size(); ++i) sup.push_back(detail::box_to_json(s.density.boxes[i], s.density.values[i]));
  return {{"kind", "regression"},
          {"target", s.target.description},
          {"noise_sigma", s.noise_sigma},
          {"output_bound", s.output_bound},
          {"support", sup}};
}

}  // namespace relulab
