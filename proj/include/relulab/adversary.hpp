#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "pwl1d.hpp"
#include "relunet.hpp"
#include "rng.hpp"
#include "synthdata.hpp"

namespace relulab {

enum class LossKind { hinge, logistic, squared, zero_one };

inline LossKind loss_from_string(const std::string& s) {
  if (s == "hinge") return LossKind::hinge;
  if (s == "logistic") return LossKind::logistic;
  if (s == "squared") return LossKind::squared;
  if (s == "zero_one" || s == "zero-one") return LossKind::zero_one;
  throw InputError("unknown loss '" + s + "'");
}

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::hinge: return "hinge";
    case LossKind::logistic: return "logistic";
    case LossKind::squared: return "squared";
    case LossKind::zero_one: return "zero_one";
  }
  return "?";
}

// sgn(0) is taken as +1.
inline double predicted_label(double f) { return f >= 0.0 ? 1.0 : -1.0; }

inline double loss_value(LossKind k, double f, double y) {
  switch (k) {
    case LossKind::hinge: return std::max(1.0 - y * f, 0.0);
    case LossKind::logistic: {
      const double t = y * f;
      return std::max(-t, 0.0) + std::log1p(std::exp(-std::abs(t)));
    }
    case LossKind::squared: return (f - y) * (f - y);
    case LossKind::zero_one: return predicted_label(f) != y ? 1.0 : 0.0;
  }
  return 0.0;
}

// Max of the loss over f values in [fmin, fmax]; every loss here is either
// monotone in y f or convex in f.
inline double loss_over_range(LossKind k, double fmin, double fmax, double y, bool* at_max = nullptr) {
  double a = loss_value(k, fmin, y), b = loss_value(k, fmax, y);
  if (at_max) *at_max = b > a;
  return std::max(a, b);
}

enum class AttackMode { exhaustive, heuristic };

struct AttackConfig {
  std::size_t grid_per_dim = 9;
  int random_restarts = 4;
  int coord_ascent_iters = 50;
  AttackMode mode = AttackMode::exhaustive;
  std::uint64_t seed = 1;

  void validate(std::size_t dim) const {
    if (mode == AttackMode::exhaustive) {
      if (dim > 3) throw InputError("attack: exhaustive mode supports d <= 3, use heuristic mode");
      if (grid_per_dim < 3) throw InputError("attack: grid_per_dim must be >= 3");
    }
    if (random_restarts < 0 || coord_ascent_iters < 0) throw InputError("attack: negative iteration counts");
  }
};

struct BallMaxResult {
  double value = 0.0;
  std::vector<double> witness;
  bool lower_bound = true;  // false when the maximization is exact
};

namespace detail {

inline std::uint64_t point_hash(std::span<const double> x, std::uint64_t seed) {
  std::uint64_t h = mix64(seed);
  for (double v : x) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

struct ClippedBall {
  std::vector<double> lo, hi;

  ClippedBall(std::span<const double> x, double delta) : lo(x.begin(), x.end()), hi(x.begin(), x.end()) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      lo[k] = std::max(0.0, x[k] - delta);
      hi[k] = std::min(1.0, x[k] + delta);
    }
  }
};

// Maximizes obj over the clipped ball: the center, a grid (exhaustive) or
// random corners and points (heuristic), then coordinate ascent with step
// ladder delta / 2^k from the best point and from random restarts.
template <class Obj>
BallMaxResult maximize_over_ball(Obj&& obj, std::span<const double> x, double delta, const AttackConfig& cfg,
                                 double stop_at = std::numeric_limits<double>::infinity()) {
  const std::size_t d = x.size();
  cfg.validate(d);
  BallMaxResult best{obj(x), std::vector<double>(x.begin(), x.end()), true};
  if (delta == 0.0) {
    best.lower_bound = false;
    return best;
  }
  auto consider = [&](const std::vector<double>& p) {
    double v = obj(p);
    if (v > best.value) {
      best.value = v;
      best.witness = p;
    }
    return best.value >= stop_at;
  };
  ClippedBall ball(x, delta);
  CounterRng rng(point_hash(x, cfg.seed), 0);
  std::vector<double> p(d);
  if (cfg.mode == AttackMode::exhaustive) {
    const std::size_t g = cfg.grid_per_dim;
    std::size_t total = 1;
    for (std::size_t k = 0; k < d; ++k) total *= g;
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t r = i;
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t idx = r % g;
        r /= g;
        p[k] = idx == g - 1 ? ball.hi[k] : ball.lo[k] + (ball.hi[k] - ball.lo[k]) * static_cast<double>(idx) / (g - 1);
      }
      if (consider(p)) return best;
    }
  } else {
    const std::size_t samples = std::max<std::size_t>(cfg.grid_per_dim * cfg.grid_per_dim, 16);
    for (std::size_t i = 0; i < samples; ++i) {
      const bool corner = i % 2 == 0;
      for (std::size_t k = 0; k < d; ++k)
        p[k] = corner ? (rng.uniform() < 0.5 ? ball.lo[k] : ball.hi[k]) : rng.uniform(ball.lo[k], ball.hi[k]);
      if (consider(p)) return best;
    }
  }
  for (int restart = 0; restart <= cfg.random_restarts; ++restart) {
    std::vector<double> cur = best.witness;
    if (restart > 0)
      for (std::size_t k = 0; k < d; ++k) cur[k] = rng.uniform(ball.lo[k], ball.hi[k]);
    double val = obj(cur);
    double step = delta;
    for (int it = 0; it < cfg.coord_ascent_iters; ++it) {
      bool improved = false;
      for (std::size_t k = 0; k < d; ++k)
        for (double s : {step, -step}) {
          std::vector<double> cand = cur;
          cand[k] = std::clamp(cur[k] + s, ball.lo[k], ball.hi[k]);
          double v = obj(cand);
          if (v > val) {
            val = v;
            cur = std::move(cand);
            improved = true;
          }
        }
      if (!improved) step *= 0.5;
    }
    if (val > best.value) {
      best.value = val;
      best.witness = cur;
    }
    if (best.value >= stop_at) return best;
  }
  return best;
}

}  // namespace detail

// Inner maximization of the loss over the L-infinity ball of radius delta
// around x, intersected with [0, 1]^d. The value is attained at the witness.
inline BallMaxResult ball_max_loss(const ReluNetwork& net, std::span<const double> x, double y, double delta,
                                   LossKind loss, const AttackConfig& cfg = {}) {
  if (x.size() != net.input_dim()) throw InputError("ball_max_loss: point has wrong dimension");
  if (!(delta >= 0.0)) throw InputError("ball_max_loss: delta must be nonnegative");
  Workspace ws;
  auto obj = [&](std::span<const double> p) { return loss_value(loss, net.evaluate(p, ws), y); };
  const double stop = loss == LossKind::zero_one ? 1.0 : std::numeric_limits<double>::infinity();
  return detail::maximize_over_ball(obj, x, delta, cfg, stop);
}

// d = 1: the extremes of f over the ball come from the knot form; the loss is
// re-evaluated through the network at the center and both extreme points.
inline BallMaxResult ball_max_loss_exact(const ReluNetwork& net, const PiecewiseLinear1D& pwl, double x, double y,
                                         double delta, LossKind loss) {
  auto e = pwl.ball_range(x, delta);
  BallMaxResult best{loss_value(loss, net.evaluate(std::vector<double>{x}), y), {x}, false};
  for (double p : {e.argmin, e.argmax}) {
    double v = loss_value(loss, net.evaluate(std::vector<double>{p}), y);
    if (v > best.value) {
      best.value = v;
      best.witness = {p};
    }
  }
  return best;
}

struct EmpiricalRisk {
  double value = 0.0;
  bool lower_bound = true;
  std::vector<BallMaxResult> per_sample;
};

inline EmpiricalRisk empirical_adv_risk(const ReluNetwork& net, const Dataset& ds, double delta, LossKind loss,
                                        const AttackConfig& cfg = {}, unsigned threads = 1) {
  if (ds.size() == 0) throw InputError("empirical_adv_risk: empty dataset");
  EmpiricalRisk r;
  r.per_sample.resize(ds.size());
  std::optional<PiecewiseLinear1D> pwl;
  if (ds.dim == 1 && delta > 0.0) pwl.emplace(PiecewiseLinear1D::from_network(net, 0.0, 1.0));
  // exact path available: the grid is only a cross-check
  AttackConfig grid_only = cfg;
  grid_only.coord_ascent_iters = 0;
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    if (pwl) {
      auto a = ball_max_loss(net, ds.xs[i], ds.ys[i], delta, loss, grid_only);
      auto b = ball_max_loss_exact(net, *pwl, ds.xs[i][0], ds.ys[i], delta, loss);
      r.per_sample[i] = b.value >= a.value ? b : a;
      r.per_sample[i].lower_bound = false;
    } else {
      r.per_sample[i] = ball_max_loss(net, ds.xs[i], ds.ys[i], delta, loss, cfg);
    }
  });
  r.lower_bound = false;
  for (const auto& s : r.per_sample) {
    r.value += s.value;
    r.lower_bound = r.lower_bound || s.lower_bound;
  }
  r.value /= static_cast<double>(ds.size());
  return r;
}

inline void write_attack_trace(std::ostream& out, const EmpiricalRisk& r) {
  out << "index,";
  const std::size_t d = r.per_sample.empty() ? 0 : r.per_sample.front().witness.size();
  for (std::size_t k = 0; k < d; ++k) out << "w" << k << ",";
  out << "value\n";
  out.precision(17);
  for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
    out << i << ",";
    for (double v : r.per_sample[i].witness) out << v << ",";
    out << r.per_sample[i].value << "\n";
  }
}

// ---------------------------------------------------------------------------
// Range oracles: value of f at x and its extremes over the clipped ball.

struct BallRange {
  double min;
  double max;
};

class RangeOracle {
 public:
  virtual ~RangeOracle() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(std::span<const double> x) const = 0;
  // Must include the value at x itself.
  virtual BallRange ball_range(std::span<const double> x, double delta) const = 0;
  virtual bool exact() const = 0;
};

// Exact for one-dimensional networks.
class PwlRangeOracle final : public RangeOracle {
 public:
  explicit PwlRangeOracle(const ReluNetwork& net) : pwl_(PiecewiseLinear1D::from_network(net, 0.0, 1.0)) {}
  explicit PwlRangeOracle(PiecewiseLinear1D pwl) : pwl_(std::move(pwl)) {}

  std::size_t dim() const override { return 1; }
  double value(std::span<const double> x) const override { return pwl_.value(x[0]); }
  BallRange ball_range(std::span<const double> x, double delta) const override {
    auto e = pwl_.ball_range(x[0], delta);
    return {e.min, e.max};
  }
  bool exact() const override { return true; }
  const PiecewiseLinear1D& pwl() const { return pwl_; }

 private:
  PiecewiseLinear1D pwl_;
};

// Attack-based: the range is an inner approximation.
class AttackRangeOracle final : public RangeOracle {
 public:
  AttackRangeOracle(const ReluNetwork& net, AttackConfig cfg) : net_(net), cfg_(cfg) { cfg_.validate(net.input_dim()); }

  std::size_t dim() const override { return net_.input_dim(); }
  double value(std::span<const double> x) const override { return net_.evaluate(x); }
  BallRange ball_range(std::span<const double> x, double delta) const override {
    Workspace ws;
    auto hi = detail::maximize_over_ball([&](std::span<const double> p) { return net_.evaluate(p, ws); }, x, delta, cfg_);
    auto lo = detail::maximize_over_ball([&](std::span<const double> p) { return -net_.evaluate(p, ws); }, x, delta, cfg_);
    return {-lo.value, hi.value};
  }
  bool exact() const override { return false; }

 private:
  const ReluNetwork& net_;
  AttackConfig cfg_;
};

// A plain function sampled on a grid over the clipped ball (endpoints and
// center included). Marked exact only when the caller knows the grid catches
// the extremes, e.g. for functions monotone in each coordinate.
class FunctionRangeOracle final : public RangeOracle {
 public:
  FunctionRangeOracle(std::size_t dim, std::function<double(std::span<const double>)> f, std::size_t per_dim = 33,
                      bool exact = false)
      : dim_(dim), f_(std::move(f)), per_dim_(std::max<std::size_t>(per_dim, 2)), exact_(exact) {}

  std::size_t dim() const override { return dim_; }
  double value(std::span<const double> x) const override { return f_(x); }
  BallRange ball_range(std::span<const double> x, double delta) const override {
    const double v = f_(x);
    BallRange r{v, v};
    if (delta == 0.0) return r;
    detail::ClippedBall ball(x, delta);
    std::size_t total = 1;
    for (std::size_t k = 0; k < dim_; ++k) total *= per_dim_;
    std::vector<double> p(dim_);
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t rem = i;
      for (std::size_t k = 0; k < dim_; ++k) {
        const std::size_t idx = rem % per_dim_;
        rem /= per_dim_;
        p[k] = idx == per_dim_ - 1 ? ball.hi[k]
                                   : ball.lo[k] + (ball.hi[k] - ball.lo[k]) * static_cast<double>(idx) / (per_dim_ - 1);
      }
      const double w = f_(p);
      r.min = std::min(r.min, w);
      r.max = std::max(r.max, w);
    }
    return r;
  }
  bool exact() const override { return exact_; }

 private:
  std::size_t dim_;
  std::function<double(std::span<const double>)> f_;
  std::size_t per_dim_;
  bool exact_;
};

inline std::unique_ptr<RangeOracle> make_network_oracle(const ReluNetwork& net, const AttackConfig& cfg = {}) {
  if (net.input_dim() == 1) return std::make_unique<PwlRangeOracle>(net);
  return std::make_unique<AttackRangeOracle>(net, cfg);
}

// ---------------------------------------------------------------------------
// Monte-Carlo population risks.

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;

  nlohmann::json to_json() const { return {{"estimate", estimate}, {"std_error", std_error}}; }
};

inline McEstimate mean_and_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0};
}

struct PairedRisk {
  McEstimate standard;
  McEstimate robust;
  McEstimate gap;  // robust - standard on the same draws
  bool dominated = true;  // robust >= standard held at every draw
  std::string bias_note;
  std::size_t samples = 0;
};

namespace detail {

inline void check_mc(std::size_t m, std::size_t oracle_dim, std::size_t spec_dim, double delta) {
  if (m < 1000) throw InputError("Monte-Carlo estimate needs m >= 1000");
  if (oracle_dim != spec_dim) throw InputError("Monte-Carlo estimate: dimension mismatch");
  if (!(delta >= 0.0)) throw InputError("Monte-Carlo estimate: delta must be nonnegative");
}

inline std::string note_for(const RangeOracle& f) {
  return f.exact() ? "exact ball extremes" : "attack-based inner maximum (lower-bound estimate)";
}

}  // namespace detail

// Zero-one risks with the labels integrated out analytically:
//   standard  eta 1[f < 0] + (1 - eta) 1[f >= 0]
//   robust    eta 1[min f < 0] + (1 - eta) 1[max f >= 0]
inline PairedRisk mc_classification_risks(const RangeOracle& f, const ClassificationSpec& spec, double delta,
                                          std::size_t m, std::uint64_t seed, unsigned threads = 1) {
  detail::check_mc(m, f.dim(), spec.dim, delta);
  std::vector<double> std_v(m), rob_v(m), gap_v(m);
  parallel_for(m, threads, [&](std::size_t i) {
    CounterRng rng(seed, i);
    auto x = spec.density.sample(rng);
    const double eta = spec.eta_at(x);
    const auto r = f.ball_range(x, delta);
    const double v = f.value(x);
    std_v[i] = v < 0.0 ? eta : 1.0 - eta;
    rob_v[i] = (r.min < 0.0 ? eta : 0.0) + (r.max >= 0.0 ? 1.0 - eta : 0.0);
    gap_v[i] = rob_v[i] - std_v[i];
  });
  PairedRisk out{mean_and_se(std_v), mean_and_se(rob_v), mean_and_se(gap_v), true, detail::note_for(f), m};
  for (double g : gap_v) out.dominated = out.dominated && g >= 0.0;
  return out;
}

inline McEstimate mc_standard_risk(const RangeOracle& f, const ClassificationSpec& spec, std::size_t m,
                                   std::uint64_t seed, unsigned threads = 1) {
  return mc_classification_risks(f, spec, 0.0, m, seed, threads).standard;
}

inline PairedRisk mc_adv_risk(const RangeOracle& f, const ClassificationSpec& spec, double delta, std::size_t m,
                              std::uint64_t seed, unsigned threads = 1) {
  return mc_classification_risks(f, spec, delta, m, seed, threads);
}

struct RegressionRisks {
  McEstimate standard;  // E(f) with sampled noise
  McEstimate robust;    // E^delta(f)
  McEstimate gap;
  bool dominated = true;
  McEstimate excess_standard;      // mean (f - f_rho)^2
  McEstimate robust_excess_upper;  // E^delta(f) - sigma_eff^2, control variate (y - f_rho)^2
  McEstimate robust_excess_lower;  // E^delta(f) - E^delta(f_rho), paired
  std::string bias_note;
  std::size_t samples = 0;
};

inline RegressionRisks mc_regression_risks(const RangeOracle& f, const RangeOracle& f_rho, const RegressionSpec& spec,
                                           double delta, std::size_t m, std::uint64_t seed, unsigned threads = 1) {
  detail::check_mc(m, f.dim(), spec.dim(), delta);
  std::vector<double> st(m), rob(m), gap(m), ex(m), up(m), lo(m);
  parallel_for(m, threads, [&](std::size_t i) {
    CounterRng rng(seed, i);
    auto x = spec.density.sample(rng);
    const double truth = spec.target(x);
    const double y = truth + truncated_normal(rng, spec.noise_sigma, spec.noise_bound());
    const double v = f.value(x);
    const auto r = f.ball_range(x, delta);
    const auto rt = f_rho.ball_range(x, delta);
    st[i] = (v - y) * (v - y);
    rob[i] = loss_over_range(LossKind::squared, r.min, r.max, y);
    gap[i] = rob[i] - st[i];
    ex[i] = (v - truth) * (v - truth);
    up[i] = rob[i] - (y - truth) * (y - truth);
    lo[i] = rob[i] - loss_over_range(LossKind::squared, rt.min, rt.max, y);
  });
  RegressionRisks out{mean_and_se(st), mean_and_se(rob), mean_and_se(gap), true,
                      mean_and_se(ex), mean_and_se(up), mean_and_se(lo), detail::note_for(f), m};
  for (double g : gap) out.dominated = out.dominated && g >= 0.0;
  if (!f_rho.exact()) out.bias_note += "; robust risk of f_rho from sampling";
  return out;
}

inline McEstimate mc_standard_risk(const RangeOracle& f, const RegressionSpec& spec, std::size_t m, std::uint64_t seed,
                                   unsigned threads = 1) {
  FunctionRangeOracle truth(spec.dim(), [&](std::span<const double> x) { return spec.target(x); }, 2);
  return mc_regression_risks(f, truth, spec, 0.0, m, seed, threads).standard;
}

}  // namespace relulab
