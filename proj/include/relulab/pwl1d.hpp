#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "errors.hpp"
#include "relunet.hpp"

namespace relulab {

// Continuous piecewise-linear function on [lo, hi] given by its knots.
class PiecewiseLinear1D {
 public:
  struct Extremes {
    double min;
    double argmin;
    double max;
    double argmax;
  };

  PiecewiseLinear1D(std::vector<double> xs, std::vector<double> vs) : xs_(std::move(xs)), vs_(std::move(vs)) {
    if (xs_.size() < 2 || xs_.size() != vs_.size()) throw InputError("piecewise-linear: need >= 2 matching knots");
    for (std::size_t i = 1; i < xs_.size(); ++i)
      if (!(xs_[i] > xs_[i - 1])) throw InputError("piecewise-linear: knots must increase strictly");
    build_blocks();
  }

  // Breakpoint extraction by forward propagation of one piecewise-linear
  // function per neuron. Zero crossings of each pre-activation become knots.
  static PiecewiseLinear1D from_network(const ReluNetwork& net, double lo = 0.0, double hi = 1.0);

  double lo() const { return xs_.front(); }
  double hi() const { return xs_.back(); }
  std::size_t size() const { return xs_.size(); }
  const std::vector<double>& knots() const { return xs_; }
  const std::vector<double>& values() const { return vs_; }

  double value(double x) const {
    if (x < lo() || x > hi()) throw InputError("piecewise-linear: point outside the domain");
    auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    if (it == xs_.end()) return vs_.back();
    std::size_t k = static_cast<std::size_t>(it - xs_.begin()) - 1;
    if (x == xs_[k]) return vs_[k];
    return vs_[k] + (vs_[k + 1] - vs_[k]) * ((x - xs_[k]) / (xs_[k + 1] - xs_[k]));
  }

  // Extremes over [a, b] intersected with the domain.
  Extremes range(double a, double b) const {
    a = std::max(a, lo());
    b = std::min(b, hi());
    if (a > b) throw InputError("piecewise-linear: empty range");
    Extremes e{value(a), a, value(a), a};
    consider(e, b, value(b));
    std::size_t i = static_cast<std::size_t>(std::upper_bound(xs_.begin(), xs_.end(), a) - xs_.begin());
    std::size_t j = static_cast<std::size_t>(std::lower_bound(xs_.begin(), xs_.end(), b) - xs_.begin());
    // knots with index in [i, j) lie strictly inside (a, b)
    while (i < j && i % kBlock != 0) consider_knot(e, i++);
    while (i + kBlock <= j) {
      const std::size_t blk = i / kBlock;
      if (block_min_[blk] < e.min) {
        e.min = block_min_[blk];
        e.argmin = xs_[block_argmin_[blk]];
      }
      if (block_max_[blk] > e.max) {
        e.max = block_max_[blk];
        e.argmax = xs_[block_argmax_[blk]];
      }
      i += kBlock;
    }
    while (i < j) consider_knot(e, i++);
    return e;
  }

  // Range over the clipped ball around x, always including x itself.
  Extremes ball_range(double x, double radius) const {
    Extremes e = range(x - radius, x + radius);
    consider(e, x, value(x));
    return e;
  }

 private:
  static constexpr std::size_t kBlock = 64;

  static void consider(Extremes& e, double x, double v) {
    if (v < e.min) {
      e.min = v;
      e.argmin = x;
    }
    if (v > e.max) {
      e.max = v;
      e.argmax = x;
    }
  }

  void consider_knot(Extremes& e, std::size_t i) const { consider(e, xs_[i], vs_[i]); }

  void build_blocks() {
    const std::size_t blocks = xs_.size() / kBlock;
    block_min_.resize(blocks);
    block_max_.resize(blocks);
    block_argmin_.resize(blocks);
    block_argmax_.resize(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
      std::size_t lo_i = b * kBlock;
      std::size_t mn = lo_i, mx = lo_i;
      for (std::size_t i = lo_i; i < lo_i + kBlock; ++i) {
        if (vs_[i] < vs_[mn]) mn = i;
        if (vs_[i] > vs_[mx]) mx = i;
      }
      block_min_[b] = vs_[mn];
      block_max_[b] = vs_[mx];
      block_argmin_[b] = mn;
      block_argmax_[b] = mx;
    }
  }

  std::vector<double> xs_, vs_;
  std::vector<double> block_min_, block_max_;
  std::vector<std::size_t> block_argmin_, block_argmax_;
};

namespace detail {

struct Pwl {
  std::vector<double> x, v;

  bool is_zero() const {
    return std::all_of(v.begin(), v.end(), [](double t) { return t == 0.0; });
  }
};

// acc[i] += w * f(grid[i]) for every grid point where f is not known to be zero.
// The grid must contain all knots of f.
inline void accumulate(const Pwl& f, double w, const std::vector<double>& grid, std::vector<double>& acc) {
  const std::size_t segments = f.x.size() - 1;
  for (std::size_t k = 0; k < segments; ++k) {
    const double x0 = f.x[k], x1 = f.x[k + 1];
    const double v0 = f.v[k], v1 = f.v[k + 1];
    const bool last = (k + 1 == segments);
    if (v0 == 0.0 && v1 == 0.0) continue;
    std::size_t i = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), x0) - grid.begin());
    const double span = x1 - x0;
    const double slope = v1 - v0;
    for (; i < grid.size() && (grid[i] < x1 || (last && grid[i] == x1)); ++i) {
      const double g = grid[i];
      double val;
      if (g == x0) {
        val = v0;
      } else if (g == x1) {
        val = v1;
      } else {
        val = v0 + slope * ((g - x0) / span);
      }
      acc[i] += w * val;
    }
  }
}

inline Pwl combine(const std::vector<Pwl>& inputs, std::span<const SparseMatrix::Entry> row, double bias,
                   bool activate) {
  std::vector<double> grid;
  for (const auto& e : row) {
    const auto& f = inputs[e.col];
    grid.insert(grid.end(), f.x.begin(), f.x.end());
  }
  if (grid.empty()) {
    grid = {inputs.front().x.front(), inputs.front().x.back()};
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<double> acc(grid.size(), 0.0);
  for (const auto& e : row) accumulate(inputs[e.col], e.value, grid, acc);
  for (double& a : acc) a += bias;
  if (!activate) return {std::move(grid), std::move(acc)};

  Pwl out;
  out.x.reserve(grid.size());
  out.v.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i > 0) {
      const double a = acc[i - 1], b = acc[i];
      if ((a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0)) {
        const double xc = grid[i - 1] + (grid[i] - grid[i - 1]) * (-a / (b - a));
        if (xc > grid[i - 1] && xc < grid[i]) {
          out.x.push_back(xc);
          out.v.push_back(0.0);
        }
      }
    }
    out.x.push_back(grid[i]);
    out.v.push_back(relu(acc[i]));
  }
  // drop interior knots of flat zero runs
  Pwl compact;
  compact.x.reserve(out.x.size());
  compact.v.reserve(out.x.size());
  const std::size_t n = out.x.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && i + 1 < n && out.v[i - 1] == 0.0 && out.v[i] == 0.0 && out.v[i + 1] == 0.0) continue;
    compact.x.push_back(out.x[i]);
    compact.v.push_back(out.v[i]);
  }
  return compact;
}

}  // namespace detail

inline PiecewiseLinear1D PiecewiseLinear1D::from_network(const ReluNetwork& net, double lo, double hi) {
  if (net.input_dim() != 1) throw InputError("piecewise-linear extraction needs a 1-d input");
  if (!(lo < hi)) throw InputError("piecewise-linear extraction needs lo < hi");
  std::vector<detail::Pwl> current{{{lo, hi}, {lo, hi}}};
  for (const auto& layer : net.layers()) {
    std::vector<detail::Pwl> next;
    next.reserve(layer.weights.rows());
    for (std::size_t r = 0; r < layer.weights.rows(); ++r)
      next.push_back(detail::combine(current, layer.weights.row(r), layer.bias[r], true));
    current = std::move(next);
  }
  std::vector<SparseMatrix::Entry> out_row;
  for (std::size_t j = 0; j < net.output_coeffs().size(); ++j)
    if (net.output_coeffs()[j] != 0.0) out_row.push_back({static_cast<std::uint32_t>(j), net.output_coeffs()[j]});
  auto f = detail::combine(current, out_row, 0.0, false);
  return PiecewiseLinear1D(std::move(f.x), std::move(f.v));
}

}  // namespace relulab
