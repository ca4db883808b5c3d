#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "parallel.hpp"

namespace relulab {

inline double relu(double t) { return t > 0.0 ? t : 0.0; }

// Row-compressed weight matrix. Entries that are exactly zero are never stored,
// so the stored count is the nonzero count.
class SparseMatrix {
 public:
  struct Entry {
    std::uint32_t col;
    double value;
  };

  class Builder;

  SparseMatrix() = default;

  static SparseMatrix from_dense(std::size_t rows, std::size_t cols, std::span<const double> row_major);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nonzeros() const { return entries_.size(); }

  std::span<const Entry> row(std::size_t r) const {
    return {entries_.data() + offsets_[r], entries_.data() + offsets_[r + 1]};
  }

  double at(std::size_t r, std::size_t c) const {
    auto entries = row(r);
    auto it = std::lower_bound(entries.begin(), entries.end(), c,
                               [](const Entry& e, std::size_t col) { return e.col < col; });
    return (it != entries.end() && it->col == c) ? it->value : 0.0;
  }

  std::vector<double> to_dense() const {
    std::vector<double> out(rows_ * cols_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r)
      for (const auto& e : row(r)) out[r * cols_ + e.col] = e.value;
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<Entry> entries_;
};

// Accumulates one row at a time; duplicate columns within a row are summed in
// insertion order.
class SparseMatrix::Builder {
 public:
  explicit Builder(std::size_t cols) : cols_(cols) {}

  void add(std::size_t col, double value) {
    if (col >= cols_) throw InputError("sparse builder: column out of range");
    pending_.push_back({static_cast<std::uint32_t>(col), value});
  }

  void end_row() {
    std::stable_sort(pending_.begin(), pending_.end(),
                     [](const Entry& a, const Entry& b) { return a.col < b.col; });
    for (std::size_t i = 0; i < pending_.size();) {
      std::size_t j = i;
      double sum = 0.0;
      for (; j < pending_.size() && pending_[j].col == pending_[i].col; ++j) sum += pending_[j].value;
      if (sum != 0.0) out_.entries_.push_back({pending_[i].col, sum});
      i = j;
    }
    pending_.clear();
    out_.offsets_.push_back(out_.entries_.size());
    ++out_.rows_;
  }

  SparseMatrix finish() {
    if (!pending_.empty()) end_row();
    out_.cols_ = cols_;
    SparseMatrix done = std::move(out_);
    out_ = SparseMatrix();
    return done;
  }

 private:
  std::size_t cols_;
  std::vector<Entry> pending_;
  SparseMatrix out_;
};

inline SparseMatrix SparseMatrix::from_dense(std::size_t rows, std::size_t cols, std::span<const double> row_major) {
  if (row_major.size() != rows * cols) throw InputError("dense weight payload has wrong length");
  Builder b(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double v = row_major[r * cols + c];
      if (v != 0.0) b.add(c, v);
    }
    b.end_row();
  }
  SparseMatrix m = b.finish();
  m.rows_ = rows;
  return m;
}

struct Layer {
  SparseMatrix weights;
  std::vector<double> bias;
};

struct Workspace {
  std::vector<double> a, b;
};

namespace detail {

inline void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw InputError(std::string("non-finite value in ") + what);
}

inline void validate_layers(std::size_t input_dim, const std::vector<Layer>& layers) {
  if (input_dim == 0) throw InputError("input_dim must be positive");
  if (layers.empty()) throw InputError("network needs at least one layer");
  std::size_t prev = input_dim;
  for (const auto& layer : layers) {
    if (layer.weights.cols() != prev) throw InputError("layer column count breaks the dimension chain");
    if (layer.bias.size() != layer.weights.rows()) throw InputError("bias length differs from layer rows");
    if (layer.weights.rows() == 0) throw InputError("layer has zero width");
    for (std::size_t r = 0; r < layer.weights.rows(); ++r)
      for (const auto& e : layer.weights.row(r)) check_finite(e.value, "weights");
    for (double v : layer.bias) check_finite(v, "bias");
    prev = layer.weights.rows();
  }
}

// Writes the last hidden activation into ws and returns a pointer to it.
inline const double* forward(const std::vector<Layer>& layers, std::span<const double> x, Workspace& ws) {
  const double* in = x.data();
  bool to_a = true;
  for (const auto& layer : layers) {
    auto& out = to_a ? ws.a : ws.b;
    const std::size_t rows = layer.weights.rows();
    if (out.size() < rows) out.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (const auto& e : layer.weights.row(r)) s += e.value * in[e.col];
      out[r] = relu(s + layer.bias[r]);
    }
    in = out.data();
    to_a = !to_a;
  }
  return in;
}

}  // namespace detail

// c . sigma(A_L ... sigma(A_1 x)); the activation follows the last affine map.
class ReluNetwork {
 public:
  ReluNetwork(std::size_t input_dim, std::vector<Layer> layers, std::vector<double> output_coeffs)
      : input_dim_(input_dim), layers_(std::move(layers)), coeffs_(std::move(output_coeffs)) {
    detail::validate_layers(input_dim_, layers_);
    if (coeffs_.size() != layers_.back().weights.rows())
      throw InputError("output_coeffs length differs from last layer width");
    for (double v : coeffs_) detail::check_finite(v, "output_coeffs");
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t depth() const { return layers_.size(); }
  std::size_t width(std::size_t layer) const { return layers_.at(layer).weights.rows(); }
  const std::vector<Layer>& layers() const { return layers_; }
  const std::vector<double>& output_coeffs() const { return coeffs_; }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    for (const auto& l : layers_) w.push_back(l.weights.rows());
    return w;
  }

  double evaluate(std::span<const double> x, Workspace& ws) const {
    if (x.size() != input_dim_)
      throw InputError("input has length " + std::to_string(x.size()) + ", network expects " +
                       std::to_string(input_dim_));
    const double* h = detail::forward(layers_, x, ws);
    double s = 0.0;
    for (std::size_t j = 0; j < coeffs_.size(); ++j) s += coeffs_[j] * h[j];
    return s;
  }

  double evaluate(std::span<const double> x) const {
    Workspace ws;
    return evaluate(x, ws);
  }

  double operator()(std::span<const double> x) const { return evaluate(x); }

  std::vector<double> evaluate_batch(const std::vector<std::vector<double>>& xs, unsigned threads = 1) const {
    std::vector<double> out(xs.size());
    for (const auto& x : xs)
      if (x.size() != input_dim_) throw InputError("batch element has wrong length");
    unsigned workers = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(xs.size(), 1));
    std::size_t block = (xs.size() + workers - 1) / std::max(workers, 1u);
    parallel_for(workers, workers, [&](std::size_t w) {
      Workspace ws;
      std::size_t hi = std::min(xs.size(), (w + 1) * block);
      for (std::size_t i = w * block; i < hi; ++i) out[i] = evaluate(xs[i], ws);
    });
    return out;
  }

 private:
  std::size_t input_dim_;
  std::vector<Layer> layers_;
  std::vector<double> coeffs_;
};

// A network whose last hidden layer feeds several linear read-outs ("heads").
// Used to hand several values to the first layer of an outer network.
struct MultiHeadNetwork {
  std::size_t input_dim = 0;
  std::vector<Layer> layers;
  std::vector<std::vector<double>> heads;

  std::size_t depth() const { return layers.size(); }

  std::vector<double> evaluate(std::span<const double> x) const {
    if (x.size() != input_dim) throw InputError("input has wrong length");
    Workspace ws;
    const double* h = detail::forward(layers, x, ws);
    std::vector<double> out;
    for (const auto& head : heads) {
      double s = 0.0;
      for (std::size_t j = 0; j < head.size(); ++j) s += head[j] * h[j];
      out.push_back(s);
    }
    return out;
  }
};

inline MultiHeadNetwork as_multi_head(const ReluNetwork& net) {
  return {net.input_dim(), net.layers(), {net.output_coeffs()}};
}

inline std::size_t param_count(const ReluNetwork& net) {
  std::size_t n = net.output_coeffs().size();
  std::size_t prev = net.input_dim();
  for (const auto& l : net.layers()) {
    n += prev * l.weights.rows() + l.weights.rows();
    prev = l.weights.rows();
  }
  return n;
}

inline std::size_t nonzero_param_count(const ReluNetwork& net) {
  std::size_t n = 0;
  for (const auto& l : net.layers()) {
    n += l.weights.nonzeros();
    n += std::count_if(l.bias.begin(), l.bias.end(), [](double v) { return v != 0.0; });
  }
  n += std::count_if(net.output_coeffs().begin(), net.output_coeffs().end(), [](double v) { return v != 0.0; });
  return n;
}

// Carries every head through extra layers as the pair (sigma(t), sigma(-t)).
inline MultiHeadNetwork pad_to_depth(const MultiHeadNetwork& net, std::size_t target_depth) {
  if (target_depth < net.depth())
    throw PreconditionError("pad_to_depth: target depth " + std::to_string(target_depth) +
                            " is below current depth " + std::to_string(net.depth()));
  if (target_depth == net.depth()) return net;
  MultiHeadNetwork out{net.input_dim, net.layers, {}};
  const std::size_t last = net.layers.back().weights.rows();
  const std::size_t k = net.heads.size();

  SparseMatrix::Builder split(last);
  for (const auto& head : net.heads) {
    for (std::size_t j = 0; j < last; ++j)
      if (head[j] != 0.0) split.add(j, head[j]);
    split.end_row();
    for (std::size_t j = 0; j < last; ++j)
      if (head[j] != 0.0) split.add(j, -head[j]);
    split.end_row();
  }
  out.layers.push_back({split.finish(), std::vector<double>(2 * k, 0.0)});

  for (std::size_t extra = net.depth() + 1; extra < target_depth; ++extra) {
    SparseMatrix::Builder carry(2 * k);
    for (std::size_t h = 0; h < k; ++h) {
      carry.add(2 * h, 1.0);
      carry.add(2 * h + 1, -1.0);
      carry.end_row();
      carry.add(2 * h, -1.0);
      carry.add(2 * h + 1, 1.0);
      carry.end_row();
    }
    out.layers.push_back({carry.finish(), std::vector<double>(2 * k, 0.0)});
  }
  for (std::size_t h = 0; h < k; ++h) {
    std::vector<double> head(2 * k, 0.0);
    head[2 * h] = 1.0;
    head[2 * h + 1] = -1.0;
    out.heads.push_back(std::move(head));
  }
  return out;
}

inline ReluNetwork pad_to_depth(const ReluNetwork& net, std::size_t target_depth) {
  if (target_depth == net.depth()) return net;
  auto padded = pad_to_depth(as_multi_head(net), target_depth);
  return ReluNetwork(padded.input_dim, std::move(padded.layers), std::move(padded.heads.front()));
}

namespace detail {

// Vertical stack for layer 1 (shared input), block-diagonal afterwards.
inline std::vector<Layer> stack_layers(const std::vector<const std::vector<Layer>*>& parts, std::size_t input_dim) {
  const std::size_t depth = parts.front()->size();
  std::vector<Layer> out;
  std::vector<std::size_t> in_offset(parts.size(), 0);
  for (std::size_t l = 0; l < depth; ++l) {
    std::size_t cols = 0;
    if (l == 0) {
      cols = input_dim;
    } else {
      for (auto* p : parts) cols += (*p)[l - 1].weights.rows();
    }
    SparseMatrix::Builder b(cols);
    std::vector<double> bias;
    std::size_t offset = 0;
    for (auto* p : parts) {
      const auto& layer = (*p)[l];
      const std::size_t shift = (l == 0) ? 0 : offset;
      for (std::size_t r = 0; r < layer.weights.rows(); ++r) {
        for (const auto& e : layer.weights.row(r)) b.add(shift + e.col, e.value);
        b.end_row();
      }
      bias.insert(bias.end(), layer.bias.begin(), layer.bias.end());
      if (l > 0) offset += layer.weights.cols();
    }
    out.push_back({b.finish(), std::move(bias)});
  }
  return out;
}

}  // namespace detail

// Output equals sum_i combine[i] * net_i(x).
inline ReluNetwork stack_parallel(const std::vector<ReluNetwork>& nets, const std::vector<double>& combine) {
  if (nets.empty()) throw InputError("stack_parallel: no networks");
  if (combine.size() != nets.size()) throw InputError("stack_parallel: one coefficient per network required");
  std::vector<const std::vector<Layer>*> parts;
  for (const auto& n : nets) {
    if (n.input_dim() != nets.front().input_dim()) throw PreconditionError("stack_parallel: input dimensions differ");
    if (n.depth() != nets.front().depth())
      throw PreconditionError("stack_parallel: depths differ, pad_to_depth first");
    parts.push_back(&n.layers());
  }
  auto layers = detail::stack_layers(parts, nets.front().input_dim());
  std::vector<double> coeffs;
  for (std::size_t i = 0; i < nets.size(); ++i)
    for (double c : nets[i].output_coeffs()) coeffs.push_back(combine[i] * c);
  return ReluNetwork(nets.front().input_dim(), std::move(layers), std::move(coeffs));
}

// Runs every network side by side on the same input (padding to a common
// depth); heads are concatenated in order.
inline MultiHeadNetwork fan_out(const std::vector<MultiHeadNetwork>& nets) {
  if (nets.empty()) throw InputError("fan_out: no networks");
  std::size_t depth = 0;
  for (const auto& n : nets) {
    if (n.input_dim != nets.front().input_dim) throw PreconditionError("fan_out: input dimensions differ");
    depth = std::max(depth, n.depth());
  }
  std::vector<MultiHeadNetwork> padded;
  for (const auto& n : nets) padded.push_back(pad_to_depth(n, depth));
  std::vector<const std::vector<Layer>*> parts;
  for (const auto& p : padded) parts.push_back(&p.layers);
  MultiHeadNetwork out{nets.front().input_dim, detail::stack_layers(parts, nets.front().input_dim), {}};
  const std::size_t total = out.layers.back().weights.rows();
  std::size_t offset = 0;
  for (const auto& p : padded) {
    for (const auto& head : p.heads) {
      std::vector<double> h(total, 0.0);
      std::copy(head.begin(), head.end(), h.begin() + offset);
      out.heads.push_back(std::move(h));
    }
    offset += p.layers.back().weights.rows();
  }
  return out;
}

inline MultiHeadNetwork fan_out(const std::vector<ReluNetwork>& nets) {
  std::vector<MultiHeadNetwork> m;
  for (const auto& n : nets) m.push_back(as_multi_head(n));
  return fan_out(m);
}

// outer(inner_heads(x)): the heads are merged into the outer first layer.
inline ReluNetwork compose_serial(const ReluNetwork& outer, const MultiHeadNetwork& inner) {
  if (outer.input_dim() != inner.heads.size())
    throw PreconditionError("compose_serial: outer input_dim " + std::to_string(outer.input_dim()) +
                            " differs from inner head count " + std::to_string(inner.heads.size()));
  const std::size_t inner_width = inner.layers.back().weights.rows();
  const Layer& first = outer.layers().front();
  SparseMatrix::Builder b(inner_width);
  std::vector<double> acc(inner_width, 0.0);
  std::vector<char> touched(inner_width, 0);
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < first.weights.rows(); ++r) {
    order.clear();
    for (const auto& e : first.weights.row(r)) {
      const auto& head = inner.heads[e.col];
      for (std::size_t j = 0; j < inner_width; ++j) {
        if (head[j] == 0.0) continue;
        if (!touched[j]) {
          touched[j] = 1;
          order.push_back(j);
        }
        acc[j] += e.value * head[j];
      }
    }
    std::sort(order.begin(), order.end());
    for (std::size_t j : order) {
      if (acc[j] != 0.0) b.add(j, acc[j]);
      acc[j] = 0.0;
      touched[j] = 0;
    }
    b.end_row();
  }
  std::vector<Layer> layers = inner.layers;
  layers.push_back({b.finish(), first.bias});
  for (std::size_t l = 1; l < outer.depth(); ++l) layers.push_back(outer.layers()[l]);
  return ReluNetwork(inner.input_dim, std::move(layers), outer.output_coeffs());
}

inline ReluNetwork compose_serial(const ReluNetwork& outer, const ReluNetwork& inner) {
  return compose_serial(outer, as_multi_head(inner));
}

// New input vector of length new_dim; old input j reads new coordinate mapping[j].
inline ReluNetwork remap_inputs(const ReluNetwork& net, std::size_t new_dim, const std::vector<std::size_t>& mapping) {
  if (mapping.size() != net.input_dim()) throw InputError("remap_inputs: mapping length differs from input_dim");
  for (auto m : mapping)
    if (m >= new_dim) throw InputError("remap_inputs: target coordinate out of range");
  const Layer& first = net.layers().front();
  SparseMatrix::Builder b(new_dim);
  for (std::size_t r = 0; r < first.weights.rows(); ++r) {
    for (const auto& e : first.weights.row(r)) b.add(mapping[e.col], e.value);
    b.end_row();
  }
  std::vector<Layer> layers = net.layers();
  layers.front().weights = b.finish();
  return ReluNetwork(new_dim, std::move(layers), net.output_coeffs());
}

// Scales the first-layer columns: net(x) becomes net(scale .* x).
inline ReluNetwork scale_inputs(const ReluNetwork& net, const std::vector<double>& scale) {
  if (scale.size() != net.input_dim()) throw InputError("scale_inputs: one factor per input required");
  const Layer& first = net.layers().front();
  SparseMatrix::Builder b(net.input_dim());
  for (std::size_t r = 0; r < first.weights.rows(); ++r) {
    for (const auto& e : first.weights.row(r)) b.add(e.col, e.value * scale[e.col]);
    b.end_row();
  }
  std::vector<Layer> layers = net.layers();
  layers.front().weights = b.finish();
  return ReluNetwork(net.input_dim(), std::move(layers), net.output_coeffs());
}

inline ReluNetwork scale_output(const ReluNetwork& net, double factor) {
  std::vector<double> c = net.output_coeffs();
  for (double& v : c) v *= factor;
  return ReluNetwork(net.input_dim(), net.layers(), std::move(c));
}

// sigma(z) - sigma(-z) with z = w.x + b: exact for any affine map.
inline ReluNetwork affine_network(const std::vector<double>& w, double b) {
  SparseMatrix::Builder m(w.size());
  for (std::size_t k = 0; k < w.size(); ++k)
    if (w[k] != 0.0) m.add(k, w[k]);
  m.end_row();
  for (std::size_t k = 0; k < w.size(); ++k)
    if (w[k] != 0.0) m.add(k, -w[k]);
  m.end_row();
  return ReluNetwork(w.size(), {{m.finish(), {b, -b}}}, {1.0, -1.0});
}

inline ReluNetwork identity_network(std::size_t input_dim, std::size_t axis) {
  std::vector<double> w(input_dim, 0.0);
  w.at(axis) = 1.0;
  return affine_network(w, 0.0);
}

inline nlohmann::json to_json(const ReluNetwork& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"rows", l.weights.rows()},
                      {"cols", l.weights.cols()},
                      {"weights", l.weights.to_dense()},
                      {"bias", l.bias}});
  }
  return {{"input_dim", net.input_dim()}, {"layers", layers}, {"output_coeffs", net.output_coeffs()}};
}

inline std::string serialize(const ReluNetwork& net) { return to_json(net).dump(); }

inline ReluNetwork from_json(const nlohmann::json& j) {
  auto field = [](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(key)) throw ParseError(std::string("missing field '") + key + "'", 0);
    return obj.at(key);
  };
  auto reals = [](const nlohmann::json& arr, const std::string& what) {
    if (!arr.is_array()) throw ParseError(what + " is not an array", 0);
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
      if (!v.is_number()) throw ParseError(what + " holds a non-number", 0);
      out.push_back(v.get<double>());
    }
    return out;
  };
  try {
    const auto& dim = field(j, "input_dim");
    if (!dim.is_number_unsigned()) throw ParseError("input_dim is not a positive integer", 0);
    std::vector<Layer> layers;
    const auto& jl = field(j, "layers");
    if (!jl.is_array()) throw ParseError("layers is not an array", 0);
    for (std::size_t i = 0; i < jl.size(); ++i) {
      const std::string where = "layers[" + std::to_string(i) + "]";
      const auto& rows = field(jl[i], "rows");
      const auto& cols = field(jl[i], "cols");
      if (!rows.is_number_unsigned() || !cols.is_number_unsigned())
        throw ParseError(where + " rows/cols are not integers", 0);
      auto w = reals(field(jl[i], "weights"), where + ".weights");
      auto b = reals(field(jl[i], "bias"), where + ".bias");
      layers.push_back({SparseMatrix::from_dense(rows.get<std::size_t>(), cols.get<std::size_t>(), w), std::move(b)});
    }
    auto c = reals(field(j, "output_coeffs"), "output_coeffs");
    return ReluNetwork(dim.get<std::size_t>(), std::move(layers), std::move(c));
  } catch (const InputError& e) {
    throw ParseError(std::string("invalid network: ") + e.what(), 0);
  }
}

inline ReluNetwork deserialize(const std::string& bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed network JSON: ") + e.what(), e.byte);
  }
  return from_json(j);
}

}  // namespace relulab
