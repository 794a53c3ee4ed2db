#include "pad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pad/rng.hpp"

namespace pad {

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void ensure_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by '") + op + "'");
    }
  }
}

}  // namespace

// ---------------- Tensor ----------------

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != values.size()) {
    throw ShapeError("tensor payload of " + std::to_string(values.size()) +
                     " values does not fill shape " + shape_str(shape_));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(i) + " out of range for shape " +
                     shape_str(shape_));
  }
  return shape_[i];
}

const std::vector<double>& Tensor::data() const {
  if (!data_) throw ValueError("tensor is empty");
  return *data_;
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " does not match shape " + shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) throw ShapeError("index out of bounds");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[off];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape_));
  }
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = -1;
  return t;
}

// ---------------- Graph ----------------

Tensor Graph::leaf(const Tensor& t) {
  ensure_finite("leaf", t.data());
  Node n;
  n.op = "leaf";
  n.shape = t.shape();
  nodes_.push_back(std::move(n));
  Tensor out = t;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  return out;
}

Tensor Graph::record(const char* op, Shape out_shape, std::vector<double> out_data,
                     std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  ensure_finite(op, out_data);
  bool any_tracked = false;
  for (const Tensor* t : inputs) any_tracked = any_tracked || t->tracked();
  Tensor out(std::move(out_shape), std::move(out_data));
  if (!any_tracked) return out;

  Node n;
  n.op = op;
  n.shape = out.shape();
  n.inputs.reserve(inputs.size());
  for (const Tensor* t : inputs) n.inputs.push_back(t->node_);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  return out;
}

void Graph::backward(const Tensor& root) {
  if (ran_) throw ValueError("backward already ran on this graph");
  if (!root.tracked()) throw ValueError("backward root is not tracked on this graph");
  if (root.numel() != 1) {
    throw ShapeError("backward requires a scalar root, got " + shape_str(root.shape()));
  }
  ran_ = true;
  nodes_[root.node_].grad.assign(1, 1.0);
  for (int i = root.node_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, std::span<const int>(n.inputs), n.grad);
  }
  // Leaves the root never reached still get a (zero) gradient, exactly once.
  for (Node& n : nodes_) {
    if (!n.backward && n.grad.empty()) n.grad.assign(shape_numel(n.shape), 0.0);
  }
}

Tensor Graph::grad(const Tensor& t) const {
  if (!t.tracked() || static_cast<std::size_t>(t.node_) >= nodes_.size()) {
    throw ValueError("grad() requires a tensor tracked on this graph");
  }
  if (!ran_) throw ValueError("grad() before backward()");
  const Node& n = nodes_[static_cast<std::size_t>(t.node_)];
  if (n.grad.empty()) return Tensor::zeros(n.shape);
  return Tensor(n.shape, n.grad);
}

void Graph::accumulate(int node_id, const std::vector<double>& g) {
  accumulate(node_id, g.data(), g.size());
}

void Graph::accumulate(int node_id, const double* g, std::size_t n) {
  accumulate_at(node_id, 0, g, n);
}

void Graph::accumulate_at(int node_id, std::size_t offset, const double* g, std::size_t n) {
  if (node_id < 0) return;
  Node& node = nodes_[static_cast<std::size_t>(node_id)];
  std::size_t total = shape_numel(node.shape);
  if (node.grad.empty()) node.grad.assign(total, 0.0);
  if (offset + n > total) throw ShapeError("gradient accumulation out of range");
  for (std::size_t i = 0; i < n; ++i) node.grad[offset + i] += g[i];
}

const Shape& Graph::node_shape(int node_id) const {
  return nodes_.at(static_cast<std::size_t>(node_id)).shape;
}

// ---------------- ops ----------------

namespace ops {

namespace {

// Untracked fast path: same finiteness guarantee as Graph::record.
Tensor checked(const char* op, Shape shape, std::vector<double> data) {
  ensure_finite(op, data);
  return Tensor(std::move(shape), std::move(data));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

Tensor unary_elementwise(Graph* g, const char* name, const Tensor& x,
                         const std::function<double(double)>& f,
                         const std::function<double(double, double)>& df /* (x, y) */) {
  const auto& xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  if (!g) return checked(name, x.shape(), std::move(out));
  auto xp = x.payload();
  auto yp = std::make_shared<std::vector<double>>(out);
  return g->record(name, x.shape(), std::move(out), {&x},
                   [xp, yp, df](Graph& gg, std::span<const int> in,
                                const std::vector<double>& gout) {
                     if (in[0] < 0) return;
                     std::vector<double> gx(gout.size());
                     for (std::size_t i = 0; i < gout.size(); ++i) {
                       gx[i] = gout[i] * df((*xp)[i], (*yp)[i]);
                     }
                     gg.accumulate(in[0], gx);
                   });
}

}  // namespace

Tensor activation(Graph* g, Act kind, const Tensor& x, double slope) {
  switch (kind) {
    case Act::sigmoid:
      return sigmoid(g, x);
    case Act::leaky_relu:
      return leaky_relu(g, x, slope);
  }
  throw ValueError("unknown activation kind");
}

Tensor sigmoid(Graph* g, const Tensor& x) {
  return unary_elementwise(
      g, "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(Graph* g, const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ValueError("leaky_relu slope must lie in (0, 1)");
  }
  return unary_elementwise(
      g, "leaky_relu", x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor sin(Graph* g, const Tensor& x) {
  return unary_elementwise(
      g, "sin", x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

Tensor cos(Graph* g, const Tensor& x) {
  return unary_elementwise(
      g, "cos", x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

Tensor scale(Graph* g, const Tensor& x, double c) {
  return unary_elementwise(
      g, "scale", x, [c](double v) { return c * v; },
      [c](double, double) { return c; });
}

Tensor add_const(Graph* g, const Tensor& x, double c) {
  return unary_elementwise(
      g, "add_const", x, [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

Tensor binary(Graph* g, Bin kind, const Tensor& a, const Tensor& b) {
  switch (kind) {
    case Bin::add:
      return add(g, a, b);
    case Bin::sub:
      return sub(g, a, b);
    case Bin::hadamard:
      return hadamard(g, a, b);
  }
  throw ValueError("unknown binary kind");
}

Tensor add(Graph* g, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i];
  if (!g) return checked("add", a.shape(), std::move(out));
  return g->record("add", a.shape(), std::move(out), {&a, &b},
                   [](Graph& gg, std::span<const int> in, const std::vector<double>& gout) {
                     gg.accumulate(in[0], gout);
                     gg.accumulate(in[1], gout);
                   });
}

Tensor sub(Graph* g, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[i];
  if (!g) return checked("sub", a.shape(), std::move(out));
  return g->record("sub", a.shape(), std::move(out), {&a, &b},
                   [](Graph& gg, std::span<const int> in, const std::vector<double>& gout) {
                     gg.accumulate(in[0], gout);
                     if (in[1] >= 0) {
                       std::vector<double> gb(gout.size());
                       for (std::size_t i = 0; i < gout.size(); ++i) gb[i] = -gout[i];
                       gg.accumulate(in[1], gb);
                     }
                   });
}

Tensor hadamard(Graph* g, const Tensor& a, const Tensor& b) {
  require_same_shape("hadamard", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i];
  if (!g) return checked("hadamard", a.shape(), std::move(out));
  auto ap = a.payload();
  auto bp = b.payload();
  return g->record("hadamard", a.shape(), std::move(out), {&a, &b},
                   [ap, bp](Graph& gg, std::span<const int> in,
                            const std::vector<double>& gout) {
                     if (in[0] >= 0) {
                       std::vector<double> ga(gout.size());
                       for (std::size_t i = 0; i < gout.size(); ++i) ga[i] = gout[i] * (*bp)[i];
                       gg.accumulate(in[0], ga);
                     }
                     if (in[1] >= 0) {
                       std::vector<double> gb(gout.size());
                       for (std::size_t i = 0; i < gout.size(); ++i) gb[i] = gout[i] * (*ap)[i];
                       gg.accumulate(in[1], gb);
                     }
                   });
}

Tensor conv1x1(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() < 2) {
    throw ShapeError("conv1x1 input must be [C, ...spatial], got " + shape_str(x.shape()));
  }
  if (w.rank() != 2) {
    throw ShapeError("conv1x1 weight must be [Co, Ci], got " + shape_str(w.shape()));
  }
  const std::size_t ci = x.dim(0);
  const std::size_t co = w.dim(0);
  if (w.dim(1) != ci) {
    throw ShapeError("conv1x1: weight " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != co) {
    throw ShapeError("conv1x1: bias " + shape_str(b.shape()) + " must be [" +
                     std::to_string(co) + "]");
  }
  const std::size_t spatial = x.numel() / ci;
  const auto& xd = x.data();
  const auto& wd = w.data();
  const auto& bd = b.data();

  Shape out_shape = x.shape();
  out_shape[0] = co;
  std::vector<double> out(co * spatial);
  for (std::size_t o = 0; o < co; ++o) {
    double* row = out.data() + o * spatial;
    std::fill(row, row + spatial, bd[o]);
    for (std::size_t c = 0; c < ci; ++c) {
      const double wv = wd[o * ci + c];
      const double* xrow = xd.data() + c * spatial;
      for (std::size_t s = 0; s < spatial; ++s) row[s] += wv * xrow[s];
    }
  }
  if (!g) return checked("conv1x1", std::move(out_shape), std::move(out));

  auto xp = x.payload();
  auto wp = w.payload();
  return g->record(
      "conv1x1", std::move(out_shape), std::move(out), {&x, &w, &b},
      [xp, wp, ci, co, spatial](Graph& gg, std::span<const int> in,
                                const std::vector<double>& gout) {
        if (in[0] >= 0) {
          std::vector<double> gx(ci * spatial, 0.0);
          for (std::size_t o = 0; o < co; ++o) {
            const double* grow = gout.data() + o * spatial;
            for (std::size_t c = 0; c < ci; ++c) {
              const double wv = (*wp)[o * ci + c];
              double* gxrow = gx.data() + c * spatial;
              for (std::size_t s = 0; s < spatial; ++s) gxrow[s] += wv * grow[s];
            }
          }
          gg.accumulate(in[0], gx);
        }
        if (in[1] >= 0) {
          std::vector<double> gw(co * ci, 0.0);
          for (std::size_t o = 0; o < co; ++o) {
            const double* grow = gout.data() + o * spatial;
            for (std::size_t c = 0; c < ci; ++c) {
              const double* xrow = xp->data() + c * spatial;
              double acc = 0.0;
              for (std::size_t s = 0; s < spatial; ++s) acc += grow[s] * xrow[s];
              gw[o * ci + c] = acc;
            }
          }
          gg.accumulate(in[1], gw);
        }
        if (in[2] >= 0) {
          std::vector<double> gb(co, 0.0);
          for (std::size_t o = 0; o < co; ++o) {
            const double* grow = gout.data() + o * spatial;
            double acc = 0.0;
            for (std::size_t s = 0; s < spatial; ++s) acc += grow[s];
            gb[o] = acc;
          }
          gg.accumulate(in[2], gb);
        }
      });
}

Tensor concat_channels(Graph* g, const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1) {
    throw ShapeError("concat_channels: rank mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  for (std::size_t i = 1; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("concat_channels: trailing dims differ, " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
  }
  Shape out_shape = a.shape();
  out_shape[0] = a.dim(0) + b.dim(0);
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  if (!g) return checked("concat_channels", std::move(out_shape), std::move(out));

  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  return g->record("concat_channels", std::move(out_shape), std::move(out), {&a, &b},
                   [na, nb](Graph& gg, std::span<const int> in,
                            const std::vector<double>& gout) {
                     if (in[0] >= 0) gg.accumulate(in[0], gout.data(), na);
                     if (in[1] >= 0) gg.accumulate(in[1], gout.data() + na, nb);
                   });
}

Tensor channel_slice(Graph* g, const Tensor& x, std::size_t from, std::size_t count) {
  if (x.rank() < 1) throw ShapeError("channel_slice needs rank >= 1");
  const std::size_t c = x.dim(0);
  if (from + count > c || count == 0) {
    throw ShapeError("channel_slice [" + std::to_string(from) + ", " +
                     std::to_string(from + count) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::size_t stride = x.numel() / c;
  Shape out_shape = x.shape();
  out_shape[0] = count;
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(from * stride),
                          x.data().begin() + static_cast<std::ptrdiff_t>((from + count) * stride));
  if (!g) return checked("channel_slice", std::move(out_shape), std::move(out));
  return g->record("channel_slice", std::move(out_shape), std::move(out), {&x},
                   [from, stride](Graph& gg, std::span<const int> in,
                                  const std::vector<double>& gout) {
                     if (in[0] >= 0) {
                       gg.accumulate_at(in[0], from * stride, gout.data(), gout.size());
                     }
                   });
}

Tensor reshape(Graph* g, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  std::vector<double> out = x.data();
  if (!g) return checked("reshape", std::move(shape), std::move(out));
  return g->record("reshape", std::move(shape), std::move(out), {&x},
                   [](Graph& gg, std::span<const int> in, const std::vector<double>& gout) {
                     gg.accumulate(in[0], gout);
                   });
}

Tensor expand_channels(Graph* g, const Tensor& x, std::size_t channels) {
  if (x.rank() < 1 || x.dim(0) != 1) {
    throw ShapeError("expand_channels input must have a single leading channel, got " +
                     shape_str(x.shape()));
  }
  const std::size_t stride = x.numel();
  Shape out_shape = x.shape();
  out_shape[0] = channels;
  std::vector<double> out(channels * stride);
  for (std::size_t c = 0; c < channels; ++c) {
    std::copy(x.data().begin(), x.data().end(),
              out.begin() + static_cast<std::ptrdiff_t>(c * stride));
  }
  if (!g) return checked("expand_channels", std::move(out_shape), std::move(out));
  return g->record("expand_channels", std::move(out_shape), std::move(out), {&x},
                   [channels, stride](Graph& gg, std::span<const int> in,
                                      const std::vector<double>& gout) {
                     if (in[0] < 0) return;
                     std::vector<double> gx(stride, 0.0);
                     for (std::size_t c = 0; c < channels; ++c) {
                       const double* src = gout.data() + c * stride;
                       for (std::size_t i = 0; i < stride; ++i) gx[i] += src[i];
                     }
                     gg.accumulate(in[0], gx);
                   });
}

Tensor broadcast_scalar(Graph* g, const Tensor& x, Shape shape) {
  if (x.numel() != 1) {
    throw ShapeError("broadcast_scalar input must be a scalar, got " + shape_str(x.shape()));
  }
  const std::size_t n = shape_numel(shape);
  std::vector<double> out(n, x[0]);
  if (!g) return checked("broadcast_scalar", std::move(shape), std::move(out));
  return g->record("broadcast_scalar", std::move(shape), std::move(out), {&x},
                   [](Graph& gg, std::span<const int> in, const std::vector<double>& gout) {
                     if (in[0] < 0) return;
                     double acc = 0.0;
                     for (double v : gout) acc += v;
                     gg.accumulate(in[0], &acc, 1);
                   });
}

Tensor sum(Graph* g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  if (!g) return checked("sum", {1}, {acc});
  const std::size_t n = x.numel();
  return g->record("sum", {1}, {acc}, {&x},
                   [n](Graph& gg, std::span<const int> in, const std::vector<double>& gout) {
                     if (in[0] < 0) return;
                     std::vector<double> gx(n, gout[0]);
                     gg.accumulate(in[0], gx);
                   });
}

Tensor mean(Graph* g, const Tensor& x) {
  return scale(g, sum(g, x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_sq(Graph* g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  if (!g) return checked("sum_sq", {1}, {acc});
  auto xp = x.payload();
  return g->record("sum_sq", {1}, {acc}, {&x},
                   [xp](Graph& gg, std::span<const int> in, const std::vector<double>& gout) {
                     if (in[0] < 0) return;
                     std::vector<double> gx(xp->size());
                     for (std::size_t i = 0; i < gx.size(); ++i) {
                       gx[i] = 2.0 * (*xp)[i] * gout[0];
                     }
                     gg.accumulate(in[0], gx);
                   });
}

Tensor mlp2(Graph* g, const Tensor& x, const Tensor& w1, const Tensor& b1,
            const Tensor& w2, const Tensor& b2, double slope) {
  Tensor h = leaky_relu(g, conv1x1(g, x, w1, b1), slope);
  return conv1x1(g, h, w2, b2);
}

}  // namespace ops

// ---------------- gradcheck ----------------

namespace {

Tensor perturbed(const Tensor& t, std::size_t coord, double delta) {
  std::vector<double> v = t.data();
  v[coord] += delta;
  return Tensor(t.shape(), std::move(v));
}

}  // namespace

double gradcheck(const TensorFn& f, const std::vector<Tensor>& inputs,
                 const GradCheckOptions& opts) {
  if (!(opts.h >= 1e-7 && opts.h <= 1e-3)) {
    throw ValueError("gradcheck step must lie in [1e-7, 1e-3]");
  }
  Graph g;
  std::vector<Tensor> tracked;
  tracked.reserve(inputs.size());
  for (const Tensor& t : inputs) tracked.push_back(g.leaf(t));
  Tensor root = f(g, tracked);
  if (root.numel() != 1) {
    throw ShapeError("gradcheck function must return a scalar, got " +
                     shape_str(root.shape()));
  }
  g.backward(root);

  Rng rng(opts.seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = g.grad(tracked[i]);
    const std::size_t n = inputs[i].numel();
    std::vector<std::size_t> coords;
    if (opts.max_coords_per_input == 0 || opts.max_coords_per_input >= n) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), std::size_t{0});
      for (std::size_t k = 0; k < opts.max_coords_per_input; ++k) {
        std::size_t j = k + static_cast<std::size_t>(rng.below(n - k));
        std::swap(all[k], all[j]);
        coords.push_back(all[k]);
      }
    }
    for (std::size_t c : coords) {
      std::vector<Tensor> plus = inputs;
      std::vector<Tensor> minus = inputs;
      plus[i] = perturbed(inputs[i], c, opts.h);
      minus[i] = perturbed(inputs[i], c, -opts.h);
      Graph gp, gm;  // inputs untracked: nothing records
      const double fp = f(gp, plus).item();
      const double fm = f(gm, minus).item();
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double a = analytic[c];
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace pad
