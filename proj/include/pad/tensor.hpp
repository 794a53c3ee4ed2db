#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pad/error.hpp"

namespace pad {

using Shape = std::vector<std::size_t>;

/// Dense row-major float64 tensor. The payload is immutable once constructed
/// and shared between copies, so passing tensors by value is cheap. A tensor
/// produced by (or registered with) a Graph carries the id of its tape node;
/// everything else has node() == -1 and participates in no gradient flow.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  const std::vector<double>& data() const;
  std::shared_ptr<const std::vector<double>> payload() const { return data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::initializer_list<std::size_t> idx) const;
  /// Value of a single-element tensor.
  double item() const;

  int node() const { return node_; }
  bool tracked() const { return node_ >= 0; }
  Tensor detached() const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  int node_ = -1;

  friend class Graph;
};

/// A named model weight: current value plus the gradient from the most
/// recent backward pass (empty tensor before any pass).
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Append-only reverse-mode tape. Operations record one node per output
/// tensor; backward() walks the tape once in reverse insertion order, which
/// is always a valid topological order. A Graph is confined to a single
/// thread; independent graphs may run concurrently.
class Graph {
 public:
  /// Backward closure: receives the tape, the node ids of this op's inputs
  /// (-1 for untracked inputs), and the upstream gradient.
  using BackwardFn =
      std::function<void(Graph&, std::span<const int>, const std::vector<double>&)>;

  /// Register a tensor as a tracked leaf. Returns a tensor sharing the same
  /// payload whose node id points at the new leaf.
  Tensor leaf(const Tensor& t);

  /// Record an op result. If no input is tracked (or graph recording is not
  /// wanted) the data is validated and returned untracked. Every op output
  /// funnels through here, including the finiteness check.
  Tensor record(const char* op, Shape out_shape, std::vector<double> out_data,
                std::initializer_list<const Tensor*> inputs, BackwardFn backward);

  /// Run reverse accumulation from a scalar tracked root. May be called once
  /// per graph.
  void backward(const Tensor& root);

  /// Gradient of a tracked tensor after backward(). Zero for tracked leaves
  /// the root does not depend on.
  Tensor grad(const Tensor& t) const;

  void accumulate(int node_id, const std::vector<double>& g);
  void accumulate(int node_id, const double* g, std::size_t n);
  /// Accumulate into a contiguous sub-range of a node's gradient.
  void accumulate_at(int node_id, std::size_t offset, const double* g, std::size_t n);

  const Shape& node_shape(int node_id) const;
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return ran_; }

 private:
  struct Node {
    const char* op;
    Shape shape;
    std::vector<int> inputs;
    BackwardFn backward;  // empty for leaves
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
  bool ran_ = false;
};

namespace ops {

enum class Act { sigmoid, leaky_relu };
enum class Bin { add, sub, hadamard };

// ---- elementwise ----
Tensor activation(Graph* g, Act kind, const Tensor& x, double slope = 0.01);
Tensor sigmoid(Graph* g, const Tensor& x);
Tensor leaky_relu(Graph* g, const Tensor& x, double slope = 0.01);
Tensor binary(Graph* g, Bin kind, const Tensor& a, const Tensor& b);
Tensor add(Graph* g, const Tensor& a, const Tensor& b);
Tensor sub(Graph* g, const Tensor& a, const Tensor& b);
Tensor hadamard(Graph* g, const Tensor& a, const Tensor& b);
Tensor scale(Graph* g, const Tensor& x, double c);
Tensor add_const(Graph* g, const Tensor& x, double c);
Tensor sin(Graph* g, const Tensor& x);
Tensor cos(Graph* g, const Tensor& x);

// ---- structure ----
/// 1x1 convolution over the leading (channel) axis: x [C, ...spatial],
/// w [Co, C], b [Co] -> [Co, ...spatial].
Tensor conv1x1(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b);
Tensor concat_channels(Graph* g, const Tensor& a, const Tensor& b);
/// Channels [from, from+count) of x.
Tensor channel_slice(Graph* g, const Tensor& x, std::size_t from, std::size_t count);
Tensor reshape(Graph* g, const Tensor& x, Shape shape);
/// Replicate a single-channel tensor [1, ...] across C channels.
Tensor expand_channels(Graph* g, const Tensor& x, std::size_t channels);
/// Replicate a scalar tensor to an arbitrary shape.
Tensor broadcast_scalar(Graph* g, const Tensor& x, Shape shape);

// ---- reductions ----
Tensor sum(Graph* g, const Tensor& x);
Tensor mean(Graph* g, const Tensor& x);
/// Sum of squared entries (Frobenius norm squared).
Tensor sum_sq(Graph* g, const Tensor& x);

/// Two-layer channel MLP: conv1x1(leaky_relu(conv1x1(x, w1, b1)), w2, b2).
Tensor mlp2(Graph* g, const Tensor& x, const Tensor& w1, const Tensor& b1,
            const Tensor& w2, const Tensor& b2, double slope = 0.01);

}  // namespace ops

// ---- gradient checking ----

struct GradCheckOptions {
  double h = 1e-5;                      // central-difference step, [1e-7, 1e-3]
  std::size_t max_coords_per_input = 0; // 0 = every coordinate
  std::uint64_t seed = 0x51a7e5eedULL;  // coordinate subsampling stream
};

using TensorFn = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences. Returns max over checked coordinates of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
double gradcheck(const TensorFn& f, const std::vector<Tensor>& inputs,
                 const GradCheckOptions& opts = {});

}  // namespace pad
