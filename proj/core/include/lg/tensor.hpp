#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lg/errors.hpp"
#include "lg/rng.hpp"

namespace lg {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

// Dense row-major f64 tensor. Value-semantics handle to shared storage;
// operation outputs are never mutated after creation, leaves (parameters,
// inputs) may be rewritten between steps through raw_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int dim(int i) const;
  int64_t size() const;

  std::span<const double> data() const;
  std::span<double> raw_data();  // leaf mutation only (optimizer, loaders, FD probes)

  bool requires_grad() const;
  // Empty until the reverse sweep first accumulates into this tensor.
  std::span<const double> grad() const;
  bool grad_allocated() const;
  // Grad buffer sized to the tensor, zero-filled on first use.
  std::vector<double>& grad_ref();
  void zero_grad();

  double item() const;
  double at(std::initializer_list<int> idx) const;

  // True when the reverse sweep must deposit a gradient here.
  bool needs_grad() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    int node = -1;            // producing node id in `graph`, -1 for leaves
    const Graph* graph = nullptr;
  };
  std::shared_ptr<Impl> impl_;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  const Impl& impl() const;
  friend class Graph;
};

// Reverse-mode tape. Nodes are appended in execution order, so inputs of
// node k always have ids < k; backward is one reverse sweep that runs each
// node's closure at most once.
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor& out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Recording off => emit() returns plain forward values (inference mode).
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  // Create the op output and, when any input needs a gradient, append the
  // node. The closure reads out.grad() and accumulates into its captured
  // inputs' grad buffers.
  Tensor emit(const char* op_name, Shape out_shape, std::vector<double> out_data,
              const std::vector<Tensor>& inputs, BackwardFn backward);

  // Seed d(loss)/d(loss)=1 and sweep the tape once in reverse.
  // `loss` must be a recorded scalar; a second call without reset() throws.
  void backward(const Tensor& loss);

  void reset();

  size_t node_count() const { return nodes_.size(); }
  // Closure invocations during the last backward (test introspection).
  size_t last_backward_visits() const { return last_visits_; }
  const std::vector<int>& node_inputs(size_t node) const { return nodes_[node].inputs; }
  const std::string& node_op(size_t node) const { return nodes_[node].op; }

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;  // producing node ids, -1 for leaf inputs
    std::shared_ptr<Tensor::Impl> out;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
  bool consumed_ = false;
  size_t last_visits_ = 0;
};

// ---- operations ------------------------------------------------------
// Elementwise ops accept equal shapes, or a "prefix" operand that matches
// the leading axes of the other and broadcasts over the trailing ones
// (a C-vector over a CxHxW map). Anything else throws DimensionError.

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double s);
Tensor neg(Graph& g, const Tensor& a);

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor vecmat(Graph& g, const Tensor& v, const Tensor& w);  // [k]x[k,n] -> [n]
Tensor transpose(Graph& g, const Tensor& x);                // 2-d only
// Adds b over the last axis of x (each row of a [T,d] gets b[d]).
Tensor bias_add(Graph& g, const Tensor& x, const Tensor& b);
Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);
Tensor tanh(Graph& g, const Tensor& x);
Tensor log(Graph& g, const Tensor& x);
Tensor abs(Graph& g, const Tensor& x);

// Softmax over the last axis; every row sums to 1.
Tensor softmax(Graph& g, const Tensor& x);
// p_i = mask_i * exp(h_i) / sum_j mask_j * exp(h_j) over a flat logit
// vector; masked-out entries are exactly 0. All-zero mask throws.
Tensor masked_softmax(Graph& g, const Tensor& logits, const std::vector<uint8_t>& mask);

// Zero-mean unit-variance over the last axis, then gain/bias affine.
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Same normalization taken over the channel axis of a [C,H,W] map at each
// spatial cell; gain/bias are per-channel.
Tensor layer_norm_cells(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias,
                        double eps = 1e-5);

Tensor l2_normalize(Graph& g, const Tensor& v, double eps = 1e-12);

Tensor concat(Graph& g, const std::vector<Tensor>& parts);  // along axis 0
Tensor reshape(Graph& g, const Tensor& x, Shape shape);

// Cross-correlation: x [C,H,W], kernel [C',C,k,k], k in {1,3}.
// Output size (H + 2*padding - k)/stride + 1 must be integral.
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& kernel, int stride, int padding);

// softmax(q k^T / sqrt(d)) v for q,k,v [T,d].
Tensor scaled_dot_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v);

Tensor sum(Graph& g, const Tensor& x);   // -> [1]
Tensor mean(Graph& g, const Tensor& x);  // -> [1]

Tensor pick(Graph& g, const Tensor& x, int64_t flat_index);  // -> [1]
Tensor pick_many(Graph& g, const Tensor& x, const std::vector<int64_t>& flat_indices);
Tensor row(Graph& g, const Tensor& table, int r);  // [V,d] -> [d]

// win x win patch of a [C,H,W] map as [win^2, C] tokens; out-of-bounds
// cells read as zeros (right/bottom zero padding).
Tensor gather_window(Graph& g, const Tensor& x, int row0, int col0, int win);
// Inverse of gather_window over a full tiling: writes every window back
// into a [C,H,W] map, dropping padded cells.
Tensor assemble_windows(Graph& g, const std::vector<Tensor>& windows, int channels, int height,
                        int width, int win);

struct LinearLayer {
  Tensor w;
  Tensor b;
};

// Dense stack with ReLU between layers; the final layer stays linear.
Tensor mlp_forward(Graph& g, const Tensor& x, const std::vector<LinearLayer>& layers);

}  // namespace lg
