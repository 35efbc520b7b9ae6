#include "lg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace lg {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

static void validate_shape(const Shape& shape) {
  for (int d : shape) {
    if (d < 1) throw DimensionError("tensor shape entries must be >= 1, got " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<Impl>();
  impl->data.assign(static_cast<size_t>(numel(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.impl_->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw Error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
int Tensor::rank() const { return static_cast<int>(impl().shape.size()); }
int Tensor::dim(int i) const { return impl().shape.at(static_cast<size_t>(i)); }
int64_t Tensor::size() const { return static_cast<int64_t>(impl().data.size()); }

std::span<const double> Tensor::data() const { return impl().data; }

std::span<double> Tensor::raw_data() {
  if (!impl_) throw Error("use of an undefined tensor");
  return impl_->data;
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

std::span<const double> Tensor::grad() const { return impl().grad; }

bool Tensor::grad_allocated() const { return !impl().grad.empty(); }

std::vector<double>& Tensor::grad_ref() {
  if (!impl_) throw Error("use of an undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
  return impl().data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Impl& im = impl();
  if (idx.size() != im.shape.size()) {
    throw DimensionError("index rank mismatch for tensor " + shape_str(im.shape));
  }
  int64_t flat = 0;
  size_t k = 0;
  for (int i : idx) {
    flat = flat * im.shape[k] + i;
    ++k;
  }
  return im.data[static_cast<size_t>(flat)];
}

bool Tensor::needs_grad() const {
  const Impl& im = impl();
  return im.requires_grad || im.node >= 0;
}

Tensor Graph::emit(const char* op_name, Shape out_shape, std::vector<double> out_data,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out = Tensor::from_data(std::move(out_shape), std::move(out_data));
  bool track = recording_;
  if (track) {
    bool any = false;
    for (const Tensor& in : inputs) {
      if (in.defined() && in.needs_grad()) {
        any = true;
        break;
      }
    }
    track = any;
  }
  if (!track) return out;
  if (consumed_) {
    throw NumericError("graph already back-propagated; reset() before recording new operations");
  }

  Node node;
  node.op = op_name;
  for (const Tensor& in : inputs) {
    if (!in.defined()) continue;
    if (in.impl_->node >= 0 && in.impl_->graph != this) {
      throw Error(std::string("operation '") + op_name + "' mixes tensors from different graphs");
    }
    node.inputs.push_back(in.impl_->node);
  }
  node.out = out.impl_;
  node.backward = std::move(backward);
  out.impl_->node = static_cast<int>(nodes_.size());
  out.impl_->graph = this;
  nodes_.push_back(std::move(node));
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (consumed_) throw NumericError("backward() called twice without reset()");
  if (loss.size() != 1) {
    throw DimensionError("backward() expects a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.defined() || loss.impl_->node < 0 || loss.impl_->graph != this) {
    throw NumericError("backward() loss is not an output recorded on this graph");
  }
  consumed_ = true;
  loss.impl_->grad.assign(1, 1.0);
  last_visits_ = 0;
  for (int k = loss.impl_->node; k >= 0; --k) {
    Node& node = nodes_[static_cast<size_t>(k)];
    if (node.out->grad.empty()) continue;  // not reachable from the loss
    if (node.backward) {
      node.backward(Tensor(node.out));
      ++last_visits_;
    }
  }
}

void Graph::reset() {
  for (Node& node : nodes_) {
    node.out->node = -1;
    node.out->graph = nullptr;
  }
  nodes_.clear();
  consumed_ = false;
  last_visits_ = 0;
}

}  // namespace lg
