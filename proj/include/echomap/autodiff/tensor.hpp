#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace echomap::ad {

using Shape = std::vector<int>;

// Zero extents are legal for plain storage (empty dataset slots); graph ops
// validate the positive-extent shapes they need themselves.
inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("shape extents must be nonnegative");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Plain dense array. Used for parameters, dataset payloads and anywhere a
// value lives outside a differentiation graph.
struct NdArray {
  Shape shape;
  std::vector<double> data;

  NdArray() = default;
  NdArray(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw std::invalid_argument("NdArray: shape/data size mismatch");
  }

  static NdArray zeros(Shape s) {
    std::size_t n = numel(s);
    return NdArray(std::move(s), std::vector<double>(n, 0.0));
  }
  static NdArray full(Shape s, double v) {
    std::size_t n = numel(s);
    return NdArray(std::move(s), std::vector<double>(n, v));
  }
  static NdArray scalar(double v) { return NdArray({1}, {v}); }

  std::size_t size() const { return data.size(); }
};

class Graph;

// Handle to one node of a Graph. Cheap to copy; the Graph owns the storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* g, int id) : graph_(g), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const {
    if (!graph_) throw std::logic_error("Tensor: empty handle");
    return *graph_;
  }
  int id() const { return id_; }

  const Shape& shape() const;
  std::span<const double> values() const;
  std::span<const double> grad() const;
  bool requires_grad() const;
  double value_at(std::size_t i) const { return values()[i]; }
  double scalar() const {
    auto v = values();
    if (v.size() != 1) throw std::logic_error("Tensor::scalar: size != 1");
    return v[0];
  }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Operations append nodes in execution order, which is a
// topological order of the dataflow by construction; backward replays the
// tape once in reverse. One graph per training step, single execution
// context; throw it away afterwards.
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated by backward() for grad-requiring nodes
    std::function<void(Graph&, int)> backprop;  // null for leaves
    bool requires_grad = false;
  };

  Tensor leaf(NdArray value, bool requires_grad) {
    Node n;
    n.shape = std::move(value.shape);
    n.values = std::move(value.data);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  Tensor constant(NdArray value) { return leaf(std::move(value), false); }
  Tensor constant_scalar(double v) { return constant(NdArray::scalar(v)); }

  // Emits an interior node. `requires_grad` should be the OR over parents.
  Tensor emit(Shape shape, std::vector<double> values, bool requires_grad,
              std::function<void(Graph&, int)> backprop) {
    if (numel(shape) != values.size())
      throw std::logic_error("Graph::emit: shape/data mismatch");
    Node n;
    n.shape = std::move(shape);
    n.values = std::move(values);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  std::span<const double> values(int id) const { return nodes_[static_cast<std::size_t>(id)].values; }

  // Gradient accumulation target for a parent node; empty span when the
  // parent does not participate in differentiation.
  std::span<double> grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return {};
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

  void backward(const Tensor& root) {
    if (&root.graph() != this) throw std::logic_error("backward: root from another graph");
    if (backward_done_)
      throw std::logic_error("backward: already called on this graph (reset required)");
    const int rid = root.id();
    Node& r = nodes_[static_cast<std::size_t>(rid)];
    if (r.values.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!r.requires_grad)
      throw std::invalid_argument("backward: root does not depend on any grad-requiring leaf");
    for (int id = 0; id <= rid; ++id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.requires_grad) n.grad.assign(n.values.size(), 0.0);
    }
    r.grad[0] = 1.0;
    for (int id = rid; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.requires_grad && n.backprop) n.backprop(*this, id);
    }
    for (int id = 0; id <= rid; ++id)
      for (double gv : nodes_[static_cast<std::size_t>(id)].grad)
        if (!std::isfinite(gv)) throw std::runtime_error("backward: non-finite gradient");
    backward_done_ = true;
  }

  bool backward_done() const { return backward_done_; }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Shape& Tensor::shape() const { return graph().node(id_).shape; }
inline std::span<const double> Tensor::values() const { return graph().node(id_).values; }
inline bool Tensor::requires_grad() const { return graph().node(id_).requires_grad; }
inline std::span<const double> Tensor::grad() const {
  const auto& n = graph().node(id_);
  if (!n.requires_grad) throw std::logic_error("Tensor::grad: node does not require grad");
  if (n.grad.size() != n.values.size())
    throw std::logic_error("Tensor::grad: backward has not run");
  return n.grad;
}

inline NdArray to_array(const Tensor& t) {
  auto v = t.values();
  return NdArray(t.shape(), std::vector<double>(v.begin(), v.end()));
}

}  // namespace echomap::ad
