#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace expnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Scalar>
class Tape;

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  Array<Scalar> value;
  Array<Scalar> grad;
  bool requires_grad = false;
  // Tape that produced this node; null for leaves.
  const Tape<Scalar>* owner = nullptr;
};

}  // namespace detail

/// Dense row-major array that can take part in a reverse-mode graph.
///
/// A Tensor is a cheap handle: copies share storage. Operations never mutate
/// their inputs; they allocate a fresh node for the result. Leaves (model
/// parameters) are the only tensors whose values are written in place, and
/// only by the optimizer or by checkpoint loading.
template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Array<Scalar> values, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Scalar value);
  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return node_->value.size(); }

  const Array<Scalar>& values() const { return node_->value; }
  Array<Scalar>& mutable_values() { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }
  Scalar item() const;
  Scalar operator[](Index flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return node_ && node_->grad.size() > 0; }
  /// Accumulated gradient; zeros if nothing has been accumulated yet.
  const Array<Scalar>& grad() const;
  Array<Scalar>& mutable_grad();
  void zero_grad();

  /// Value copy with no graph attachment.
  Tensor detach() const;

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), values().template cast<Other>());
  }

  /// Throws if any stored value is NaN or infinite.
  void check_finite(const std::string& what) const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Ordered record of differentiable operations.
///
/// Constructing a Tape makes it the active tape of the calling thread until it
/// is destroyed; operations executed meanwhile record their backward rules
/// here whenever any input requires a gradient. A tape is meant to live for a
/// single forward/backward pass.
template <typename Scalar>
class Tape {
 public:
  using Node = detail::Node<Scalar>;
  using NodePtr = std::shared_ptr<Node>;
  using BackwardFn = std::function<void(Tape&)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(const char* op, const Tensor<Scalar>& output, BackwardFn fn);

  /// Gradient accumulator for `node`. Nodes produced by this tape keep their
  /// gradient on the node; leaves are buffered on the tape until flushed.
  Array<Scalar>& grad(const NodePtr& node);

  /// Reverse replay from a scalar loss. When `flush_leaves` is set, buffered
  /// leaf gradients are added into the leaves' own grad arrays.
  void backward(const Tensor<Scalar>& loss, bool flush_leaves = true);

  /// Leaf gradients gathered by the last backward, in first-touch order.
  const std::deque<std::pair<NodePtr, Array<Scalar>>>& leaf_gradients() const { return leaf_grads_; }

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> op_names() const;

 private:
  struct Entry {
    const char* op;
    NodePtr output;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  // deque: references returned by grad() stay valid while more leaves arrive
  std::deque<std::pair<NodePtr, Array<Scalar>>> leaf_grads_;
  std::unordered_map<const Node*, std::size_t> leaf_index_;
  Tape* previous_ = nullptr;
};

/// Attach `fn` as the backward rule of `out` when a tape is active and any
/// input needs a gradient.
template <typename Scalar, typename Fn>
void record_op(const char* op, const Tensor<Scalar>& out,
               std::initializer_list<const Tensor<Scalar>*> inputs, Fn&& fn) {
  Tape<Scalar>* tape = Tape<Scalar>::active();
  if (tape == nullptr) return;
  bool any = false;
  for (const Tensor<Scalar>* t : inputs) any = any || t->requires_grad();
  if (!any) return;
  tape->record(op, out, typename Tape<Scalar>::BackwardFn(std::forward<Fn>(fn)));
}

/// Convenience: populate gradients of every leaf reachable from `loss`.
template <typename Scalar>
void backward(Tape<Scalar>& tape, const Tensor<Scalar>& loss) {
  tape.backward(loss, true);
}

}  // namespace expnet
