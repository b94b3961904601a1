#include "expnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace expnet {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw std::invalid_argument("shape extents must be positive, got " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape) : Tensor(shape, Array<Scalar>::Zero(shape_size(shape))) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array<Scalar> values, bool requires_grad) : node_(std::make_shared<Node>()) {
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("tensor shape " + shape_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape) {
  return Tensor(std::move(shape));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Array<Scalar>::Constant(n, value));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad) {
  Array<Scalar> v(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar x : values) v[i++] = x;
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value) {
  return full({1}, value);
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename Scalar>
const Array<Scalar>& Tensor<Scalar>::grad() const {
  if (node_->grad.size() != node_->value.size()) node_->grad = Array<Scalar>::Zero(node_->value.size());
  return node_->grad;
}

template <typename Scalar>
Array<Scalar>& Tensor<Scalar>::mutable_grad() {
  grad();
  return node_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  node_->grad = Array<Scalar>::Zero(node_->value.size());
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(shape(), values());
}

template <typename Scalar>
void Tensor<Scalar>::check_finite(const std::string& what) const {
  if (!node_->value.allFinite()) throw std::runtime_error("non-finite value in " + what);
}

namespace {
template <typename Scalar>
Tape<Scalar>*& active_tape() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}
}  // namespace

template <typename Scalar>
Tape<Scalar>::Tape() : previous_(active_tape<Scalar>()) {
  active_tape<Scalar>() = this;
}

template <typename Scalar>
Tape<Scalar>::~Tape() {
  active_tape<Scalar>() = previous_;
}

template <typename Scalar>
Tape<Scalar>* Tape<Scalar>::active() {
  return active_tape<Scalar>();
}

template <typename Scalar>
void Tape<Scalar>::record(const char* op, const Tensor<Scalar>& output, BackwardFn fn) {
  output.node()->requires_grad = true;
  output.node()->owner = this;
  entries_.push_back(Entry{op, output.node(), std::move(fn)});
}

template <typename Scalar>
Array<Scalar>& Tape<Scalar>::grad(const NodePtr& node) {
  if (node->owner == this) {
    if (node->grad.size() != node->value.size()) node->grad = Array<Scalar>::Zero(node->value.size());
    return node->grad;
  }
  auto it = leaf_index_.find(node.get());
  if (it == leaf_index_.end()) {
    it = leaf_index_.emplace(node.get(), leaf_grads_.size()).first;
    leaf_grads_.emplace_back(node, Array<Scalar>::Zero(node->value.size()));
  }
  return leaf_grads_[it->second].second;
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss, bool flush_leaves) {
  if (loss.size() != 1) throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) throw std::invalid_argument("loss is not connected to any tensor that requires grad");
  grad(loss.node())[0] += Scalar(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.size() == 0) continue;
    it->backward(*this);
  }
  if (flush_leaves) {
    for (auto& [node, g] : leaf_grads_) {
      if (node->grad.size() != g.size()) node->grad = Array<Scalar>::Zero(g.size());
      node->grad += g;
    }
  }
}

template <typename Scalar>
std::vector<std::string> Tape<Scalar>::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.emplace_back(e.op);
  return names;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace expnet
