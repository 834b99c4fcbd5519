#include "asc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace asc {

namespace {

thread_local bool grad_mode_enabled = true;

void require_finite(const Buffer& values, const char* op) {
  for (Scalar v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

}  // namespace

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("shape dimensions must be positive: " + shape_string(shape));
    n *= d;
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

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool enabled) { grad_mode_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

Tensor::Tensor(Shape shape, Buffer values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<Index>(values.size())) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  require_finite(values, "construction");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  const Index n = shape_numel(shape);
  return Tensor(std::move(shape), Buffer(static_cast<std::size_t>(n), value), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, Rng& rng, Scalar stddev, bool requires_grad) {
  std::normal_distribution<Scalar> dist(0, stddev);
  Buffer v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi, bool requires_grad) {
  std::uniform_real_distribution<Scalar> dist(lo, hi);
  Buffer v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_op(Shape shape, Buffer values, std::vector<Tensor> parents,
                       const char* op, std::function<void(detail::Node&)> backward) {
  require_finite(values, op);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->is_leaf = false;
  node->op = op;
  bool track = GradMode::enabled() &&
               std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

detail::Node& Tensor::node() const {
  if (!node_) throw ShapeError("use of an undefined tensor");
  return *node_;
}

Index Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_string(shape()));
  return node().shape[static_cast<std::size_t>(axis)];
}

std::span<Scalar> Tensor::mutable_data() {
  if (!node().is_leaf) throw ShapeError("only leaf tensors can be mutated");
  return node().data;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node().data[0];
}

Scalar Tensor::at(std::initializer_list<Index> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch");
  Index flat = 0;
  std::size_t i = 0;
  for (Index v : index) {
    if (v < 0 || v >= s[i]) throw ShapeError("index out of range");
    flat = flat * s[i] + v;
    ++i;
  }
  return node().data[static_cast<std::size_t>(flat)];
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() != 2) throw ShapeError("matrix() requires rank 2, got " + shape_string(shape()));
  return ConstMatrixMap(node().data.data(), dim(0), dim(1));
}

void Tensor::set_requires_grad(bool value) {
  if (!node().is_leaf) throw ShapeError("requires_grad can only be set on leaves");
  node().requires_grad = value;
}

Buffer Tensor::grad() const {
  const auto& n = node();
  if (n.grad.empty()) return Buffer(n.data.size(), Scalar(0));
  return n.grad;
}

void Tensor::zero_grad() { node().grad.clear(); }

void Tensor::backward() const {
  auto& root = node();
  if (root.data.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Reverse topological order via iterative post-order DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), Scalar(0));
  }
  root.ensure_grad()[0] += 1;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf && n->backward_fn) n->backward_fn(*n);
  }
  for (auto* n : order) {
    if (n->is_leaf) {
      require_finite(n->grad, "backward");
    } else {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

Tensor Tensor::detach() const { return Tensor(shape(), node().data, false); }

}  // namespace asc
