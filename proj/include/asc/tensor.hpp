#ifndef ASC_TENSOR_HPP
#define ASC_TENSOR_HPP

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "asc/common.hpp"

namespace asc {

using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  Buffer& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), Scalar(0));
    return grad;
  }
};

}  // namespace detail

/// Graph recording switch; disabled inside a NoGradGuard scope (per thread).
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies refer to the same node, so a parameter
/// held by a model and by an optimizer is one object. Values are fixed after
/// construction; only leaves may be mutated (by an optimizer or loader), and
/// gradients accumulate until zero_grad().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, Scalar stddev = 1, bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi, bool requires_grad = false);

  /// Builds the result of a differentiable op. Records `parents` and
  /// `backward` only when grad mode is on and some parent requires grad.
  static Tensor from_op(Shape shape, Buffer values, std::vector<Tensor> parents,
                        const char* op, std::function<void(detail::Node&)> backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(node().shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return static_cast<Index>(node().data.size()); }

  std::span<const Scalar> data() const { return node().data; }
  /// Write access for leaves (parameters, loaded state).
  std::span<Scalar> mutable_data();
  const Buffer& values() const { return node().data; }
  Scalar item() const;
  Scalar operator[](Index flat) const { return node().data[static_cast<std::size_t>(flat)]; }
  Scalar at(std::initializer_list<Index> index) const;

  /// Rank-2 view of the data.
  ConstMatrixMap matrix() const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return node().is_leaf; }
  bool has_grad() const { return !node().grad.empty(); }
  /// Gradient buffer; zeros when nothing has been accumulated.
  Buffer grad() const;
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  /// This tensor must hold exactly one element.
  void backward() const;

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  detail::Node& node() const;
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

}  // namespace asc

#endif  // ASC_TENSOR_HPP
