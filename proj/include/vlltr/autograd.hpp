#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vlltr/tensor.hpp"

namespace vlltr {

struct Node {
  std::string op;
  Tensor value;
  Tensor grad;  // empty (rank 0) until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Zero-initialized gradient buffer, allocated on first use.
  std::span<double> grad_buffer();
};

// Handle to a node of a reverse-mode tape. Leaves (parameters, inputs) are
// long-lived; interior nodes die with the last Var referencing the root.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var parameter(Tensor value) { return Var(std::move(value), true); }
  static Var constant(Tensor value) { return Var(std::move(value), false); }

  const Tensor& value() const { return node_->value; }
  // Direct write access for optimizer updates and checkpoint loads.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }
  double item() const { return node_->value.item(); }
  const std::string& op() const { return node_->op; }

  // Seeds d(self)/d(self) = 1 and propagates; self must hold one element.
  void backward() const;

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_op(std::string, Tensor, std::vector<Var>, std::function<void(Node&)>);
  std::shared_ptr<Node> node_;
};

// Builds a graph node. When no parent requires a gradient the result is a
// detached constant and `backward` is dropped.
Var make_op(std::string op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward);

// Copy of the value with no graph attached.
Var detach(const Var& v);

}  // namespace vlltr
