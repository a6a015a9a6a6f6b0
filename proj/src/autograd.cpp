#include "vlltr/autograd.hpp"

#include <unordered_set>

#include "vlltr/error.hpp"

namespace vlltr {

std::span<double> Node::grad_buffer() {
  if (grad.size() == 0) grad = Tensor(value.shape(), 0.0);
  return grad.data();
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->op = requires_grad ? "param" : "const";
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var make_op(std::string op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->op = std::move(op);
  out.node_->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node());
  }
  return out;
}

Var detach(const Var& v) { return Var::constant(v.value()); }

void Var::backward() const {
  if (node_->value.size() != 1)
    throw ShapeError("backward() needs a scalar root, got " + shape_str(node_->value.shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed it is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Interior gradients are not needed after the sweep.
  for (Node* n : order)
    if (n->backward && n != node_.get()) n->grad = Tensor();
}

}  // namespace vlltr
