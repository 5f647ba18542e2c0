#include "latentlm/autodiff/tape.hpp"

#include <string>

#include "latentlm/errors.hpp"

namespace latentlm {

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  Node& back = nodes_.back();
  if (back.data == nullptr) back.data = back.owned.data();
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) {
  if (v.tape != this || v.id >= nodes_.size()) throw Error("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw Error("variable does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::constant(Tensor t) {
  Node n;
  n.op = "constant";
  n.shape = t.shape();
  n.size = t.size();
  n.owned.assign(t.values().begin(), t.values().end());
  return push(std::move(n));
}

Var Tape::leaf(Tensor t) {
  Node n;
  n.op = "leaf";
  n.shape = t.shape();
  n.size = t.size();
  n.owned.assign(t.values().begin(), t.values().end());
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& t) {
  Node n;
  n.op = "parameter";
  n.shape = t.shape();
  n.size = t.size();
  n.data = t.data();
  if (mode_ == Mode::kTraining && t.requires_grad()) {
    n.requires_grad = true;
    n.grad = t.grad_accumulator().data();
  }
  return push(std::move(n));
}

Var Tape::emit(std::string_view op, Shape shape, std::vector<double> values,
               std::initializer_list<Var> inputs, BackwardFn backward) {
  if (shape_size(shape) != values.size())
    throw ShapeError(std::string(op) + ": output shape " + shape_string(shape) +
                     " does not match value count");
  check_finite(values, std::string(op).c_str());
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.size = values.size();
  n.owned = std::move(values);
  for (Var in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = node(v);
  return {n.data, n.size};
}

const Shape& Tape::shape(Var v) const { return node(v).shape; }
std::size_t Tape::cols(Var v) const { return node(v).shape.back(); }
std::size_t Tape::rows(Var v) const {
  const Node& n = node(v);
  return n.size / n.shape.back();
}
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor Tape::to_tensor(Var v) const {
  const Node& n = node(v);
  return Tensor(n.shape, std::vector<double>(n.data, n.data + n.size));
}

double Tape::scalar(Var v) const {
  const Node& n = node(v);
  if (n.size != 1) throw ShapeError("expected a scalar, got shape " + shape_string(n.shape));
  return n.data[0];
}

std::span<double> Tape::grad(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) throw Error("gradient requested for a node that does not require one");
  if (n.grad == nullptr) {
    n.grad_owned.assign(n.size, 0.0);
    n.grad = n.grad_owned.data();
  }
  return {n.grad, n.size};
}

std::vector<double> Tape::grad_of(Var v) const {
  const Node& n = node(v);
  if (n.grad == nullptr) return std::vector<double>(n.size, 0.0);
  return std::vector<double>(n.grad, n.grad + n.size);
}

void Tape::backward(Var loss) {
  Node& root = node(loss);
  if (root.size != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(root.shape));
  if (!root.requires_grad) return;
  grad(loss)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad == nullptr || !n.backward) continue;
    n.backward(*this, Var{this, static_cast<std::uint32_t>(i)});
  }
}

std::string_view Tape::op_name(Var v) const { return node(v).op; }

}  // namespace latentlm
