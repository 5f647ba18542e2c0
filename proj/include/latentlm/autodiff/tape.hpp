#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "latentlm/autodiff/tensor.hpp"

namespace latentlm {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
};

/// Reverse-mode differentiation tape. Nodes are appended in execution order,
/// which is a topological order of the computation graph; backward() walks
/// them in reverse.
///
/// A tape on which nothing requires gradients records no backward closures,
/// so the same forward code serves as the inference path.
class Tape {
 public:
  /// Receives the tape and the handle of the node being differentiated.
  using BackwardFn = std::function<void(Tape&, Var self)>;

  enum class Mode { kTraining, kInference };

  Tape() = default;
  explicit Tape(Mode mode) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value with no gradient.
  Var constant(Tensor t);
  /// Value owned by the tape whose gradient is kept for inspection.
  Var leaf(Tensor t);
  /// Binds an external tensor by reference. In training mode, if the tensor
  /// requires a gradient, backward() accumulates into its grad buffer. The
  /// tensor must outlive the tape and stay unmodified while the tape is alive.
  Var parameter(const Tensor& t);

  Mode mode() const { return mode_; }

  /// Records the result of an operation. `backward` runs only if one of
  /// `inputs` requires a gradient. Throws NumericError naming `op` on a
  /// non-finite output.
  Var emit(std::string_view op, Shape shape, std::vector<double> values,
           std::initializer_list<Var> inputs, BackwardFn backward);

  std::span<const double> value(Var v) const;
  const Shape& shape(Var v) const;
  std::size_t rows(Var v) const;
  std::size_t cols(Var v) const;
  bool requires_grad(Var v) const;
  Tensor to_tensor(Var v) const;
  double scalar(Var v) const;

  /// Gradient buffer of `v`, allocated as zeros on first use. Only valid for
  /// nodes that require gradients.
  std::span<double> grad(Var v);
  /// Gradient of `v` after backward(); zeros if `v` was not reached.
  std::vector<double> grad_of(Var v) const;

  /// Propagates d(loss)/d(node) from a scalar loss back to every leaf.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }
  std::string_view op_name(Var v) const;

 private:
  struct Node {
    std::string_view op;
    Shape shape;
    std::vector<double> owned;
    const double* data = nullptr;
    std::size_t size = 0;
    std::vector<double> grad_owned;
    double* grad = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);
  Node& node(Var v);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
  Mode mode_ = Mode::kTraining;
};

}  // namespace latentlm
