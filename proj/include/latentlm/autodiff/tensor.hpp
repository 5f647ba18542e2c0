#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace latentlm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 array. Leaves that take part in training carry a
/// gradient buffer of the same size.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rank() const { return shape_.size(); }
  /// Product of all dimensions but the last.
  std::size_t rows() const;
  /// Size of the last dimension.
  std::size_t cols() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !grad_.empty() || values_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  /// Gradient accumulation target for tapes that bind this tensor read-only.
  std::span<double> grad_accumulator() const { return grad_; }
  void zero_grad();

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
  mutable std::vector<double> grad_;
  bool requires_grad_ = false;
};

/// Throws NumericError naming `what` if any value is NaN or Inf.
void check_finite(std::span<const double> values, const char* what);

}  // namespace latentlm
