#include "latentlm/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "latentlm/errors.hpp"

namespace latentlm {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
void validate(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  validate(shape_);
  values_.assign(shape_size(shape_), 0.0);
  if (requires_grad_) grad_.assign(values_.size(), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  validate(shape_);
  if (shape_size(shape_) != values_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  if (requires_grad_) grad_.assign(values_.size(), 0.0);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : values_.size() / shape_.back(); }
std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on && grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
  if (!on) grad_.clear();
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

void check_finite(std::span<const double> values, const char* what) {
  for (double x : values)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

}  // namespace latentlm
