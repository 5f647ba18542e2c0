#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "latentlm/autodiff/tensor.hpp"

namespace latentlm {

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  AdamState() = default;
  explicit AdamState(AdamHyper h) : hyper(h) {}
};

/// One bias-corrected Adam update using each tensor's gradient buffer.
/// Moment buffers are created on the first call; later calls require the
/// same parameter list.
void adam_step(std::span<Tensor* const> params, AdamState& state);

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor* const> params, double max_norm);

}  // namespace latentlm
