#include "latentlm/autodiff/adam.hpp"

#include <cmath>
#include <string>

#include "latentlm/errors.hpp"

namespace latentlm {

void adam_step(std::span<Tensor* const> params, AdamState& state) {
  if (state.m.empty() && state.t == 0) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i]->size() || params[i]->grad().size() != params[i]->size())
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " shape changed");
  }
  ++state.t;
  const AdamHyper& hp = state.hyper;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->values();
    auto g = params[i]->grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g[j];
      v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
  }
}

double clip_grad_norm(std::span<Tensor* const> params, double max_norm) {
  double sq = 0.0;
  for (const Tensor* p : params)
    for (double g : p->grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Tensor* p : params)
      for (double& g : p->grad()) g *= f;
  }
  return norm;
}

}  // namespace latentlm
