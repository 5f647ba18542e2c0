#include "latentlm/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "latentlm/errors.hpp"
#include "latentlm/simd/kernels.hpp"

namespace latentlm::ops {
namespace {

const simd::KernelTable& K() { return simd::active(); }

void require_matrix(const Tape& t, Var v, const char* op) {
  if (t.shape(v).size() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape(v)));
}

void require_same(const Tape& t, Var a, Var b, const char* op) {
  if (t.shape(a) != t.shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(t.shape(a)) + " vs " +
                     shape_string(t.shape(b)));
}

std::vector<double> copy_of(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

Segments Segments::from_lengths(std::span<const std::size_t> lengths) {
  Segments s;
  s.offsets.reserve(lengths.size() + 1);
  s.offsets.push_back(0);
  for (std::size_t n : lengths) s.offsets.push_back(s.offsets.back() + n);
  return s;
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  require_matrix(t, a, "matmul");
  require_matrix(t, b, "matmul");
  const std::size_t m = t.shape(a)[0], k = t.shape(a)[1], n = t.shape(b)[1];
  if (t.shape(b)[0] != k)
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(t.shape(a)) + " x " +
                     shape_string(t.shape(b)));
  std::vector<double> c(m * n);
  K().gemm_nn(m, n, k, t.value(a).data(), t.value(b).data(), c.data(), false);
  return t.emit("matmul", {m, n}, std::move(c), {a, b}, [a, b, m, n, k](Tape& t, Var self) {
    const double* dc = t.grad(self).data();
    if (t.requires_grad(a)) K().gemm_nt(m, k, n, dc, t.value(b).data(), t.grad(a).data(), true);
    if (t.requires_grad(b)) K().gemm_tn(k, n, m, t.value(a).data(), dc, t.grad(b).data(), true);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  require_matrix(t, a, "matmul_nt");
  require_matrix(t, b, "matmul_nt");
  const std::size_t m = t.shape(a)[0], k = t.shape(a)[1], n = t.shape(b)[0];
  if (t.shape(b)[1] != k)
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_string(t.shape(a)) +
                     " x " + shape_string(t.shape(b)) + "^T");
  std::vector<double> c(m * n);
  K().gemm_nt(m, n, k, t.value(a).data(), t.value(b).data(), c.data(), false);
  return t.emit("matmul_nt", {m, n}, std::move(c), {a, b}, [a, b, m, n, k](Tape& t, Var self) {
    const double* dc = t.grad(self).data();
    if (t.requires_grad(a)) K().gemm_nn(m, k, n, dc, t.value(b).data(), t.grad(a).data(), true);
    if (t.requires_grad(b)) K().gemm_tn(n, k, m, dc, t.value(a).data(), t.grad(b).data(), true);
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = *x.tape;
  require_matrix(t, weight, "linear");
  const std::size_t in = t.cols(x), out = t.shape(weight)[0], m = t.rows(x);
  if (t.shape(weight)[1] != in || t.value(bias).size() != out)
    throw ShapeError("linear: input " + shape_string(t.shape(x)) + " incompatible with weight " +
                     shape_string(t.shape(weight)) + " and bias " + shape_string(t.shape(bias)));
  std::vector<double> y(m * out);
  K().gemm_nt(m, out, in, t.value(x).data(), t.value(weight).data(), y.data(), false);
  const auto bv = t.value(bias);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < out; ++j) y[r * out + j] += bv[j];
  Shape shape = t.shape(x);
  shape.back() = out;
  return t.emit("linear", std::move(shape), std::move(y), {x, weight, bias},
                [x, weight, bias, m, in, out](Tape& t, Var self) {
                  const double* dy = t.grad(self).data();
                  if (t.requires_grad(x))
                    K().gemm_nn(m, in, out, dy, t.value(weight).data(), t.grad(x).data(), true);
                  if (t.requires_grad(weight))
                    K().gemm_tn(out, in, m, dy, t.value(x).data(), t.grad(weight).data(), true);
                  if (t.requires_grad(bias)) {
                    auto db = t.grad(bias);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < out; ++j) db[j] += dy[r * out + j];
                  }
                });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  require_same(t, a, b, "add");
  const auto av = t.value(a), bv = t.value(b);
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.emit("add", t.shape(a), std::move(y), {a, b}, [a, b](Tape& t, Var self) {
    const auto g = t.grad(self);
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      auto d = t.grad(in);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = *x.tape;
  const std::size_t n = t.cols(x), m = t.rows(x);
  if (t.value(bias).size() != n)
    throw ShapeError("add_bias: bias " + shape_string(t.shape(bias)) + " vs input " +
                     shape_string(t.shape(x)));
  std::vector<double> y = copy_of(t.value(x));
  const auto bv = t.value(bias);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] += bv[j];
  return t.emit("add_bias", t.shape(x), std::move(y), {x, bias}, [x, bias, m, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    if (t.requires_grad(x)) {
      auto d = t.grad(x);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      auto d = t.grad(bias);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) d[j] += g[r * n + j];
    }
  });
}

Var scale(Var x, double factor) {
  Tape& t = *x.tape;
  std::vector<double> y = copy_of(t.value(x));
  for (double& v : y) v *= factor;
  return t.emit("scale", t.shape(x), std::move(y), {x}, [x, factor](Tape& t, Var self) {
    const auto g = t.grad(self);
    auto d = t.grad(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  require_same(t, a, b, "mul");
  const auto av = t.value(a), bv = t.value(b);
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return t.emit("mul", t.shape(a), std::move(y), {a, b}, [a, b](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto av = t.value(a), bv = t.value(b);
    if (t.requires_grad(a)) {
      auto d = t.grad(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto d = t.grad(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
  Tape& t = *x.tape;
  const auto xv = t.value(x);
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double u = xv[i];
    y[i] = 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
  }
  return t.emit("gelu", t.shape(x), std::move(y), {x}, [x](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto xv = t.value(x);
    auto d = t.grad(x);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double u = xv[i];
      const double th = std::tanh(kGeluC * (u + kGeluA * u * u * u));
      const double dth = (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
      d[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * u * dth);
    }
  });
}

Var tanh(Var x) {
  Tape& t = *x.tape;
  std::vector<double> y = copy_of(t.value(x));
  for (double& v : y) v = std::tanh(v);
  return t.emit("tanh", t.shape(x), std::move(y), {x}, [x](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto y = t.value(self);
    auto d = t.grad(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var softplus(Var x) {
  Tape& t = *x.tape;
  std::vector<double> y = copy_of(t.value(x));
  for (double& v : y) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  return t.emit("softplus", t.shape(x), std::move(y), {x}, [x](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto xv = t.value(x);
    auto d = t.grad(x);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double s = xv[i] >= 0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                                  : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
      d[i] += g[i] * s;
    }
  });
}

Var clamp(Var x, double lo, double hi) {
  Tape& t = *x.tape;
  std::vector<double> y = copy_of(t.value(x));
  for (double& v : y) v = std::clamp(v, lo, hi);
  return t.emit("clamp", t.shape(x), std::move(y), {x}, [x, lo, hi](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto xv = t.value(x);
    auto d = t.grad(x);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) d[i] += g[i];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = *x.tape;
  if (!(eps > 0.0)) throw RangeError("layer_norm: eps must be positive");
  const std::size_t n = t.cols(x), m = t.rows(x);
  if (t.value(gain).size() != n || t.value(bias).size() != n)
    throw ShapeError("layer_norm: gain/bias length must equal last axis " + std::to_string(n));
  const auto xv = t.value(x), gv = t.value(gain), bv = t.value(bias);
  std::vector<double> xhat(m * n), rstd(m), y(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mu) * rstd[r];
      y[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  return t.emit("layer_norm", t.shape(x), std::move(y), {x, gain, bias},
                [x, gain, bias, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, Var self) {
                  const auto g = t.grad(self);
                  const auto gv = t.value(gain);
                  if (t.requires_grad(gain)) {
                    auto d = t.grad(gain);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < n; ++j) d[j] += g[r * n + j] * xhat[r * n + j];
                  }
                  if (t.requires_grad(bias)) {
                    auto d = t.grad(bias);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < n; ++j) d[j] += g[r * n + j];
                  }
                  if (t.requires_grad(x)) {
                    auto d = t.grad(x);
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t r = 0; r < m; ++r) {
                      double mean_dx = 0.0, mean_dx_xhat = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = g[r * n + j] * gv[j];
                        mean_dx += dxh;
                        mean_dx_xhat += dxh * xhat[r * n + j];
                      }
                      mean_dx *= inv_n;
                      mean_dx_xhat *= inv_n;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = g[r * n + j] * gv[j];
                        d[r * n + j] += rstd[r] * (dxh - mean_dx - xhat[r * n + j] * mean_dx_xhat);
                      }
                    }
                  }
                });
}

Var softmax_rows(Var x) {
  Tape& t = *x.tape;
  const std::size_t n = t.cols(x), m = t.rows(x);
  const auto xv = t.value(x);
  check_finite(xv, "softmax_rows input");
  std::vector<double> y(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (y[r * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= s;
  }
  return t.emit("softmax_rows", t.shape(x), std::move(y), {x}, [x, m, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    const auto y = t.value(self);
    auto d = t.grad(x);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, int ignore_id) {
  Tape& t = *logits.tape;
  const std::size_t v = t.cols(logits), m = t.rows(logits);
  if (targets.size() != m)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(m) + " rows");
  const auto lv = t.value(logits);
  std::vector<double> probs(m * v, 0.0);
  std::vector<int> tg(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (tg[r] == ignore_id) continue;
    if (tg[r] < 0 || static_cast<std::size_t>(tg[r]) >= v)
      throw RangeError("cross_entropy: target " + std::to_string(tg[r]) + " outside [0, " +
                       std::to_string(v) + ")");
    const double* row = lv.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += (probs[r * v + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= s;
    total += mx + std::log(s) - row[tg[r]];
    ++count;
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  return t.emit("cross_entropy", {1}, {loss}, {logits},
                [logits, m, v, count, tg = std::move(tg), probs = std::move(probs), ignore_id](Tape& t, Var self) {
                  if (count == 0) return;
                  const double g = t.grad(self)[0] / static_cast<double>(count);
                  auto d = t.grad(logits);
                  for (std::size_t r = 0; r < m; ++r) {
                    if (tg[r] == ignore_id) continue;
                    for (std::size_t j = 0; j < v; ++j) d[r * v + j] += g * probs[r * v + j];
                    d[r * v + static_cast<std::size_t>(tg[r])] -= g;
                  }
                });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = *table.tape;
  require_matrix(t, table, "embedding");
  const std::size_t vocab = t.shape(table)[0], h = t.shape(table)[1];
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  const auto tv = t.value(table);
  std::vector<double> y(ids.size() * h);
  std::vector<int> idv(ids.begin(), ids.end());
  for (std::size_t r = 0; r < idv.size(); ++r) {
    if (idv[r] < 0 || static_cast<std::size_t>(idv[r]) >= vocab)
      throw RangeError("embedding: id " + std::to_string(idv[r]) + " outside table of " +
                       std::to_string(vocab));
    std::copy_n(tv.data() + static_cast<std::size_t>(idv[r]) * h, h, y.data() + r * h);
  }
  const std::size_t count = idv.size();
  return t.emit("embedding", {count, h}, std::move(y), {table},
                [table, h, idv = std::move(idv)](Tape& t, Var self) {
                  const auto g = t.grad(self);
                  auto d = t.grad(table);
                  for (std::size_t r = 0; r < idv.size(); ++r)
                    K().axpy(1.0, g.data() + r * h, d.data() + static_cast<std::size_t>(idv[r]) * h, h);
                });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  Tape& t = *x.tape;
  const std::size_t n = t.cols(x), m = t.rows(x);
  if (rows.empty()) throw ShapeError("gather_rows: no rows requested");
  const auto xv = t.value(x);
  std::vector<double> y(rows.size() * n);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) throw RangeError("gather_rows: row index out of range");
    std::copy_n(xv.data() + idx[r] * n, n, y.data() + r * n);
  }
  const std::size_t count = idx.size();
  return t.emit("gather_rows", {count, n}, std::move(y), {x}, [x, n, idx = std::move(idx)](Tape& t, Var self) {
    const auto g = t.grad(self);
    auto d = t.grad(x);
    for (std::size_t r = 0; r < idx.size(); ++r) K().axpy(1.0, g.data() + r * n, d.data() + idx[r] * n, n);
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& t = *x.tape;
  const std::size_t n = t.cols(x), m = t.rows(x);
  if (begin >= end || end > n) throw ShapeError("slice_cols: invalid column range");
  const std::size_t w = end - begin;
  const auto xv = t.value(x);
  std::vector<double> y(m * w);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(xv.data() + r * n + begin, w, y.data() + r * w);
  Shape shape = t.shape(x);
  shape.back() = w;
  return t.emit("slice_cols", std::move(shape), std::move(y), {x}, [x, m, n, begin, w](Tape& t, Var self) {
    const auto g = t.grad(self);
    auto d = t.grad(x);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < w; ++j) d[r * n + begin + j] += g[r * w + j];
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = *a.tape;
  const std::size_t m = t.rows(a), na = t.cols(a), nb = t.cols(b);
  if (t.rows(b) != m) throw ShapeError("concat_cols: row counts differ");
  const auto av = t.value(a), bv = t.value(b);
  const std::size_t n = na + nb;
  std::vector<double> y(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(av.data() + r * na, na, y.data() + r * n);
    std::copy_n(bv.data() + r * nb, nb, y.data() + r * n + na);
  }
  return t.emit("concat_cols", {m, n}, std::move(y), {a, b}, [a, b, m, na, nb, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    if (t.requires_grad(a)) {
      auto d = t.grad(a);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < na; ++j) d[r * na + j] += g[r * n + j];
    }
    if (t.requires_grad(b)) {
      auto d = t.grad(b);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < nb; ++j) d[r * nb + j] += g[r * n + na + j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = *x.tape;
  if (shape_size(shape) != t.value(x).size())
    throw ShapeError("reshape: " + shape_string(t.shape(x)) + " to " + shape_string(shape));
  return t.emit("reshape", std::move(shape), copy_of(t.value(x)), {x}, [x](Tape& t, Var self) {
    const auto g = t.grad(self);
    auto d = t.grad(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

Var sum(Var x) {
  Tape& t = *x.tape;
  double s = 0.0;
  for (double v : t.value(x)) s += v;
  return t.emit("sum", {1}, {s}, {x}, [x](Tape& t, Var self) {
    const double g = t.grad(self)[0];
    for (double& d : t.grad(x)) d += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.tape->value(x).size())); }

Var mean_rows(Var x) {
  Tape& t = *x.tape;
  const std::size_t n = t.cols(x), m = t.rows(x);
  const auto xv = t.value(x);
  std::vector<double> y(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) y[j] += xv[r * n + j];
  for (double& v : y) v /= static_cast<double>(m);
  return t.emit("mean_rows", {n}, std::move(y), {x}, [x, m, n](Tape& t, Var self) {
    const auto g = t.grad(self);
    auto d = t.grad(x);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] += g[j] * inv;
  });
}

Var add_segment_rows(Var x, Var rows, const Segments& segments) {
  Tape& t = *x.tape;
  const std::size_t n = t.cols(x);
  if (t.rows(x) != segments.total() || t.rows(rows) != segments.count() || t.cols(rows) != n)
    throw ShapeError("add_segment_rows: layout mismatch");
  std::vector<double> y = copy_of(t.value(x));
  const auto rv = t.value(rows);
  for (std::size_t s = 0; s < segments.count(); ++s)
    for (std::size_t r = segments.offsets[s]; r < segments.offsets[s + 1]; ++r)
      for (std::size_t j = 0; j < n; ++j) y[r * n + j] += rv[s * n + j];
  return t.emit("add_segment_rows", t.shape(x), std::move(y), {x, rows},
                [x, rows, n, segments](Tape& t, Var self) {
                  const auto g = t.grad(self);
                  if (t.requires_grad(x)) {
                    auto d = t.grad(x);
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                  }
                  if (t.requires_grad(rows)) {
                    auto d = t.grad(rows);
                    for (std::size_t s = 0; s < segments.count(); ++s)
                      for (std::size_t r = segments.offsets[s]; r < segments.offsets[s + 1]; ++r)
                        for (std::size_t j = 0; j < n; ++j) d[s * n + j] += g[r * n + j];
                  }
                });
}

Var attention(Var q, Var k, Var v, const Segments& segments, std::size_t heads, bool causal,
              const MemorySlot* memory) {
  Tape& t = *q.tape;
  require_same(t, q, k, "attention");
  require_same(t, q, v, "attention");
  const std::size_t h = t.cols(q), total = t.rows(q);
  if (heads == 0 || h % heads != 0) throw ShapeError("attention: hidden size not divisible by heads");
  if (segments.total() != total) throw ShapeError("attention: segments do not cover the input");
  const std::size_t nseg = segments.count();
  if (memory != nullptr) {
    if (t.rows(memory->key) != nseg || t.cols(memory->key) != h || t.rows(memory->value) != nseg ||
        t.cols(memory->value) != h || memory->present.size() != nseg)
      throw ShapeError("attention: memory slot layout mismatch");
  }
  const std::size_t d = h / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));

  // probs layout: per segment, per head, per query row: [mem, key 0 .. key T-1]
  std::vector<std::size_t> base(nseg + 1, 0);
  for (std::size_t s = 0; s < nseg; ++s) {
    const std::size_t len = segments.length(s);
    base[s + 1] = base[s] + heads * len * (len + 1);
  }
  std::vector<double> probs(base[nseg], 0.0);
  std::vector<double> out(total * h, 0.0);
  const auto qv = t.value(q), kv = t.value(k), vv = t.value(v);
  const double* mk = memory ? t.value(memory->key).data() : nullptr;
  const double* mv = memory ? t.value(memory->value).data() : nullptr;
  const auto& kern = K();

  for (std::size_t s = 0; s < nseg; ++s) {
    const std::size_t off = segments.offsets[s], len = segments.length(s);
    const bool has_mem = memory != nullptr && memory->present[s] != 0;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      for (std::size_t i = 0; i < len; ++i) {
        double* p = probs.data() + base[s] + (hd * len + i) * (len + 1);
        const double* qi = qv.data() + (off + i) * h + hd * d;
        const std::size_t last = causal ? i + 1 : len;
        double mx = -std::numeric_limits<double>::infinity();
        if (has_mem) mx = p[0] = kern.dot(qi, mk + s * h + hd * d, d) * sc;
        for (std::size_t j = 0; j < last; ++j) {
          p[1 + j] = kern.dot(qi, kv.data() + (off + j) * h + hd * d, d) * sc;
          mx = std::max(mx, p[1 + j]);
        }
        double z = 0.0;
        if (has_mem) z += (p[0] = std::exp(p[0] - mx));
        for (std::size_t j = 0; j < last; ++j) z += (p[1 + j] = std::exp(p[1 + j] - mx));
        const double inv = 1.0 / z;
        double* o = out.data() + (off + i) * h + hd * d;
        if (has_mem) {
          p[0] *= inv;
          kern.axpy(p[0], mv + s * h + hd * d, o, d);
        }
        for (std::size_t j = 0; j < last; ++j) {
          p[1 + j] *= inv;
          kern.axpy(p[1 + j], vv.data() + (off + j) * h + hd * d, o, d);
        }
      }
    }
  }

  MemorySlot mem_copy;
  const bool use_mem = memory != nullptr;
  if (use_mem) mem_copy = *memory;
  const Var mem_k = use_mem ? memory->key : q;
  const Var mem_v = use_mem ? memory->value : q;

  return t.emit(
      "attention", t.shape(q), std::move(out), {q, k, v, mem_k, mem_v},
      [=, probs = std::move(probs), base = std::move(base)](Tape& t, Var self) {
        const auto g = t.grad(self);
        const auto qv = t.value(q), kv = t.value(k), vv = t.value(v);
        const bool gq = t.requires_grad(q), gk = t.requires_grad(k), gv = t.requires_grad(v);
        std::span<double> dq, dk, dv, dmk, dmv;
        if (gq) dq = t.grad(q);
        if (gk) dk = t.grad(k);
        if (gv) dv = t.grad(v);
        const double* mkp = nullptr;
        const double* mvp = nullptr;
        if (use_mem) {
          mkp = t.value(mem_copy.key).data();
          mvp = t.value(mem_copy.value).data();
          if (t.requires_grad(mem_copy.key)) dmk = t.grad(mem_copy.key);
          if (t.requires_grad(mem_copy.value)) dmv = t.grad(mem_copy.value);
        }
        const auto& kern = K();
        std::vector<double> dp;
        for (std::size_t s = 0; s < nseg; ++s) {
          const std::size_t off = segments.offsets[s], len = segments.length(s);
          const bool has_mem = use_mem && mem_copy.present[s] != 0;
          dp.assign(len + 1, 0.0);
          for (std::size_t hd = 0; hd < heads; ++hd) {
            for (std::size_t i = 0; i < len; ++i) {
              const double* p = probs.data() + base[s] + (hd * len + i) * (len + 1);
              const double* go = g.data() + (off + i) * h + hd * d;
              const std::size_t last = causal ? i + 1 : len;
              double acc = 0.0;
              if (has_mem) {
                dp[0] = kern.dot(go, mvp + s * h + hd * d, d);
                acc += p[0] * dp[0];
                if (!dmv.empty()) kern.axpy(p[0], go, dmv.data() + s * h + hd * d, d);
              }
              for (std::size_t j = 0; j < last; ++j) {
                dp[1 + j] = kern.dot(go, vv.data() + (off + j) * h + hd * d, d);
                acc += p[1 + j] * dp[1 + j];
                if (gv) kern.axpy(p[1 + j], go, dv.data() + (off + j) * h + hd * d, d);
              }
              const double* qi = qv.data() + (off + i) * h + hd * d;
              if (has_mem) {
                const double ds = p[0] * (dp[0] - acc) * sc;
                if (gq) kern.axpy(ds, mkp + s * h + hd * d, dq.data() + (off + i) * h + hd * d, d);
                if (!dmk.empty()) kern.axpy(ds, qi, dmk.data() + s * h + hd * d, d);
              }
              for (std::size_t j = 0; j < last; ++j) {
                const double ds = p[1 + j] * (dp[1 + j] - acc) * sc;
                if (gq) kern.axpy(ds, kv.data() + (off + j) * h + hd * d, dq.data() + (off + i) * h + hd * d, d);
                if (gk) kern.axpy(ds, qi, dk.data() + (off + j) * h + hd * d, d);
              }
            }
          }
        }
      });
}

Var reparameterize(Var mu, Var logvar, const Tensor& eps) {
  Tape& t = *mu.tape;
  require_same(t, mu, logvar, "reparameterize");
  const auto m = t.value(mu), lv = t.value(logvar);
  if (eps.size() != m.size()) throw ShapeError("reparameterize: noise size mismatch");
  std::vector<double> z(m.size()), e(eps.values().begin(), eps.values().end());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = m[i] + std::exp(0.5 * lv[i]) * e[i];
  return t.emit("reparameterize", t.shape(mu), std::move(z), {mu, logvar},
                [mu, logvar, e = std::move(e)](Tape& t, Var self) {
                  const auto g = t.grad(self);
                  if (t.requires_grad(mu)) {
                    auto d = t.grad(mu);
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                  }
                  if (t.requires_grad(logvar)) {
                    const auto lv = t.value(logvar);
                    auto d = t.grad(logvar);
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * e[i] * 0.5 * std::exp(0.5 * lv[i]);
                  }
                });
}

Var gaussian_kl(Var mu, Var logvar) {
  Tape& t = *mu.tape;
  require_same(t, mu, logvar, "gaussian_kl");
  const auto m = t.value(mu), lv = t.value(logvar);
  check_finite(m, "gaussian_kl mu");
  check_finite(lv, "gaussian_kl logvar");
  std::vector<double> kl(m.size());
  for (std::size_t i = 0; i < kl.size(); ++i)
    kl[i] = 0.5 * (m[i] * m[i] + std::max(0.0, std::expm1(lv[i]) - lv[i]));
  return t.emit("gaussian_kl", t.shape(mu), std::move(kl), {mu, logvar}, [mu, logvar](Tape& t, Var self) {
    const auto g = t.grad(self);
    if (t.requires_grad(mu)) {
      const auto m = t.value(mu);
      auto d = t.grad(mu);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * m[i];
    }
    if (t.requires_grad(logvar)) {
      const auto lv = t.value(logvar);
      auto d = t.grad(logvar);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * 0.5 * std::expm1(lv[i]);
    }
  });
}

Var hinge_sum(Var x, double lambda) {
  Tape& t = *x.tape;
  if (lambda < 0.0) throw RangeError("hinge_sum: lambda must be nonnegative");
  double s = 0.0;
  for (double v : t.value(x)) s += std::max(lambda, v);
  return t.emit("hinge_sum", {1}, {s}, {x}, [x, lambda](Tape& t, Var self) {
    const double g = t.grad(self)[0];
    const auto xv = t.value(x);
    auto d = t.grad(x);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (xv[i] > lambda) d[i] += g;
  });
}

}  // namespace latentlm::ops
