// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Rank-2 operands are [rows x cols];
// row-wise ops (softmax, layer_norm) act over the last axis.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "ctcadapt/tensor.hpp"

namespace ctcadapt {

namespace detail {

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <class F>
std::vector<double> map_values(const Tensor& x, F f) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return out;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](detail::Node& self) {
    if (a.requires_grad()) {
      auto& an = *a.node();
      an.ensure_grad();
      detail::gemm_nt(self.grad.data(), b.node()->data.data(), an.grad.data(), m, k, n);
    }
    if (b.requires_grad()) {
      auto& bn = *b.node();
      bn.ensure_grad();
      detail::gemm_tn(a.node()->data.data(), self.grad.data(), bn.grad.data(), m, k, n);
    }
  });
}

// x[m x k] * w[k x n] + bias[n]; bias may be undefined.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  detail::require_rank2(x, "affine");
  detail::require_rank2(w, "affine");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) {
    throw DimensionError("affine: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != n)) {
    throw DimensionError("affine: bias " + shape_str(bias.shape()) + " does not match output width " +
                         std::to_string(n));
  }
  std::vector<double> out(m * n, 0.0);
  if (has_bias) {
    auto bd = bias.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), out.begin() + i * n);
  }
  detail::gemm_nn(x.data().data(), w.data().data(), out.data(), m, k, n);
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result({m, n}, std::move(out), std::move(inputs),
                             [x, w, bias, has_bias, m, k, n](detail::Node& self) {
                               if (x.requires_grad()) {
                                 auto& xn = *x.node();
                                 xn.ensure_grad();
                                 detail::gemm_nt(self.grad.data(), w.node()->data.data(), xn.grad.data(), m, k, n);
                               }
                               if (w.requires_grad()) {
                                 auto& wn = *w.node();
                                 wn.ensure_grad();
                                 detail::gemm_tn(x.node()->data.data(), self.grad.data(), wn.grad.data(), m, k, n);
                               }
                               if (has_bias && bias.requires_grad()) {
                                 auto& bn = *bias.node();
                                 bn.ensure_grad();
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j) bn.grad[j] += self.grad[i * n + j];
                               }
                             });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto ad = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  return detail::make_result({n, m}, std::move(out), {a}, [a, m, n](detail::Node& self) {
    auto& an = *a.node();
    an.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an.grad[i * n + j] += self.grad[j * m + i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto& tn = *t->node();
      tn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) tn.grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    if (a.requires_grad()) {
      auto& an = *a.node();
      an.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto& bn = *b.node();
      bn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] -= self.grad[i];
    }
  });
}

// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    if (a.requires_grad()) {
      auto& an = *a.node();
      an.ensure_grad();
      const auto& bd = b.node()->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto& bn = *b.node();
      bn.ensure_grad();
      const auto& ad = a.node()->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] += self.grad[i] * ad[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  auto out = detail::map_values(a, [s](double v) { return v * s; });
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a, s](detail::Node& self) {
                               auto& an = *a.node();
                               an.ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += s * self.grad[i];
                             });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({1}, {s}, {a}, [a](detail::Node& self) {
    auto& an = *a.node();
    an.ensure_grad();
    for (double& g : an.grad) g += self.grad[0];
  });
}

inline Tensor relu(const Tensor& x) {
  auto out = detail::map_values(x, [](double v) { return v > 0.0 ? v : 0.0; });
  return detail::make_result(x.shape(), std::move(out), {x},
                             [x](detail::Node& self) {
                               auto& xn = *x.node();
                               xn.ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 if (xn.data[i] > 0.0) xn.grad[i] += self.grad[i];
                             });
}

// GELU, tanh approximation:
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
namespace gelu_constants {
inline constexpr double kSqrt2OverPi = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kCubic = 0.044715;
}  // namespace gelu_constants

inline double gelu_scalar(double x) {
  using namespace gelu_constants;
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kCubic * x * x * x)));
}

inline double gelu_derivative(double x) {
  using namespace gelu_constants;
  const double t = std::tanh(kSqrt2OverPi * (x + kCubic * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kCubic * x * x);
}

inline Tensor gelu(const Tensor& x) {
  auto out = detail::map_values(x, gelu_scalar);
  return detail::make_result(x.shape(), std::move(out), {x},
                             [x](detail::Node& self) {
                               auto& xn = *x.node();
                               xn.ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 xn.grad[i] += self.grad[i] * gelu_derivative(xn.data[i]);
                             });
}

// Normalizes each row over the last axis, then gamma * xhat + beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.rank() == 0 ? 0 : x.cols();
  if (d == 0) throw DimensionError("layer_norm: empty normalization axis");
  if (!(eps >= 0.0)) throw ContractError("layer_norm: eps must be non-negative");
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match last dimension " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double denom = std::sqrt(var + eps);
    // A constant row with eps == 0 has nothing to normalize; xhat is 0.
    const double is = denom > 0.0 ? 1.0 / denom : 0.0;
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gd[j] * h + bd[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](detail::Node& self) {
        const auto& g = self.grad;
        if (gamma.requires_grad() || beta.requires_grad()) {
          auto& gn = *gamma.node();
          auto& bn = *beta.node();
          if (gamma.requires_grad()) gn.ensure_grad();
          if (beta.requires_grad()) bn.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) {
              if (gamma.requires_grad()) gn.grad[j] += g[r * d + j] * xhat[r * d + j];
              if (beta.requires_grad()) bn.grad[j] += g[r * d + j];
            }
        }
        if (x.requires_grad()) {
          auto& xn = *x.node();
          xn.ensure_grad();
          const auto& gam = gamma.node()->data;
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_gh = 0.0, sum_ghx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[r * d + j] * gam[j];
              sum_gh += gh;
              sum_ghx += gh * xhat[r * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[r * d + j] * gam[j];
              xn.grad[r * d + j] += inv_std[r] * (gh - inv_d * sum_gh - xhat[r * d + j] * inv_d * sum_ghx);
            }
          }
        }
      });
}

inline Tensor softmax(const Tensor& x) {
  const std::size_t n = x.cols();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[r * n + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= z;
  }
  std::vector<double> y = out;
  return detail::make_result(x.shape(), std::move(out), {x}, [x, y = std::move(y), rows, n](detail::Node& self) {
    auto& xn = *x.node();
    xn.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) xn.grad[r * n + j] += y[r * n + j] * (self.grad[r * n + j] - dot);
    }
  });
}

inline Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.cols();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] - lse;
  }
  std::vector<double> y = out;
  return detail::make_result(x.shape(), std::move(out), {x}, [x, y = std::move(y), rows, n](detail::Node& self) {
    auto& xn = *x.node();
    xn.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += self.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        xn.grad[r * n + j] += self.grad[r * n + j] - std::exp(y[r * n + j]) * gsum;
    }
  });
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || start + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(x.shape()));
  }
  std::vector<double> out(m * count);
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xd.begin() + i * n + start, count, out.begin() + i * count);
  return detail::make_result({m, count}, std::move(out), {x}, [x, m, n, start, count](detail::Node& self) {
    auto& xn = *x.node();
    xn.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) xn.grad[i * n + start + j] += self.grad[i * count + j];
  });
}

inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  detail::require_rank2(x, "slice_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || start + count > m) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(x.shape()));
  }
  auto xd = x.data();
  std::vector<double> out(xd.begin() + start * n, xd.begin() + (start + count) * n);
  return detail::make_result({count, n}, std::move(out), {x}, [x, n, start](detail::Node& self) {
    auto& xn = *x.node();
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn.grad[start * n + i] += self.grad[i];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row count mismatch");
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto pd = p.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pd.begin() + i * w, w, out.begin() + i * n + off);
    off += w;
  }
  return detail::make_result({m, n}, std::move(out), parts, [parts, m, n](detail::Node& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      if (p.requires_grad()) {
        auto& pn = *p.node();
        pn.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) pn.grad[i * w + j] += self.grad[i * n + off + j];
      }
      off += w;
    }
  });
}

// Sliding windows over rows: out[t] = concat(x[t*stride], ..., x[t*stride + kernel - 1]).
// Turns a 1-D convolution into a matmul against a [kernel*channels x out] weight.
inline Tensor unfold_rows(const Tensor& x, std::size_t kernel, std::size_t stride) {
  detail::require_rank2(x, "unfold_rows");
  const std::size_t t_in = x.dim(0), c = x.dim(1);
  if (kernel == 0 || stride == 0) throw ContractError("unfold_rows: kernel and stride must be positive");
  if (t_in < kernel) {
    throw SequenceTooShortError("unfold_rows: " + std::to_string(t_in) + " frames shorter than kernel " +
                                std::to_string(kernel));
  }
  const std::size_t t_out = (t_in - kernel) / stride + 1;
  const std::size_t w = kernel * c;
  std::vector<double> out(t_out * w);
  auto xd = x.data();
  for (std::size_t t = 0; t < t_out; ++t)
    std::copy_n(xd.begin() + t * stride * c, w, out.begin() + t * w);
  return detail::make_result({t_out, w}, std::move(out), {x}, [x, t_out, w, stride, c](detail::Node& self) {
    auto& xn = *x.node();
    xn.ensure_grad();
    for (std::size_t t = 0; t < t_out; ++t)
      for (std::size_t j = 0; j < w; ++j) xn.grad[t * stride * c + j] += self.grad[t * w + j];
  });
}

}  // namespace ctcadapt
