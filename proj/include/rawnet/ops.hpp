// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations used by the anti-spoofing network. There is no
// broadcasting: each op accepts exactly the layouts the model feeds it.
// Feature maps are [batch, channel, time]; the unbatched [channel, time]
// form is accepted by the convolution, pooling and normalization ops and
// treated as a batch of one.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rawnet/error.hpp"
#include "rawnet/tensor.hpp"

namespace rawnet {

namespace detail {

struct Bct {
  std::size_t batch, channels, time;
};

template <typename T>
Bct as_bct(const Tensor<T>& x, const char* op) {
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
  throw ShapeError(std::string(op) + ": expected [C,T] or [B,C,T], got " + shape_str(x.shape()));
}

inline Shape bct_shape(bool batched, std::size_t b, std::size_t c, std::size_t t) {
  return batched ? Shape{b, c, t} : Shape{c, t};
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace detail

inline std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                        std::size_t padding = 0) {
  return (length + 2 * padding - kernel) / stride + 1;
}

/// Cross-correlation of x [B,Cin,T] with kernels [Cout,Cin,K], zero padding
/// of `padding` samples on both sides.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride = 1,
                 std::size_t padding = 0) {
  const auto in = detail::as_bct(x, "conv1d");
  if (w.rank() != 3) throw ShapeError("conv1d: kernels must be [Cout,Cin,K], got " + shape_str(w.shape()));
  const std::size_t c_out = w.dim(0), k_len = w.dim(2);
  if (w.dim(1) != in.channels)
    throw ShapeError("conv1d: input has " + std::to_string(in.channels) + " channels but kernels expect " +
                     std::to_string(w.dim(1)));
  if (stride == 0) throw ValueError("conv1d: stride must be positive");
  if (in.time + 2 * padding < k_len)
    throw ShapeError("conv1d: input length " + std::to_string(in.time) + " shorter than kernel " +
                     std::to_string(k_len));
  const std::size_t t_out = conv1d_output_length(in.time, k_len, stride, padding);
  const std::size_t c_in = in.channels, t_in = in.time, batch = in.batch;

  // For tap k the valid output range is t with 0 <= t*stride + k - padding < t_in.
  auto tap_range = [=](std::size_t k) {
    std::size_t lo = 0;
    if (k < padding) lo = (padding - k + stride - 1) / stride;
    std::size_t hi = 0;
    if (t_in + padding > k) hi = std::min(t_out, (t_in + padding - k - 1) / stride + 1);
    return std::pair{lo, std::max(lo, hi)};
  };

  std::vector<T> out(batch * c_out * t_out, T(0));
  const auto xs = x.data();
  const auto ws = w.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < c_out; ++o) {
      T* y = out.data() + (b * c_out + o) * t_out;
      for (std::size_t i = 0; i < c_in; ++i) {
        const T* xr = xs.data() + (b * c_in + i) * t_in;
        const T* wr = ws.data() + (o * c_in + i) * k_len;
        for (std::size_t k = 0; k < k_len; ++k) {
          const T wk = wr[k];
          if (wk == T(0)) continue;
          auto [lo, hi] = tap_range(k);
          if (stride == 1) {
            for (std::size_t t = lo; t < hi; ++t) y[t] += wk * xr[t + k - padding];
          } else {
            for (std::size_t t = lo; t < hi; ++t) y[t] += wk * xr[t * stride + k - padding];
          }
        }
      }
    }
  }

  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  return detail::make_result<T>(
      detail::bct_shape(x.rank() == 3, batch, c_out, t_out), std::move(out), {xn, wn},
      [=](detail::Node<T>& self) {
        const T* gy = self.grad.data();
        const T* xd = xn->data.data();
        const T* wd = wn->data.data();
        T* gx = nullptr;
        T* gw = nullptr;
        if (xn->requires_grad) {
          xn->ensure_grad();
          gx = xn->grad.data();
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          gw = wn->grad.data();
        }
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < c_out; ++o) {
            const T* g = gy + (b * c_out + o) * t_out;
            for (std::size_t i = 0; i < c_in; ++i) {
              const std::size_t xoff = (b * c_in + i) * t_in;
              const std::size_t woff = (o * c_in + i) * k_len;
              for (std::size_t k = 0; k < k_len; ++k) {
                auto [lo, hi] = tap_range(k);
                if (gx) {
                  const T wk = wd[woff + k];
                  for (std::size_t t = lo; t < hi; ++t) gx[xoff + t * stride + k - padding] += wk * g[t];
                }
                if (gw) {
                  T acc = 0;
                  for (std::size_t t = lo; t < hi; ++t) acc += g[t] * xd[xoff + t * stride + k - padding];
                  gw[woff + k] += acc;
                }
              }
            }
          }
        }
      });
}

/// Non-overlapping max pooling; the trailing remainder is dropped. The
/// gradient goes to the first maximal element of each window.
template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& x, std::size_t window) {
  const auto in = detail::as_bct(x, "maxpool1d");
  if (window == 0) throw ValueError("maxpool1d: window must be positive");
  if (in.time < window)
    throw ShapeError("maxpool1d: length " + std::to_string(in.time) + " shorter than window " +
                     std::to_string(window));
  const std::size_t t_out = in.time / window;
  const std::size_t rows = in.batch * in.channels;
  std::vector<T> out(rows * t_out);
  std::vector<std::size_t> argmax(rows * t_out);
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < t_out; ++t) {
      std::size_t base = r * in.time + t * window;
      std::size_t best = base;
      for (std::size_t j = 1; j < window; ++j)
        if (xs[base + j] > xs[best]) best = base + j;
      out[r * t_out + t] = xs[best];
      argmax[r * t_out + t] = best;
    }
  }
  auto xn = x.node_ptr();
  return detail::make_result<T>(detail::bct_shape(x.rank() == 3, in.batch, in.channels, t_out), std::move(out),
                                {xn}, [xn, argmax = std::move(argmax)](detail::Node<T>& self) {
                                  xn->ensure_grad();
                                  for (std::size_t i = 0; i < argmax.size(); ++i)
                                    xn->grad[argmax[i]] += self.grad[i];
                                });
}

enum class Mode { train, eval };

/// Running statistics of a batch-normalization layer. Initialized to mean 0,
/// variance 1 so eval mode is usable before any training step.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels, T momentum_ = T(0.1), T eps_ = T(1e-5))
      : running_mean(channels, T(0)), running_var(channels, T(1)), momentum(momentum_), eps(eps_) {}
};

/// Per-channel normalization over batch and time followed by gamma/beta.
/// Train mode normalizes with batch statistics and updates the running
/// estimates (unbiased variance); eval mode uses the running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode) {
  const auto in = detail::as_bct(x, "batch_norm");
  const std::size_t C = in.channels, B = in.batch, L = in.time;
  if (gamma.numel() != C || beta.numel() != C)
    throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(C) + " entries");
  if (state.running_mean.size() != C || state.running_var.size() != C)
    throw ShapeError("batch_norm: running statistics sized for a different channel count");
  const std::size_t n = B * L;
  const auto xs = x.data();

  std::vector<T> mean(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (mode == Mode::train) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) s += xs[(b * C + c) * L + t];
      const double m = s / static_cast<double>(n);
      double ss = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) {
          const double d = xs[(b * C + c) * L + t] - m;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(n);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
      const double unbiased = n > 1 ? ss / static_cast<double>(n - 1) : var;
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * static_cast<T>(m);
      state.running_var[c] =
          (T(1) - state.momentum) * state.running_var[c] + state.momentum * static_cast<T>(unbiased);
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  std::vector<T> xhat(x.numel()), out(x.numel());
  const auto g = gamma.data();
  const auto bt = beta.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (b * C + c) * L;
      for (std::size_t t = 0; t < L; ++t) {
        xhat[off + t] = (xs[off + t] - mean[c]) * inv_std[c];
        out[off + t] = g[c] * xhat[off + t] + bt[c];
      }
    }

  auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
  return detail::make_result<T>(
      x.shape(), std::move(out), {xn, gn, bn},
      [=, xhat = std::move(xhat)](detail::Node<T>& self) {
        const T* gy = self.grad.data();
        std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * L;
            for (std::size_t t = 0; t < L; ++t) {
              sum_g[c] += gy[off + t];
              sum_gx[c] += gy[off + t] * xhat[off + t];
            }
          }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) gn->grad[c] += sum_gx[c];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) bn->grad[c] += sum_g[c];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t off = (b * C + c) * L;
              const T gc = gn->data[c];
              for (std::size_t t = 0; t < L; ++t) {
                T d;
                if (mode == Mode::train) {
                  // dL/dx = gamma/sigma * (g - mean(g) - xhat * mean(g * xhat))
                  d = gc * inv_std[c] * (gy[off + t] - sum_g[c] * inv_n - xhat[off + t] * sum_gx[c] * inv_n);
                } else {
                  d = gc * inv_std[c] * gy[off + t];
                }
                xn->grad[off + t] += d;
              }
            }
        }
      });
}

/// Eval-only overload for read-only statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     const BatchNormState<T>& state, Mode mode) {
  if (mode == Mode::train) throw GraphError("batch_norm: train mode needs mutable running statistics");
  BatchNormState<T> copy = state;
  return batch_norm(x, gamma, beta, copy, Mode::eval);
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] >= T(0) ? xs[i] : slope * xs[i];
  auto xn = x.node_ptr();
  return detail::make_result<T>(x.shape(), std::move(out), {xn}, [xn, slope](detail::Node<T>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[i] += xn->data[i] >= T(0) ? self.grad[i] : slope * self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = detail::sigmoid_scalar(xs[i]);
  auto xn = x.node_ptr();
  return detail::make_result<T>(x.shape(), out, {xn}, [xn, out](detail::Node<T>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < out.size(); ++i) xn->grad[i] += self.grad[i] * out[i] * (T(1) - out[i]);
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  std::vector<T> out(a.numel());
  const auto as = a.data();
  const auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

/// Sum of all elements as a one-element tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  auto xn = x.node_ptr();
  return detail::make_result<T>({1}, {s}, {xn}, [xn](detail::Node<T>& self) {
    xn->ensure_grad();
    for (auto& g : xn->grad) g += self.grad[0];
  });
}

/// [B,C,T] -> [B,C] average over time.
template <typename T>
Tensor<T> mean_over_time(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("mean_over_time: expected [B,C,T], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  std::vector<T> out(B * C, T(0));
  const auto xs = x.data();
  for (std::size_t r = 0; r < B * C; ++r) {
    T s = 0;
    for (std::size_t t = 0; t < L; ++t) s += xs[r * L + t];
    out[r] = s / static_cast<T>(L);
  }
  auto xn = x.node_ptr();
  return detail::make_result<T>({B, C}, std::move(out), {xn}, [xn, B, C, L](detail::Node<T>& self) {
    xn->ensure_grad();
    const T inv = T(1) / static_cast<T>(L);
    for (std::size_t r = 0; r < B * C; ++r)
      for (std::size_t t = 0; t < L; ++t) xn->grad[r * L + t] += self.grad[r] * inv;
  });
}

/// y[b,c,t] = x[b,c,t] * s[b,c] + s[b,c]: the combined multiplicative and
/// additive channel scaling applied after each residual block.
template <typename T>
Tensor<T> scale_and_shift(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() != 3 || s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
    throw ShapeError("scale_and_shift: expected x [B,C,T] and s [B,C], got " + shape_str(x.shape()) + " and " +
                     shape_str(s.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), L = x.dim(2);
  const auto xs = x.data();
  const auto ss = s.data();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < L; ++t) out[r * L + t] = xs[r * L + t] * ss[r] + ss[r];
  auto xn = x.node_ptr(), sn = s.node_ptr();
  return detail::make_result<T>(x.shape(), std::move(out), {xn, sn}, [xn, sn, rows, L](detail::Node<T>& self) {
    const T* g = self.grad.data();
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < L; ++t) xn->grad[r * L + t] += g[r * L + t] * sn->data[r];
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t t = 0; t < L; ++t) acc += g[r * L + t] * (xn->data[r * L + t] + T(1));
        sn->grad[r] += acc;
      }
    }
  });
}

/// [B,C,T] -> [B,T,C].
template <typename T>
Tensor<T> channels_last(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("channels_last: expected [B,C,T], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const auto xs = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < L; ++t) out[(b * L + t) * C + c] = xs[(b * C + c) * L + t];
  auto xn = x.node_ptr();
  return detail::make_result<T>({B, L, C}, std::move(out), {xn}, [xn, B, C, L](detail::Node<T>& self) {
    xn->ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < L; ++t) xn->grad[(b * C + c) * L + t] += self.grad[(b * L + t) * C + c];
  });
}

/// x [B,D] (or [D]) times weight [O,D] transposed, plus bias [O].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2) throw ShapeError("linear: weight must be [O,D], got " + shape_str(weight.shape()));
  const std::size_t O = weight.dim(0), D = weight.dim(1);
  const bool batched = x.rank() == 2;
  if (!(x.rank() == 1 || batched) || x.dim(x.rank() - 1) != D)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  if (bias.numel() != O) throw ShapeError("linear: bias must have " + std::to_string(O) + " entries");
  const std::size_t B = batched ? x.dim(0) : 1;
  const auto xs = x.data();
  const auto ws = weight.data();
  const auto bs = bias.data();
  std::vector<T> out(B * O);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) {
      T acc = bs[o];
      const T* wr = ws.data() + o * D;
      const T* xr = xs.data() + b * D;
      for (std::size_t d = 0; d < D; ++d) acc += wr[d] * xr[d];
      out[b * O + o] = acc;
    }
  auto xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.node_ptr();
  return detail::make_result<T>(batched ? Shape{B, O} : Shape{O}, std::move(out), {xn, wn, bn},
                                [xn, wn, bn, B, O, D](detail::Node<T>& self) {
                                  const T* g = self.grad.data();
                                  if (xn->requires_grad) {
                                    xn->ensure_grad();
                                    for (std::size_t b = 0; b < B; ++b)
                                      for (std::size_t o = 0; o < O; ++o) {
                                        const T go = g[b * O + o];
                                        const T* wr = wn->data.data() + o * D;
                                        T* gx = xn->grad.data() + b * D;
                                        for (std::size_t d = 0; d < D; ++d) gx[d] += go * wr[d];
                                      }
                                  }
                                  if (wn->requires_grad) {
                                    wn->ensure_grad();
                                    for (std::size_t b = 0; b < B; ++b)
                                      for (std::size_t o = 0; o < O; ++o) {
                                        const T go = g[b * O + o];
                                        const T* xr = xn->data.data() + b * D;
                                        T* gw = wn->grad.data() + o * D;
                                        for (std::size_t d = 0; d < D; ++d) gw[d] += go * xr[d];
                                      }
                                  }
                                  if (bn->requires_grad) {
                                    bn->ensure_grad();
                                    for (std::size_t b = 0; b < B; ++b)
                                      for (std::size_t o = 0; o < O; ++o) bn->grad[o] += g[b * O + o];
                                  }
                                });
}

/// Numerically stable softmax of one row.
template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  const T m = *std::max_element(logits.begin(), logits.end());
  std::vector<T> p(logits.size());
  T z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
  for (auto& v : p) v /= z;
  return p;
}

template <typename T>
std::vector<T> log_softmax(std::span<const T> logits) {
  const T m = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (T v : logits) z += std::exp(v - m);
  const T lse = m + std::log(z);
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

/// Mean over the batch of -log softmax(logits)[label]. Logits are [B,K] or
/// [K] (one label). Gradient per row is (softmax - onehot) / B.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const bool batched = logits.rank() == 2;
  if (!(logits.rank() == 1 || batched))
    throw ShapeError("softmax_cross_entropy: logits must be [K] or [B,K], got " + shape_str(logits.shape()));
  const std::size_t B = batched ? logits.dim(0) : 1;
  const std::size_t K = logits.dim(logits.rank() - 1);
  if (labels.size() != B)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(B));
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= K) throw ValueError("softmax_cross_entropy: label out of range");
  const auto ls = logits.data();
  std::vector<T> probs(B * K);
  T loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    auto row = ls.subspan(b * K, K);
    auto lsm = log_softmax<T>(row);
    loss -= lsm[static_cast<std::size_t>(labels[b])];
    for (std::size_t k = 0; k < K; ++k) probs[b * K + k] = std::exp(lsm[k]);
  }
  loss /= static_cast<T>(B);
  std::vector<int> lab(labels.begin(), labels.end());
  auto ln = logits.node_ptr();
  return detail::make_result<T>({1}, {loss}, {ln},
                                [ln, probs = std::move(probs), lab = std::move(lab), B, K](detail::Node<T>& self) {
                                  ln->ensure_grad();
                                  const T scale = self.grad[0] / static_cast<T>(B);
                                  for (std::size_t b = 0; b < B; ++b)
                                    for (std::size_t k = 0; k < K; ++k) {
                                      T g = probs[b * K + k] - (static_cast<int>(k) == lab[b] ? T(1) : T(0));
                                      ln->grad[b * K + k] += scale * g;
                                    }
                                });
}

}  // namespace rawnet
