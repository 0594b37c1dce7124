// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rawnet/ops.hpp"
#include "rawnet/tensor.hpp"

namespace rawnet {

/// Weights of a single-layer GRU. Gate blocks are stacked in the order
/// reset, update, candidate: input_weight is [3H, D], hidden_weight [3H, H].
template <typename T>
struct GruParams {
  Tensor<T> input_weight;
  Tensor<T> hidden_weight;
  Tensor<T> input_bias;
  Tensor<T> hidden_bias;

  std::size_t hidden_size() const { return hidden_weight.dim(1); }
  std::size_t input_size() const { return input_weight.dim(1); }
};

/// Runs the GRU over x [B,T,D] (or [T,D]) from a zero initial state and
/// returns the final hidden state [B,H] (or [H]).
///
///   r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
template <typename T>
Tensor<T> gru_sequence(const Tensor<T>& x, const GruParams<T>& p) {
  const bool batched = x.rank() == 3;
  if (!(batched || x.rank() == 2))
    throw ShapeError("gru_sequence: expected [T,D] or [B,T,D], got " + shape_str(x.shape()));
  const std::size_t B = batched ? x.dim(0) : 1;
  const std::size_t L = x.dim(x.rank() - 2);
  const std::size_t D = x.dim(x.rank() - 1);
  const std::size_t H = p.hidden_size();
  if (p.input_weight.rank() != 2 || p.input_weight.dim(0) != 3 * H || p.input_weight.dim(1) != D)
    throw ShapeError("gru_sequence: input weight " + shape_str(p.input_weight.shape()) +
                     " incompatible with input " + shape_str(x.shape()));
  if (p.hidden_weight.rank() != 2 || p.hidden_weight.dim(0) != 3 * H || p.input_bias.numel() != 3 * H ||
      p.hidden_bias.numel() != 3 * H)
    throw ShapeError("gru_sequence: inconsistent GRU parameter shapes");

  const auto xs = x.data();
  const T* wi = p.input_weight.data().data();
  const T* wh = p.hidden_weight.data().data();
  const T* bi = p.input_bias.data().data();
  const T* bh = p.hidden_bias.data().data();

  // Saved per (b, t): previous hidden state, gates r, z, n and the hidden
  // candidate pre-activation W_hn h + b_hn.
  const std::size_t steps = B * L;
  std::vector<T> h_prev(steps * H), r_s(steps * H), z_s(steps * H), n_s(steps * H), hn_s(steps * H);
  std::vector<T> out(B * H);
  std::vector<T> gi(3 * H), gh(3 * H), h(H);

  for (std::size_t b = 0; b < B; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t t = 0; t < L; ++t) {
      const T* xt = xs.data() + (b * L + t) * D;
      for (std::size_t j = 0; j < 3 * H; ++j) {
        T a = bi[j];
        const T* row = wi + j * D;
        for (std::size_t d = 0; d < D; ++d) a += row[d] * xt[d];
        gi[j] = a;
        T c = bh[j];
        const T* hrow = wh + j * H;
        for (std::size_t k = 0; k < H; ++k) c += hrow[k] * h[k];
        gh[j] = c;
      }
      const std::size_t s = (b * L + t) * H;
      for (std::size_t k = 0; k < H; ++k) {
        const T r = detail::sigmoid_scalar(gi[k] + gh[k]);
        const T z = detail::sigmoid_scalar(gi[H + k] + gh[H + k]);
        const T n = std::tanh(gi[2 * H + k] + r * gh[2 * H + k]);
        h_prev[s + k] = h[k];
        r_s[s + k] = r;
        z_s[s + k] = z;
        n_s[s + k] = n;
        hn_s[s + k] = gh[2 * H + k];
      }
      for (std::size_t k = 0; k < H; ++k) h[k] = (T(1) - z_s[s + k]) * n_s[s + k] + z_s[s + k] * h_prev[s + k];
    }
    std::copy(h.begin(), h.end(), out.begin() + static_cast<std::ptrdiff_t>(b * H));
  }

  auto xn = x.node_ptr();
  auto win = p.input_weight.node_ptr(), whn = p.hidden_weight.node_ptr();
  auto bin = p.input_bias.node_ptr(), bhn = p.hidden_bias.node_ptr();
  return detail::make_result<T>(
      batched ? Shape{B, H} : Shape{H}, std::move(out), {xn, win, whn, bin, bhn},
      [=, h_prev = std::move(h_prev), r_s = std::move(r_s), z_s = std::move(z_s), n_s = std::move(n_s),
       hn_s = std::move(hn_s)](detail::Node<T>& self) {
        for (auto* n : {xn.get(), win.get(), whn.get(), bin.get(), bhn.get()})
          if (n->requires_grad) n->ensure_grad();
        T* gx = xn->requires_grad ? xn->grad.data() : nullptr;
        T* gwi = win->requires_grad ? win->grad.data() : nullptr;
        T* gwh = whn->requires_grad ? whn->grad.data() : nullptr;
        T* gbi = bin->requires_grad ? bin->grad.data() : nullptr;
        T* gbh = bhn->requires_grad ? bhn->grad.data() : nullptr;
        const T* Wi = win->data.data();
        const T* Wh = whn->data.data();
        const T* X = xn->data.data();

        std::vector<T> dh(H), dh_next(H), dgi(3 * H), dgh(3 * H);
        for (std::size_t b = 0; b < B; ++b) {
          std::copy_n(self.grad.data() + b * H, H, dh.begin());
          for (std::size_t t = L; t-- > 0;) {
            const std::size_t s = (b * L + t) * H;
            for (std::size_t k = 0; k < H; ++k) {
              const T r = r_s[s + k], z = z_s[s + k], n = n_s[s + k], hp = h_prev[s + k];
              const T dn = dh[k] * (T(1) - z);
              const T dz = dh[k] * (hp - n);
              const T dn_pre = dn * (T(1) - n * n);
              const T dr = dn_pre * hn_s[s + k];
              const T dr_pre = dr * r * (T(1) - r);
              const T dz_pre = dz * z * (T(1) - z);
              dgi[k] = dr_pre;
              dgi[H + k] = dz_pre;
              dgi[2 * H + k] = dn_pre;
              dgh[k] = dr_pre;
              dgh[H + k] = dz_pre;
              dgh[2 * H + k] = dn_pre * r;
              dh_next[k] = dh[k] * z;
            }
            const T* xt = X + (b * L + t) * D;
            for (std::size_t j = 0; j < 3 * H; ++j) {
              const T gi_j = dgi[j], gh_j = dgh[j];
              if (gbi) gbi[j] += gi_j;
              if (gbh) gbh[j] += gh_j;
              if (gwi) {
                T* row = gwi + j * D;
                for (std::size_t d = 0; d < D; ++d) row[d] += gi_j * xt[d];
              }
              if (gx) {
                T* gxt = gx + (b * L + t) * D;
                const T* row = Wi + j * D;
                for (std::size_t d = 0; d < D; ++d) gxt[d] += gi_j * row[d];
              }
              const T* hrow = Wh + j * H;
              T* grow = gwh ? gwh + j * H : nullptr;
              for (std::size_t k = 0; k < H; ++k) {
                if (grow) grow[k] += gh_j * h_prev[s + k];
                dh_next[k] += gh_j * hrow[k];
              }
            }
            dh.swap(dh_next);
          }
        }
      });
}

}  // namespace rawnet
