// SPDX-License-Identifier: Apache-2.0
//
// The anti-spoofing network: fixed sinc front-end, residual blocks with
// feature map scaling, GRU aggregation, a fully connected layer and a
// two-way output (index 0 = bona fide, index 1 = spoof).
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rawnet/error.hpp"
#include "rawnet/gru.hpp"
#include "rawnet/ops.hpp"
#include "rawnet/sinc.hpp"
#include "rawnet/tensor.hpp"

namespace rawnet {

inline constexpr int kBonafideClass = 0;
inline constexpr int kSpoofClass = 1;

struct ModelConfig {
  FilterbankConfig filterbank;
  std::size_t n_samples = 64000;
  std::size_t block1_channels = 128;
  std::size_t block1_count = 2;
  std::size_t block2_channels = 512;
  std::size_t block2_count = 4;
  std::size_t gru_hidden = 1024;
  std::size_t fc_dim = 1024;
  double leaky_slope = 0.3;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  /// The published layout: 64000 samples, 128 sinc filters of 129 taps,
  /// 2x128 and 4x512 residual blocks, GRU(1024), FC(1024), 2 outputs.
  static ModelConfig paper() { return ModelConfig{}; }

  /// Shrunk layout for gradient checks and desk-scale training runs.
  static ModelConfig desk() {
    ModelConfig c;
    c.filterbank.n_filters = 4;
    c.n_samples = 4000;
    c.block1_channels = 4;
    c.block2_channels = 8;
    c.gru_hidden = 16;
    c.fc_dim = 16;
    return c;
  }

  /// Canonical text form; the checkpoint config hash is computed over it.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "n_filters=" << filterbank.n_filters << ";kernel_len=" << filterbank.kernel_len
       << ";sample_rate=" << filterbank.sample_rate << ";f_min=" << filterbank.f_min
       << ";f_max=" << filterbank.f_max << ";scale=" << to_string(filterbank.scale) << ";n_samples=" << n_samples
       << ";block1=" << block1_channels << "x" << block1_count << ";block2=" << block2_channels << "x"
       << block2_count << ";gru=" << gru_hidden << ";fc=" << fc_dim << ";slope=" << leaky_slope
       << ";bn_momentum=" << bn_momentum << ";bn_eps=" << bn_eps;
    return os.str();
  }

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }
};

template <typename T>
struct FmsParams {
  Tensor<T> weight;  // [C, C]
  Tensor<T> bias;    // [C]
};

template <typename T>
struct ResBlockParams {
  Tensor<T> bn1_gamma, bn1_beta;
  BatchNormState<T> bn1_state;
  Tensor<T> conv1;  // [C_out, C_in, 3]
  Tensor<T> bn2_gamma, bn2_beta;
  BatchNormState<T> bn2_state;
  Tensor<T> conv2;       // [C_out, C_out, 3]
  Tensor<T> projection;  // [C_out, C_in, 1]; defined iff C_in != C_out
  FmsParams<T> fms;

  std::size_t in_channels() const { return conv1.dim(1); }
  std::size_t out_channels() const { return conv1.dim(0); }
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Tensor<T> sinc_kernels;  // untracked, never handed to the optimizer
  FrontendParams<T> frontend;
  std::vector<ResBlockParams<T>> blocks;
  GruParams<T> gru;
  Tensor<T> fc_weight, fc_bias;
  Tensor<T> out_weight, out_bias;

  /// Every trainable tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("frontend.bn.gamma", frontend.bn_gamma);
    out.emplace_back("frontend.bn.beta", frontend.bn_beta);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      out.emplace_back(p + "bn1.gamma", b.bn1_gamma);
      out.emplace_back(p + "bn1.beta", b.bn1_beta);
      out.emplace_back(p + "conv1", b.conv1);
      out.emplace_back(p + "bn2.gamma", b.bn2_gamma);
      out.emplace_back(p + "bn2.beta", b.bn2_beta);
      out.emplace_back(p + "conv2", b.conv2);
      if (b.projection.defined()) out.emplace_back(p + "projection", b.projection);
      out.emplace_back(p + "fms.weight", b.fms.weight);
      out.emplace_back(p + "fms.bias", b.fms.bias);
    }
    out.emplace_back("gru.input_weight", gru.input_weight);
    out.emplace_back("gru.hidden_weight", gru.hidden_weight);
    out.emplace_back("gru.input_bias", gru.input_bias);
    out.emplace_back("gru.hidden_bias", gru.hidden_bias);
    out.emplace_back("fc.weight", fc_weight);
    out.emplace_back("fc.bias", fc_bias);
    out.emplace_back("output.weight", out_weight);
    out.emplace_back("output.bias", out_bias);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  /// Batch-norm running statistics (non-trainable buffers), named.
  std::vector<std::pair<std::string, const std::vector<T>*>> named_buffers() const {
    return const_cast<ModelParams*>(this)->mutable_buffers_impl<const std::vector<T>*>();
  }
  std::vector<std::pair<std::string, std::vector<T>*>> mutable_buffers() {
    return mutable_buffers_impl<std::vector<T>*>();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

  /// Deep copy; the result shares no storage with *this.
  ModelParams clone() const {
    ModelParams c = *this;
    c.sinc_kernels = sinc_kernels.clone();
    c.frontend.bn_gamma = frontend.bn_gamma.clone();
    c.frontend.bn_beta = frontend.bn_beta.clone();
    for (auto& b : c.blocks) {
      for (auto* t : {&b.bn1_gamma, &b.bn1_beta, &b.conv1, &b.bn2_gamma, &b.bn2_beta, &b.conv2, &b.fms.weight,
                      &b.fms.bias})
        *t = t->clone();
      if (b.projection.defined()) b.projection = b.projection.clone();
    }
    for (auto* t : {&c.gru.input_weight, &c.gru.hidden_weight, &c.gru.input_bias, &c.gru.hidden_bias, &c.fc_weight,
                    &c.fc_bias, &c.out_weight, &c.out_bias})
      *t = t->clone();
    return c;
  }

 private:
  template <typename Ptr>
  std::vector<std::pair<std::string, Ptr>> mutable_buffers_impl() {
    std::vector<std::pair<std::string, Ptr>> out;
    out.emplace_back("frontend.bn.running_mean", &frontend.bn_state.running_mean);
    out.emplace_back("frontend.bn.running_var", &frontend.bn_state.running_var);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      out.emplace_back(p + "bn1.running_mean", &blocks[i].bn1_state.running_mean);
      out.emplace_back(p + "bn1.running_var", &blocks[i].bn1_state.running_var);
      out.emplace_back(p + "bn2.running_mean", &blocks[i].bn2_state.running_mean);
      out.emplace_back(p + "bn2.running_var", &blocks[i].bn2_state.running_var);
    }
    return out;
  }
};

/// Seeded initialization. Convolutions use a Kaiming-style uniform bound
/// sqrt(6 / ((1 + slope^2) fan_in)); GRU, FMS and fully connected weights
/// use 1/sqrt(fan_in). Batch-norm scales start at 1, shifts at 0.
template <typename T>
ModelParams<T> model_init(std::uint64_t seed, const ModelConfig& cfg) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>::parameter(std::move(shape), std::move(v));
  };
  auto constant = [](std::size_t n, T value) { return Tensor<T>::parameter({n}, std::vector<T>(n, value)); };
  const double slope = cfg.leaky_slope;
  auto conv_bound = [&](std::size_t fan_in) {
    return std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
  };
  const T momentum = static_cast<T>(cfg.bn_momentum), eps = static_cast<T>(cfg.bn_eps);

  ModelParams<T> p;
  p.config = cfg;
  SincFilterbank bank(cfg.filterbank);
  p.sinc_kernels = bank.kernels<T>();
  const std::size_t nf = cfg.filterbank.n_filters;
  p.frontend.bn_gamma = constant(nf, T(1));
  p.frontend.bn_beta = constant(nf, T(0));
  p.frontend.bn_state = BatchNormState<T>(nf, momentum, eps);

  std::size_t c_in = nf;
  auto add_block = [&](std::size_t c_out) {
    ResBlockParams<T> b;
    b.bn1_gamma = constant(c_in, T(1));
    b.bn1_beta = constant(c_in, T(0));
    b.bn1_state = BatchNormState<T>(c_in, momentum, eps);
    b.conv1 = uniform({c_out, c_in, 3}, conv_bound(c_in * 3));
    b.bn2_gamma = constant(c_out, T(1));
    b.bn2_beta = constant(c_out, T(0));
    b.bn2_state = BatchNormState<T>(c_out, momentum, eps);
    b.conv2 = uniform({c_out, c_out, 3}, conv_bound(c_out * 3));
    if (c_in != c_out) b.projection = uniform({c_out, c_in, 1}, conv_bound(c_in));
    b.fms.weight = uniform({c_out, c_out}, 1.0 / std::sqrt(static_cast<double>(c_out)));
    b.fms.bias = constant(c_out, T(0));
    p.blocks.push_back(std::move(b));
    c_in = c_out;
  };
  for (std::size_t i = 0; i < cfg.block1_count; ++i) add_block(cfg.block1_channels);
  for (std::size_t i = 0; i < cfg.block2_count; ++i) add_block(cfg.block2_channels);

  const std::size_t H = cfg.gru_hidden;
  const double gb = 1.0 / std::sqrt(static_cast<double>(H));
  p.gru.input_weight = uniform({3 * H, c_in}, gb);
  p.gru.hidden_weight = uniform({3 * H, H}, gb);
  p.gru.input_bias = uniform({3 * H}, gb);
  p.gru.hidden_bias = uniform({3 * H}, gb);

  p.fc_weight = uniform({cfg.fc_dim, H}, 1.0 / std::sqrt(static_cast<double>(H)));
  p.fc_bias = constant(cfg.fc_dim, T(0));
  p.out_weight = uniform({2, cfg.fc_dim}, 1.0 / std::sqrt(static_cast<double>(cfg.fc_dim)));
  p.out_bias = constant(2, T(0));
  return p;
}

/// Feature map scaling: s = sigmoid(W mean_t(x) + b) per channel, then
/// y = x * s + s.
template <typename T>
Tensor<T> fms(const Tensor<T>& x, const FmsParams<T>& p) {
  if (x.rank() != 3 || p.weight.rank() != 2 || p.weight.dim(0) != x.dim(1) || p.weight.dim(1) != x.dim(1))
    throw ShapeError("fms: weight " + (p.weight.defined() ? shape_str(p.weight.shape()) : std::string("<none>")) +
                     " does not match feature map " + shape_str(x.shape()));
  auto s = sigmoid(linear(mean_over_time(x), p.weight, p.bias));
  return scale_and_shift(x, s);
}

/// Pre-activation residual block: BN, LReLU, Conv3, BN, LReLU, Conv3 added
/// to the skip path (identity or 1x1 projection), then max-pool(3) and FMS.
/// The 3-tap convolutions are zero padded so only the pooling shortens time.
template <typename T, typename Block>
  requires std::same_as<std::remove_const_t<Block>, ResBlockParams<T>>
Tensor<T> res_block_forward(const Tensor<T>& x, Block& p, Mode mode, T slope) {
  if (x.rank() != 3 || x.dim(1) != p.in_channels())
    throw ShapeError("res_block: expected [B," + std::to_string(p.in_channels()) + ",T], got " +
                     shape_str(x.shape()));
  if (x.dim(2) < 3) throw ShapeError("res_block: need at least 3 frames, got " + std::to_string(x.dim(2)));
  auto h = batch_norm(x, p.bn1_gamma, p.bn1_beta, p.bn1_state, mode);
  h = leaky_relu(h, slope);
  h = conv1d(h, p.conv1, 1, 1);
  h = batch_norm(h, p.bn2_gamma, p.bn2_beta, p.bn2_state, mode);
  h = leaky_relu(h, slope);
  h = conv1d(h, p.conv2, 1, 1);
  auto skip = p.projection.defined() ? conv1d(x, p.projection) : x;
  auto y = maxpool1d(add(h, skip), 3);
  return fms(y, p.fms);
}

/// Named intermediate shapes recorded during a forward pass.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

namespace detail {

template <typename T, typename Params>
Tensor<T> model_forward_impl(const Tensor<T>& waveform, Params& p, Mode mode, ShapeTrace* trace) {
  const auto& cfg = p.config;
  const T slope = static_cast<T>(cfg.leaky_slope);
  Tensor<T> x = waveform;
  const bool batched = waveform.rank() == 3;
  if (waveform.rank() == 2) {
    if (waveform.dim(0) != 1) throw ShapeError("model: unbatched waveform must be [1,N]");
    x = Tensor<T>({1, 1, waveform.dim(1)}, waveform.values());
    if (waveform.requires_grad()) throw GraphError("model: pass batched [B,1,N] input when tracking its gradient");
  } else if (waveform.rank() != 3 || waveform.dim(1) != 1) {
    throw ShapeError("model: waveform must be [1,N] or [B,1,N], got " + shape_str(waveform.shape()));
  }
  auto record = [&](const char* name, const Tensor<T>& t) {
    if (trace) trace->emplace_back(name, t.shape());
  };

  auto h = frontend_forward(x, p.sinc_kernels, p.frontend, cfg.n_samples, mode, slope);
  record("frontend", h);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    h = res_block_forward<T>(h, p.blocks[i], mode, slope);
    if (i + 1 == cfg.block1_count) record("resblocks1", h);
  }
  record("resblocks2", h);
  auto g = gru_sequence(channels_last(h), p.gru);
  record("gru", g);
  auto f = linear(g, p.fc_weight, p.fc_bias);
  record("fc", f);
  auto logits = linear(f, p.out_weight, p.out_bias);
  record("output", logits);
  if (!batched) return Tensor<T>({logits.dim(1)}, logits.values());
  return logits;
}

}  // namespace detail

/// Forward pass over [B,1,N] (or [1,N]) waveforms producing logits [B,2]
/// (or [2]). Train mode uses batch statistics and updates running stats.
template <typename T>
Tensor<T> model_forward(const Tensor<T>& waveform, ModelParams<T>& p, Mode mode, ShapeTrace* trace = nullptr) {
  return detail::model_forward_impl<T>(waveform, p, mode, trace);
}

/// Eval-mode forward on read-only parameters; safe to call concurrently.
template <typename T>
Tensor<T> model_forward(const Tensor<T>& waveform, const ModelParams<T>& p, ShapeTrace* trace = nullptr) {
  return detail::model_forward_impl<T>(waveform, p, Mode::eval, trace);
}

/// Countermeasure score: log-softmax(bona fide) - log-softmax(spoof), which
/// reduces to the logit difference. Higher means more bona fide.
template <typename T>
double score_from_logits(std::span<const T> logits) {
  if (logits.size() != 2) throw ShapeError("score: expected two logits");
  const auto ls = log_softmax<T>(logits);
  return static_cast<double>(ls[kBonafideClass]) - static_cast<double>(ls[kSpoofClass]);
}

template <typename T>
double predict_score(const Tensor<T>& waveform, const ModelParams<T>& p) {
  NoGradGuard guard;
  auto logits = model_forward(waveform, p);
  return score_from_logits<T>(logits.data());
}

}  // namespace rawnet
