// SPDX-License-Identifier: Apache-2.0
//
// Fixed sinc band-pass filterbank and the waveform front-end built on it.
#pragma once

#include <cmath>
#include <concepts>
#include <type_traits>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "rawnet/error.hpp"
#include "rawnet/ops.hpp"
#include "rawnet/tensor.hpp"

namespace rawnet {

enum class ScaleKind { mel, inverse_mel, linear };

inline std::string_view to_string(ScaleKind s) {
  switch (s) {
    case ScaleKind::mel: return "mel";
    case ScaleKind::inverse_mel: return "inverse_mel";
    case ScaleKind::linear: return "linear";
  }
  return "?";
}

inline ScaleKind parse_scale(std::string_view s) {
  if (s == "mel") return ScaleKind::mel;
  if (s == "inverse_mel") return ScaleKind::inverse_mel;
  if (s == "linear") return ScaleKind::linear;
  throw ValueError("unknown filter scale '" + std::string(s) + "' (expected mel, inverse_mel or linear)");
}

/// HTK mel warp.
inline double mel_from_hz(double hz) {
  if (!(hz >= 0.0)) throw ValueError("mel_from_hz: frequency must be non-negative");
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double hz_from_mel(double mel) {
  if (!(mel >= 0.0)) throw ValueError("hz_from_mel: mel value must be non-negative");
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

struct Band {
  double low_hz;
  double high_hz;
  double center_hz() const { return 0.5 * (low_hz + high_hz); }
  double width_hz() const { return high_hz - low_hz; }
};

/// n_filters + 2 edge frequencies equally spaced in the warped domain.
///
/// The inverse-mel edges are the mel edges reflected about the middle of
/// [f_min, f_max]: edge i is f_min + f_max - mel_edge[n + 1 - i], so the
/// spacing at f equals the mel spacing at f_min + f_max - f and resolution
/// concentrates at high frequencies.
inline std::vector<double> make_edges(ScaleKind scale, std::size_t n_filters, double f_min, double f_max,
                                      double sample_rate) {
  if (n_filters == 0) throw ValueError("make_band_edges: need at least one filter");
  if (!(f_min > 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw ValueError("make_band_edges: require 0 < f_min < f_max <= Nyquist, got f_min=" + std::to_string(f_min) +
                     " f_max=" + std::to_string(f_max) + " sample_rate=" + std::to_string(sample_rate));
  const std::size_t n_edges = n_filters + 2;
  std::vector<double> edges(n_edges);
  const double span = static_cast<double>(n_edges - 1);
  switch (scale) {
    case ScaleKind::linear:
      for (std::size_t i = 0; i < n_edges; ++i) edges[i] = f_min + (f_max - f_min) * static_cast<double>(i) / span;
      break;
    case ScaleKind::mel:
    case ScaleKind::inverse_mel: {
      const double m_lo = mel_from_hz(f_min), m_hi = mel_from_hz(f_max);
      std::vector<double> mel_edges(n_edges);
      for (std::size_t i = 0; i < n_edges; ++i)
        mel_edges[i] = hz_from_mel(m_lo + (m_hi - m_lo) * static_cast<double>(i) / span);
      mel_edges.front() = f_min;
      mel_edges.back() = f_max;
      if (scale == ScaleKind::mel) {
        edges = std::move(mel_edges);
      } else {
        for (std::size_t i = 0; i < n_edges; ++i) edges[i] = f_min + f_max - mel_edges[n_edges - 1 - i];
      }
      break;
    }
  }
  for (std::size_t i = 1; i < n_edges; ++i)
    if (!(edges[i] > edges[i - 1])) throw ValueError("make_band_edges: band edges collapse; use fewer filters");
  return edges;
}

/// Filter i spans edges (i, i+2), so neighbouring bands overlap by one edge.
inline std::vector<Band> make_band_edges(ScaleKind scale, std::size_t n_filters, double f_min, double f_max,
                                         double sample_rate) {
  const auto edges = make_edges(scale, n_filters, f_min, f_max, sample_rate);
  std::vector<Band> bands(n_filters);
  for (std::size_t i = 0; i < n_filters; ++i) bands[i] = {edges[i], edges[i + 2]};
  return bands;
}

/// Hamming-windowed difference of sincs for the band [f_low, f_high].
///
/// The windowed response leaks a little DC for bands narrower than the
/// window's main lobe; a scaled copy of the window is subtracted so the taps
/// sum to zero. Both terms are even, so the kernel stays exactly symmetric.
inline std::vector<double> sinc_kernel(double f_low, double f_high, std::size_t kernel_len, double sample_rate) {
  if (kernel_len % 2 == 0) throw ValueError("sinc_kernel: kernel length must be odd");
  if (!(f_low >= 0.0 && f_low < f_high && f_high <= sample_rate / 2.0))
    throw ValueError("sinc_kernel: invalid band [" + std::to_string(f_low) + ", " + std::to_string(f_high) + "] Hz");
  const double lo = f_low / sample_rate, hi = f_high / sample_rate;
  const std::size_t half = kernel_len / 2;
  const double two_pi = 2.0 * std::numbers::pi;
  auto lowpass = [&](double fc, double m) {
    if (m == 0.0) return 2.0 * fc;
    const double x = two_pi * fc * m;
    return 2.0 * fc * std::sin(x) / x;
  };
  std::vector<double> h(kernel_len), w(kernel_len);
  for (std::size_t j = 0; j <= half; ++j) {
    const double m = static_cast<double>(j);
    const double win = 0.54 + 0.46 * std::cos(two_pi * m / static_cast<double>(kernel_len - 1));
    const double v = (lowpass(hi, m) - lowpass(lo, m)) * win;
    h[half + j] = h[half - j] = v;
    w[half + j] = w[half - j] = win;
  }
  // Pairwise (mirrored) summation keeps the correction symmetric.
  double sum_h = h[half], sum_w = w[half];
  for (std::size_t j = 1; j <= half; ++j) {
    sum_h += 2.0 * h[half + j];
    sum_w += 2.0 * w[half + j];
  }
  const double dc = sum_h / sum_w;
  for (std::size_t j = 0; j <= half; ++j) {
    const double v = h[half + j] - dc * w[half + j];
    h[half + j] = h[half - j] = v;
  }
  return h;
}

struct FilterbankConfig {
  std::size_t n_filters = 128;
  std::size_t kernel_len = 129;
  double sample_rate = 16000.0;
  double f_min = 30.0;
  double f_max = 7900.0;  // Nyquist - 100 Hz
  ScaleKind scale = ScaleKind::mel;
};

/// A built filterbank is immutable and never part of the trainable set.
class SincFilterbank {
 public:
  explicit SincFilterbank(const FilterbankConfig& cfg) : cfg_(cfg) {
    bands_ = make_band_edges(cfg.scale, cfg.n_filters, cfg.f_min, cfg.f_max, cfg.sample_rate);
    taps_.reserve(cfg.n_filters * cfg.kernel_len);
    for (const auto& b : bands_) {
      auto h = sinc_kernel(b.low_hz, b.high_hz, cfg.kernel_len, cfg.sample_rate);
      taps_.insert(taps_.end(), h.begin(), h.end());
    }
  }

  const FilterbankConfig& config() const { return cfg_; }
  std::size_t n_filters() const { return cfg_.n_filters; }
  std::size_t kernel_len() const { return cfg_.kernel_len; }
  double sample_rate() const { return cfg_.sample_rate; }
  ScaleKind scale() const { return cfg_.scale; }
  const std::vector<Band>& bands() const { return bands_; }

  std::span<const double> kernel(std::size_t i) const {
    return std::span<const double>(taps_).subspan(i * cfg_.kernel_len, cfg_.kernel_len);
  }

  /// Kernels as an untracked [n_filters, 1, kernel_len] tensor.
  template <typename T>
  Tensor<T> kernels() const {
    return Tensor<T>({cfg_.n_filters, 1, cfg_.kernel_len}, std::vector<T>(taps_.begin(), taps_.end()));
  }

  /// |H(f)| of filter i evaluated directly from its taps.
  double magnitude_response(std::size_t i, double hz) const {
    const auto h = kernel(i);
    const double w = 2.0 * std::numbers::pi * hz / cfg_.sample_rate;
    double re = 0, im = 0;
    for (std::size_t n = 0; n < h.size(); ++n) {
      re += h[n] * std::cos(w * static_cast<double>(n));
      im -= h[n] * std::sin(w * static_cast<double>(n));
    }
    return std::hypot(re, im);
  }

 private:
  FilterbankConfig cfg_;
  std::vector<Band> bands_;
  std::vector<double> taps_;
};

/// Trainable state of the front-end: the batch norm after pooling.
template <typename T>
struct FrontendParams {
  Tensor<T> bn_gamma;
  Tensor<T> bn_beta;
  BatchNormState<T> bn_state;
};

/// Sinc convolution -> max-pool(3) -> batch norm -> leaky ReLU over a
/// waveform batch [B,1,N] (or [1,N]). No input normalization is applied.
template <typename T, typename Params>
  requires std::same_as<std::remove_const_t<Params>, FrontendParams<T>>
Tensor<T> frontend_forward(const Tensor<T>& waveform, const Tensor<T>& kernels, Params& p,
                           std::size_t expected_samples, Mode mode, T slope) {
  const std::size_t len = waveform.dim(waveform.rank() - 1);
  if (len != expected_samples)
    throw ShapeError("frontend: expected " + std::to_string(expected_samples) + " samples, got " +
                     std::to_string(len));
  auto y = conv1d(waveform, kernels);
  y = maxpool1d(y, 3);
  y = batch_norm(y, p.bn_gamma, p.bn_beta, p.bn_state, mode);
  return leaky_relu(y, slope);
}

}  // namespace rawnet
