// SPDX-License-Identifier: Apache-2.0
//
// Linear-frequency cepstral coefficients.
#pragma once

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "rawnet/audio.hpp"
#include "rawnet/error.hpp"

namespace rawnet {

struct LfccConfig {
  std::size_t n_filters = 70;
  double frame_ms = 20;
  double shift_ms = 10;
  std::size_t n_fft = 1024;
  std::size_t n_ceps = 20;
  bool deltas = true;
  bool double_deltas = true;
  double f_min = 0;
  double f_max = 8000;
  int sample_rate = kSampleRate;

  std::size_t frame_len() const { return static_cast<std::size_t>(std::lround(frame_ms * sample_rate / 1000.0)); }
  std::size_t frame_shift() const { return static_cast<std::size_t>(std::lround(shift_ms * sample_rate / 1000.0)); }
  std::size_t dim() const { return n_ceps * (1 + (deltas ? 1 : 0) + (double_deltas ? 1 : 0)); }

  void validate() const {
    if (n_ceps == 0 || n_filters < n_ceps) throw ValueError("lfcc: need 0 < n_ceps <= n_filters");
    if (frame_len() == 0 || frame_shift() == 0 || frame_shift() > frame_len())
      throw ValueError("lfcc: need 0 < frame shift <= frame length");
    if (n_fft < frame_len() || (n_fft & (n_fft - 1))) throw ValueError("lfcc: n_fft must be a power of two >= frame length");
    if (!(f_min >= 0 && f_min < f_max && f_max <= sample_rate / 2.0)) throw ValueError("lfcc: invalid frequency range");
    if (double_deltas && !deltas) throw ValueError("lfcc: double deltas require deltas");
  }
};

/// Row-major frames x dims matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

/// Centre frequencies of the triangular filters: equally spaced in Hz with
/// the first and last triangle feet at f_min and f_max.
inline std::vector<double> lfcc_filter_centers(const LfccConfig& cfg) {
  std::vector<double> c(cfg.n_filters);
  const double step = (cfg.f_max - cfg.f_min) / static_cast<double>(cfg.n_filters + 1);
  for (std::size_t m = 0; m < cfg.n_filters; ++m) c[m] = cfg.f_min + step * static_cast<double>(m + 1);
  return c;
}

/// Triangular weights [n_filters][n_fft/2 + 1] over power-spectrum bins.
inline std::vector<std::vector<double>> lfcc_filterbank(const LfccConfig& cfg) {
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double step = (cfg.f_max - cfg.f_min) / static_cast<double>(cfg.n_filters + 1);
  std::vector<std::vector<double>> fb(cfg.n_filters, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < cfg.n_filters; ++m) {
    const double lo = cfg.f_min + step * static_cast<double>(m), mid = lo + step, hi = mid + step;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      if (f > lo && f < hi) fb[m][k] = f <= mid ? (f - lo) / step : (hi - f) / step;
    }
  }
  return fb;
}

namespace detail {

/// Regression deltas over +-2 frames with edge replication.
inline std::vector<double> deltas(const std::vector<double>& x, std::size_t rows, std::size_t cols) {
  std::vector<double> d(x.size(), 0.0);
  const auto last = static_cast<std::ptrdiff_t>(rows) - 1;
  for (std::size_t t = 0; t < rows; ++t)
    for (std::ptrdiff_t n = 1; n <= 2; ++n) {
      const auto a = static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t) + n, last));
      const auto b = static_cast<std::size_t>(std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t) - n, 0));
      for (std::size_t j = 0; j < cols; ++j) d[t * cols + j] += static_cast<double>(n) * (x[a * cols + j] - x[b * cols + j]) / 10.0;
    }
  return d;
}

struct FftwPlan {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit FftwPlan(std::size_t size) : n(size) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~FftwPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
};

}  // namespace detail

/// Hamming window, power spectrum, linear triangular filterbank, log,
/// orthonormal DCT-II; keeps n_ceps coefficients and appends deltas.
inline FeatureMatrix lfcc_extract(std::span<const float> samples, const LfccConfig& cfg = {}) {
  cfg.validate();
  const std::size_t len = cfg.frame_len(), shift = cfg.frame_shift();
  if (samples.size() < len)
    throw ShapeError("lfcc: waveform has " + std::to_string(samples.size()) + " samples, need at least " +
                     std::to_string(len));
  const std::size_t frames = 1 + (samples.size() - len) / shift;
  const std::size_t bins = cfg.n_fft / 2 + 1, M = cfg.n_filters, C = cfg.n_ceps;

  std::vector<double> window(len);
  for (std::size_t i = 0; i < len; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len - 1));
  const auto fb = lfcc_filterbank(cfg);
  std::vector<double> dct(C * M);
  for (std::size_t k = 0; k < C; ++k)
    for (std::size_t m = 0; m < M; ++m)
      dct[k * M + m] = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(M)) *
                       std::cos(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(m) + 0.5) / static_cast<double>(M));

  detail::FftwPlan fft(cfg.n_fft);
  std::vector<double> ceps(frames * C), power(bins), logfb(M);
  for (std::size_t t = 0; t < frames; ++t) {
    std::memset(fft.in, 0, sizeof(double) * cfg.n_fft);
    for (std::size_t i = 0; i < len; ++i) fft.in[i] = window[i] * static_cast<double>(samples[t * shift + i]);
    fftw_execute(fft.plan);
    for (std::size_t k = 0; k < bins; ++k) power[k] = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
    for (std::size_t m = 0; m < M; ++m) {
      double e = 0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m][k] * power[k];
      logfb[m] = std::log(std::max(e, 1e-30));
    }
    for (std::size_t k = 0; k < C; ++k) {
      double s = 0;
      for (std::size_t m = 0; m < M; ++m) s += dct[k * M + m] * logfb[m];
      ceps[t * C + k] = s;
    }
  }

  FeatureMatrix out{frames, cfg.dim(), std::vector<double>(frames * cfg.dim())};
  std::vector<std::vector<double>> blocks{ceps};
  if (cfg.deltas) blocks.push_back(detail::deltas(blocks.back(), frames, C));
  if (cfg.double_deltas) blocks.push_back(detail::deltas(blocks.back(), frames, C));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (std::size_t j = 0; j < C; ++j) out.data[t * out.cols + b * C + j] = blocks[b][t * C + j];
  return out;
}

// Binary feature cache: magic, rows, cols (little-endian u64), then doubles.
inline constexpr char kFeatureMagic[8] = {'R', 'N', 'F', 'E', 'A', 'T', '0', '1'};

inline void save_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint64_t dims[2] = {f.rows, f.cols};
  out.write(kFeatureMagic, 8);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(f.data.data()), static_cast<std::streamsize>(f.data.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path.string());
}

inline FeatureMatrix load_features(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kFeatureMagic, 8) != 0)
    throw FormatError(path.string() + ": not a feature matrix file");
  std::uint64_t dims[2];
  std::memcpy(dims, bytes.data() + 8, sizeof dims);
  if (dims[1] != 0 && dims[0] > (bytes.size() - 24) / sizeof(double) / dims[1])
    throw FormatError(path.string() + ": truncated feature matrix");
  FeatureMatrix f{dims[0], dims[1], std::vector<double>(dims[0] * dims[1])};
  if (bytes.size() != 24 + f.data.size() * sizeof(double)) throw FormatError(path.string() + ": size mismatch");
  std::memcpy(f.data.data(), bytes.data() + 24, f.data.size() * sizeof(double));
  return f;
}

}  // namespace rawnet
