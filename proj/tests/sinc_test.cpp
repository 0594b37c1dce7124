// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "rawnet/sinc.hpp"

namespace rawnet {
namespace {

// Magnitudes of an n_fft-point DFT (zero padded), bins 0..n_fft/2.
std::vector<double> dft_magnitude(std::span<const double> h, std::size_t n_fft) {
  std::vector<double> mag(n_fft / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) {
    std::complex<double> acc = 0;
    for (std::size_t n = 0; n < h.size(); ++n)
      acc += h[n] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * n) / static_cast<double>(n_fft));
    mag[k] = std::abs(acc);
  }
  return mag;
}

TEST(Mel, KnownValuesAndInverse) {
  EXPECT_EQ(mel_from_hz(0.0), 0.0);
  EXPECT_NEAR(mel_from_hz(700.0), 2595.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(mel_from_hz(700.0), 781.17, 0.01);
  EXPECT_NEAR(hz_from_mel(mel_from_hz(4000.0)), 4000.0, 1e-9);
  EXPECT_THROW(mel_from_hz(-1.0), ValueError);
  EXPECT_THROW(hz_from_mel(-1.0), ValueError);
}

TEST(BandEdges, LinearArithmeticSpacing) {
  auto bands = make_band_edges(ScaleKind::linear, 3, 100, 500, 16000);
  ASSERT_EQ(bands.size(), 3u);
  const double expect[3][2] = {{100, 300}, {200, 400}, {300, 500}};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(bands[i].low_hz, expect[i][0], 1e-9);
    EXPECT_NEAR(bands[i].high_hz, expect[i][1], 1e-9);
  }
}

TEST(BandEdges, MelDenserAtLowFrequencies) {
  auto edges = make_edges(ScaleKind::mel, 128, 30, 8000, 16000);
  for (std::size_t i = 2; i < edges.size(); ++i)
    EXPECT_GT(edges[i] - edges[i - 1], edges[i - 1] - edges[i - 2]) << "edge " << i;
  const double linear_step = (8000.0 - 30.0) / 129.0;
  EXPECT_LT(edges[1] - edges[0], linear_step);
  EXPECT_GT(edges.back() - edges[edges.size() - 2], linear_step);
}

TEST(BandEdges, InverseMelMirrorsMel) {
  const double lo = 30, hi = 7900;
  auto mel = make_edges(ScaleKind::mel, 128, lo, hi, 16000);
  auto inv = make_edges(ScaleKind::inverse_mel, 128, lo, hi, 16000);
  const std::size_t n = mel.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    // The gap starting at f in the inverse scale is the mel gap ending at lo + hi - f.
    EXPECT_NEAR(inv[i + 1] - inv[i], mel[n - 1 - i] - mel[n - 2 - i], 1e-9);
    EXPECT_NEAR(inv[i], lo + hi - mel[n - 1 - i], 1e-9);
  }
  // Resolution concentrates at high frequencies.
  EXPECT_GT(inv[1] - inv[0], inv[n - 1] - inv[n - 2]);
}

TEST(BandEdges, InvalidRangesRejected) {
  EXPECT_THROW(make_band_edges(ScaleKind::mel, 10, 0, 4000, 16000), ValueError);
  EXPECT_THROW(make_band_edges(ScaleKind::mel, 10, 500, 400, 16000), ValueError);
  EXPECT_THROW(make_band_edges(ScaleKind::linear, 10, 30, 8001, 16000), ValueError);
  EXPECT_THROW(make_band_edges(ScaleKind::linear, 0, 30, 800, 16000), ValueError);
}

TEST(BandEdges, StrictlyIncreasingInsideNyquistForAllScales) {
  for (auto scale : {ScaleKind::mel, ScaleKind::inverse_mel, ScaleKind::linear}) {
    SincFilterbank bank(FilterbankConfig{.scale = scale});
    const auto& b = bank.bands();
    ASSERT_EQ(b.size(), 128u);
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_GT(b[i].low_hz, 0.0);
      EXPECT_LT(b[i].low_hz, b[i].high_hz);
      EXPECT_LE(b[i].high_hz, 8000.0);
      if (i) EXPECT_GT(b[i].low_hz, b[i - 1].low_hz);
    }
  }
}

TEST(BandEdges, LinearBandwidthsEqual) {
  SincFilterbank bank(FilterbankConfig{.scale = ScaleKind::linear});
  const double w0 = bank.bands()[0].width_hz();
  for (const auto& b : bank.bands()) EXPECT_NEAR(b.width_hz(), w0, 1e-9);
}

TEST(SincKernel, RejectsBadBandsAndEvenLength) {
  EXPECT_THROW(sinc_kernel(500, 400, 129, 16000), ValueError);
  EXPECT_THROW(sinc_kernel(100, 400, 128, 16000), ValueError);
  EXPECT_THROW(sinc_kernel(100, 9000, 129, 16000), ValueError);
}

TEST(SincKernel, AllKernelsExactlySymmetric) {
  for (auto scale : {ScaleKind::mel, ScaleKind::inverse_mel, ScaleKind::linear}) {
    SincFilterbank bank(FilterbankConfig{.scale = scale});
    for (std::size_t i = 0; i < bank.n_filters(); ++i) {
      auto h = bank.kernel(i);
      ASSERT_EQ(h.size(), 129u);
      for (std::size_t n = 0; n < h.size(); ++n) ASSERT_EQ(h[n], h[h.size() - 1 - n]) << "filter " << i;
    }
  }
}

TEST(SincKernel, NegligibleDcRelativeToPassband) {
  for (auto scale : {ScaleKind::mel, ScaleKind::inverse_mel, ScaleKind::linear}) {
    SincFilterbank bank(FilterbankConfig{.scale = scale});
    for (std::size_t i = 0; i < bank.n_filters(); ++i) {
      auto h = bank.kernel(i);
      auto mag = dft_magnitude(h, 4096);
      const auto& band = bank.bands()[i];
      double peak = 0;
      for (std::size_t k = 0; k < mag.size(); ++k) {
        const double f = 16000.0 * static_cast<double>(k) / 4096.0;
        if (f >= band.low_hz && f <= band.high_hz) peak = std::max(peak, mag[k]);
      }
      double dc = 0;
      for (double v : h) dc += v;
      EXPECT_LT(std::abs(dc), 1e-3 * peak) << to_string(scale) << " filter " << i;
    }
  }
}

TEST(SincKernel, MidBandFilterRejectsDcAndNyquistBy20dB) {
  auto h = sinc_kernel(3000, 4000, 129, 16000);
  auto mag = dft_magnitude(h, 4096);
  const double center = mag[static_cast<std::size_t>(3500.0 / 16000.0 * 4096)];
  EXPECT_GT(20 * std::log10(center / mag.front()), 20.0);
  EXPECT_GT(20 * std::log10(center / mag.back()), 20.0);
  // The direct evaluation agrees with the DFT oracle.
  SincFilterbank bank(FilterbankConfig{.n_filters = 1, .f_min = 3000, .f_max = 5000, .scale = ScaleKind::linear});
  auto mag2 = dft_magnitude(bank.kernel(0), 4096);
  EXPECT_NEAR(bank.magnitude_response(0, 4000.0), mag2[1024], 1e-12);
}

TEST(Frontend, PublishedOutputShapeAndZeroInput) {
  SincFilterbank bank(FilterbankConfig{});
  FrontendParams<float> p{Tensor<float>::parameter({128}, std::vector<float>(128, 1.0f)),
                          Tensor<float>::parameter({128}, std::vector<float>(128, 0.0f)), BatchNormState<float>(128)};
  Tensor<float> wave({1, 64000}, 0.0f);
  auto k = bank.kernels<float>();
  auto conv = conv1d(wave, k);
  for (float v : conv.data()) ASSERT_EQ(v, 0.0f);
  NoGradGuard ng;
  auto y = frontend_forward(wave, k, p, 64000, Mode::eval, 0.3f);
  ASSERT_EQ(y.shape(), (Shape{128, 21290}));
  // Table convention lists (time, channel).
  EXPECT_EQ(Shape({y.dim(1), y.dim(0)}), (Shape{21290, 128}));

  Tensor<float> short_wave({1, 63999}, 0.0f);
  EXPECT_THROW(frontend_forward(short_wave, k, p, 64000, Mode::eval, 0.3f), ShapeError);
}

TEST(Frontend, SinusoidAtCenterExcitesItsOwnFilterMost) {
  for (auto scale : {ScaleKind::linear, ScaleKind::mel, ScaleKind::inverse_mel}) {
    SincFilterbank bank(FilterbankConfig{.scale = scale});
    auto k = bank.kernels<double>();
    for (std::size_t target : {20u, 64u, 110u}) {
      const double f = bank.bands()[target].center_hz();
      std::vector<double> s(4000);
      for (std::size_t n = 0; n < s.size(); ++n)
        s[n] = std::sin(2 * std::numbers::pi * f * static_cast<double>(n) / 16000.0);
      Tensor<double> wave({1, s.size()}, s);
      auto y = conv1d(wave, k);
      const std::size_t T = y.dim(1);
      std::size_t best = 0;
      double best_e = -1;
      for (std::size_t c = 0; c < 128; ++c) {
        double e = 0;
        for (std::size_t t = 0; t < T; ++t) e += y.data()[c * T + t] * y.data()[c * T + t];
        if (e > best_e) {
          best_e = e;
          best = c;
        }
      }
      EXPECT_EQ(best, target) << to_string(scale) << " f=" << f;
    }
  }
}

}  // namespace
}  // namespace rawnet
