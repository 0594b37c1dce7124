// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "rawnet/baseline.hpp"
#include "rawnet/gmm.hpp"
#include "rawnet/lfcc.hpp"
#include "rawnet/metrics.hpp"

namespace rawnet {
namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed, float amp = 0.3f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-amp, amp);
  std::vector<float> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

TEST(Lfcc, FramingArithmetic) {
  auto f = lfcc_extract(noise(64000, 1));
  EXPECT_EQ(f.rows, 399u);
  EXPECT_EQ(f.cols, 60u);
  EXPECT_EQ(lfcc_extract(noise(320, 1)).rows, 1u);
  EXPECT_THROW(lfcc_extract(noise(319, 1)), ShapeError);
  LfccConfig static_only{.deltas = false, .double_deltas = false};
  EXPECT_EQ(lfcc_extract(noise(4000, 1), static_only).cols, 20u);
}

TEST(Lfcc, FilterCentersEquallySpaced) {
  LfccConfig cfg;
  auto c = lfcc_filter_centers(cfg);
  ASSERT_EQ(c.size(), 70u);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_NEAR(c[i] - c[i - 1], c[1] - c[0], 1e-9);
  auto fb = lfcc_filterbank(cfg);
  for (std::size_t m = 0; m < fb.size(); ++m) {
    const auto peak = std::max_element(fb[m].begin(), fb[m].end()) - fb[m].begin();
    const double peak_hz = static_cast<double>(peak) * 16000.0 / 1024.0;
    EXPECT_NEAR(peak_hz, c[m], 16000.0 / 1024.0);
  }
}

TEST(Lfcc, DoublingAmplitudeOnlyShiftsC0) {
  auto x = noise(8000, 2);
  std::vector<float> x2(x);
  for (auto& v : x2) v *= 2;
  auto a = lfcc_extract(x), b = lfcc_extract(x2);
  ASSERT_EQ(a.rows, b.rows);
  const double shift = b.row(0)[0] - a.row(0)[0];
  EXPECT_NEAR(shift, std::log(4.0) * std::sqrt(70.0), 1e-6);
  for (std::size_t t = 0; t < a.rows; ++t)
    for (std::size_t j = 0; j < a.cols; ++j)
      EXPECT_NEAR(b.row(t)[j] - a.row(t)[j], j == 0 ? shift : 0.0, 1e-6) << "frame " << t << " coef " << j;
}

TEST(Lfcc, StaticCoefficientsMatchDirectComputation) {
  LfccConfig cfg{.deltas = false, .double_deltas = false};
  auto x = noise(1000, 3);
  auto f = lfcc_extract(x, cfg);
  const std::size_t t = 2, len = 320, shift = 160, M = 70;
  auto fb = lfcc_filterbank(cfg);
  std::vector<double> power(513);
  for (std::size_t k = 0; k < power.size(); ++k) {
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const double w = 0.54 - 0.46 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / (len - 1));
      acc += w * x[t * shift + i] * std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k * i) / 1024.0);
    }
    power[k] = std::norm(acc);
  }
  for (std::size_t k = 0; k < 20; ++k) {
    double c = 0;
    for (std::size_t m = 0; m < M; ++m) {
      double e = 0;
      for (std::size_t b = 0; b < power.size(); ++b) e += fb[m][b] * power[b];
      c += std::log(e) * std::cos(std::numbers::pi * static_cast<double>(k) * (m + 0.5) / M);
    }
    c *= std::sqrt((k == 0 ? 1.0 : 2.0) / M);
    EXPECT_NEAR(f.row(t)[k], c, 1e-8 * std::max(1.0, std::abs(c)));
  }
}

TEST(Lfcc, DeterministicAndCacheRoundTrip) {
  auto x = noise(6000, 4);
  auto a = lfcc_extract(x), b = lfcc_extract(x);
  EXPECT_EQ(a.data, b.data);
  auto path = std::filesystem::temp_directory_path() / "rawnet_lfcc_cache.bin";
  save_features(path, a);
  auto c = load_features(path);
  EXPECT_EQ(c.rows, a.rows);
  EXPECT_EQ(c.cols, a.cols);
  EXPECT_EQ(c.data, a.data);
  EXPECT_THROW(parse_gmm("rawnet-gmm 2\n"), FormatError);
}

TEST(Lfcc, InvalidConfigRejected) {
  EXPECT_THROW(lfcc_extract(noise(4000, 1), LfccConfig{.n_filters = 10, .n_ceps = 20}), ValueError);
  EXPECT_THROW(lfcc_extract(noise(4000, 1), LfccConfig{.frame_ms = 10, .shift_ms = 20}), ValueError);
  EXPECT_THROW(lfcc_extract(noise(4000, 1), LfccConfig{.n_fft = 1000}), ValueError);
}

FeatureMatrix gaussian_frames(std::size_t n, std::vector<std::vector<double>> centers, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, sd);
  const std::size_t D = centers[0].size();
  FeatureMatrix f{n, D, std::vector<double>(n * D)};
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t d = 0; d < D; ++d) f.data[t * D + d] = centers[t % centers.size()][d] + g(rng);
  return f;
}

TEST(Gmm, SingleComponentIsSampleStatistics) {
  auto f = gaussian_frames(500, {{1.0, -2.0, 0.5}}, 0.7, 5);
  auto r = gmm_fit(f, GmmFitOptions{.components = 1, .iterations = 3});
  for (std::size_t d = 0; d < 3; ++d) {
    double m = 0, v = 0;
    for (std::size_t t = 0; t < f.rows; ++t) m += f.row(t)[d];
    m /= f.rows;
    for (std::size_t t = 0; t < f.rows; ++t) v += (f.row(t)[d] - m) * (f.row(t)[d] - m);
    v /= f.rows;
    EXPECT_NEAR(r.model.means[d], m, 1e-10);
    EXPECT_NEAR(r.model.variances[d], v, 1e-10);
  }
  EXPECT_DOUBLE_EQ(r.model.weights[0], 1.0);
}

TEST(Gmm, RecoversTwoSeparatedClusters) {
  auto f = gaussian_frames(400, {{-5.0, 0.0}, {5.0, 3.0}}, 0.5, 6);
  auto r = gmm_fit(f, GmmFitOptions{.components = 2, .iterations = 20, .seed = 1});
  std::vector<std::pair<double, double>> means{{r.model.means[0], r.model.means[1]},
                                               {r.model.means[2], r.model.means[3]}};
  std::sort(means.begin(), means.end());
  EXPECT_NEAR(means[0].first, -5.0, 0.1);
  EXPECT_NEAR(means[0].second, 0.0, 0.1);
  EXPECT_NEAR(means[1].first, 5.0, 0.1);
  EXPECT_NEAR(means[1].second, 3.0, 0.1);
  EXPECT_NEAR(r.model.weights[0] + r.model.weights[1], 1.0, 1e-10);
}

TEST(Gmm, LogLikelihoodNonDecreasing) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto f = gaussian_frames(600, {{0, 0, 0}, {2, 1, -1}, {-1, 3, 2}, {4, -2, 0}}, 1.0, seed);
    auto r = gmm_fit(f, GmmFitOptions{.components = 8, .iterations = 15, .seed = seed});
    ASSERT_EQ(r.log_likelihood.size(), 16u);
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
      EXPECT_GE(r.log_likelihood[i], r.log_likelihood[i - 1] - 1e-8) << "seed " << seed << " iteration " << i;
    EXPECT_NEAR(r.log_likelihood.back(), gmm_total_log_likelihood(r.model, f), 1e-9 * std::abs(r.log_likelihood.back()));
  }
}

TEST(Gmm, TooFewFramesRejected) {
  auto f = gaussian_frames(3, {{0.0}}, 1.0, 1);
  EXPECT_THROW(gmm_fit(f, GmmFitOptions{.components = 4}), ValueError);
}

TEST(Gmm, StableAcrossTwelveOrdersOfMagnitude) {
  FeatureMatrix f{200, 2, {}};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> e(-6, 6);
  for (std::size_t t = 0; t < f.rows; ++t) {
    f.data.push_back(std::pow(10.0, e(rng)));
    f.data.push_back(-std::pow(10.0, e(rng)));
  }
  auto r = gmm_fit(f, GmmFitOptions{.components = 4, .iterations = 10, .seed = 2});
  for (double ll : r.log_likelihood) EXPECT_TRUE(std::isfinite(ll));
  for (double v : r.model.variances) EXPECT_GE(v, 1e-6);
  std::vector<double> far{1e6, 1e6};
  EXPECT_TRUE(std::isfinite(gmm_log_density(r.model, far)));
}

TEST(GmmScore, SignSymmetryAndOrderInvariance) {
  auto fb = gaussian_frames(300, {{0.0, 0.0}}, 1.0, 8);
  auto fs = gaussian_frames(300, {{4.0, 4.0}}, 1.0, 9);
  auto bona = gmm_fit(fb, GmmFitOptions{.components = 2, .seed = 1}).model;
  auto spoof = gmm_fit(fs, GmmFitOptions{.components = 2, .seed = 1}).model;
  FeatureMatrix probe{3, 2, {0.1, -0.2, 0.3, 0.0, -0.1, 0.2}};
  EXPECT_EQ(gmm_score(probe, bona, bona), 0.0);
  EXPECT_GT(gmm_score(probe, bona, spoof), 0.0);
  FeatureMatrix reversed{3, 2, {-0.1, 0.2, 0.3, 0.0, 0.1, -0.2}};
  EXPECT_NEAR(gmm_score(reversed, bona, spoof), gmm_score(probe, bona, spoof), 1e-12);
  FeatureMatrix wrong{1, 3, {0, 0, 0}};
  EXPECT_THROW(gmm_score(wrong, bona, spoof), ShapeError);
}

TEST(GmmScore, SerializationRoundTripIsExact) {
  auto f = gaussian_frames(100, {{0.0, 1.0}, {2.0, 2.0}}, 0.3, 10);
  auto g = gmm_fit(f, GmmFitOptions{.components = 3, .seed = 4}).model;
  auto back = parse_gmm(serialize_gmm(g));
  EXPECT_EQ(back.weights, g.weights);
  EXPECT_EQ(back.means, g.means);
  EXPECT_EQ(back.variances, g.variances);
  EXPECT_THROW(parse_gmm("rawnet-gmm 1\ncomponents 1 dim 1\nw 1\nmean 0\nvar 0\n"), FormatError);
}

TEST(Baseline, SeparatesClickAttackOnSmallCorpus) {
  SynthSpec spec;
  spec.train = {20, 20};
  spec.dev = {1, 1};
  spec.eval = {20, 20};
  auto data = synth_corpus(spec);
  auto r = baseline_train(select_split(data, Split::train), LfccConfig{}, GmmFitOptions{.components = 8, .seed = 3});
  auto scores = baseline_evaluate(r.model, select_split(data, Split::eval));
  std::vector<double> b, s;
  for (const auto& rec : scores) (rec.key == Key::bonafide ? b : s).push_back(rec.score);
  EXPECT_LE(compute_eer(b, s).eer, 0.10);
  auto back = parse_baseline(serialize_baseline(r.model));
  EXPECT_EQ(baseline_evaluate(back, select_split(data, Split::eval)), scores);
}

}  // namespace
}  // namespace rawnet
