// SPDX-License-Identifier: Apache-2.0
//
// Diagonal-covariance Gaussian mixtures trained by EM.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rawnet/data.hpp"
#include "rawnet/error.hpp"
#include "rawnet/lfcc.hpp"

namespace rawnet {

struct GmmModel {
  std::size_t dim = 0;
  std::vector<double> weights;    // [M]
  std::vector<double> means;      // [M * dim]
  std::vector<double> variances;  // [M * dim]

  std::size_t components() const { return weights.size(); }
};

struct GmmFitOptions {
  std::size_t components = 512;
  std::size_t iterations = 10;
  std::size_t kmeans_iterations = 5;
  std::uint64_t seed = 0;
  double variance_floor = 1e-6;
};

struct GmmFitResult {
  GmmModel model;
  std::vector<double> log_likelihood;  // total, at initialization and after every EM iteration
  std::vector<std::string> warnings;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Per-component log(w_k) - 0.5 sum(log(2 pi var)) and 1/var.
struct GmmCache {
  std::vector<double> log_norm;
  std::vector<double> inv_var;

  explicit GmmCache(const GmmModel& g) : log_norm(g.components()), inv_var(g.variances.size()) {
    const double log2pi = std::log(2 * std::numbers::pi);
    for (std::size_t k = 0; k < g.components(); ++k) {
      double s = 0;
      for (std::size_t d = 0; d < g.dim; ++d) {
        s += log2pi + std::log(g.variances[k * g.dim + d]);
        inv_var[k * g.dim + d] = 1.0 / g.variances[k * g.dim + d];
      }
      log_norm[k] = std::log(g.weights[k]) - 0.5 * s;
    }
  }

  /// log(w_k N(x; mu_k, var_k)) for every k, written into `out`.
  void joint(const GmmModel& g, std::span<const double> x, std::vector<double>& out) const {
    out.resize(g.components());
    for (std::size_t k = 0; k < g.components(); ++k) {
      const double* mu = &g.means[k * g.dim];
      const double* iv = &inv_var[k * g.dim];
      double q = 0;
      for (std::size_t d = 0; d < g.dim; ++d) {
        const double z = x[d] - mu[d];
        q += z * z * iv[d];
      }
      out[k] = log_norm[k] - 0.5 * q;
    }
  }
};

inline double sq_dist(std::span<const double> a, const double* b) {
  double s = 0;
  for (std::size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return s;
}

}  // namespace detail

/// Per-frame log density log p(x).
inline double gmm_log_density(const GmmModel& g, std::span<const double> x) {
  if (x.size() != g.dim) throw ShapeError("gmm: frame dimension mismatch");
  std::vector<double> joint;
  detail::GmmCache(g).joint(g, x, joint);
  return detail::log_sum_exp(joint);
}

inline double gmm_total_log_likelihood(const GmmModel& g, const FeatureMatrix& frames) {
  if (frames.cols != g.dim) throw ShapeError("gmm: frame dimension mismatch");
  detail::GmmCache cache(g);
  std::vector<double> joint;
  double total = 0;
  for (std::size_t t = 0; t < frames.rows; ++t) {
    cache.joint(g, frames.row(t), joint);
    total += detail::log_sum_exp(joint);
  }
  return total;
}

/// Seeded k-means initialization followed by EM. Variances are floored,
/// and a component whose responsibility mass vanishes is re-seeded on the
/// frame with the lowest likelihood (recorded in `warnings`).
inline GmmFitResult gmm_fit(const FeatureMatrix& frames, const GmmFitOptions& opt) {
  const std::size_t N = frames.rows, D = frames.cols, M = opt.components;
  if (M == 0) throw ValueError("gmm: need at least one component");
  if (N < M) throw ValueError("gmm: " + std::to_string(N) + " frames cannot fit " + std::to_string(M) + " components");
  if (!(opt.variance_floor > 0)) throw ValueError("gmm: variance floor must be positive");
  GmmFitResult res;
  GmmModel& g = res.model;
  g.dim = D;

  std::vector<double> global_mean(D, 0.0), global_var(D, 0.0);
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t d = 0; d < D; ++d) global_mean[d] += frames.row(t)[d];
  for (auto& v : global_mean) v /= static_cast<double>(N);
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t d = 0; d < D; ++d) global_var[d] += std::pow(frames.row(t)[d] - global_mean[d], 2);
  for (auto& v : global_var) v = std::max(v / static_cast<double>(N), opt.variance_floor);

  // k-means on M distinct seeded frames.
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(opt.seed, 0x676d6d));
  std::shuffle(order.begin(), order.end(), rng);
  g.means.resize(M * D);
  for (std::size_t k = 0; k < M; ++k) std::copy_n(frames.row(order[k]).begin(), D, g.means.begin() + static_cast<std::ptrdiff_t>(k * D));
  std::vector<std::size_t> assign(N, 0);
  std::vector<double> count(M), sum(M * D), sumsq(M * D);
  auto assign_and_accumulate = [&] {
    std::fill(count.begin(), count.end(), 0.0);
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(sumsq.begin(), sumsq.end(), 0.0);
    for (std::size_t t = 0; t < N; ++t) {
      const auto x = frames.row(t);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < M; ++k) {
        const double d2 = detail::sq_dist(x, &g.means[k * D]);
        if (d2 < best) {
          best = d2;
          assign[t] = k;
        }
      }
      const std::size_t k = assign[t];
      count[k] += 1;
      for (std::size_t d = 0; d < D; ++d) {
        sum[k * D + d] += x[d];
        sumsq[k * D + d] += x[d] * x[d];
      }
    }
  };
  for (std::size_t it = 0; it < opt.kmeans_iterations; ++it) {
    assign_and_accumulate();
    for (std::size_t k = 0; k < M; ++k)
      if (count[k] > 0)
        for (std::size_t d = 0; d < D; ++d) g.means[k * D + d] = sum[k * D + d] / count[k];
  }
  assign_and_accumulate();
  g.weights.assign(M, 0.0);
  g.variances.assign(M * D, 0.0);
  for (std::size_t k = 0; k < M; ++k) {
    if (count[k] == 0) {
      g.weights[k] = 1.0 / static_cast<double>(N);
      std::copy(global_var.begin(), global_var.end(), g.variances.begin() + static_cast<std::ptrdiff_t>(k * D));
      continue;
    }
    g.weights[k] = count[k] / static_cast<double>(N);
    for (std::size_t d = 0; d < D; ++d) {
      const double mu = sum[k * D + d] / count[k];
      g.means[k * D + d] = mu;
      g.variances[k * D + d] = count[k] > 1 ? std::max(sumsq[k * D + d] / count[k] - mu * mu, opt.variance_floor)
                                            : global_var[d];
    }
  }
  double wsum = 0;
  for (double w : g.weights) wsum += w;
  for (auto& w : g.weights) w /= wsum;

  std::vector<double> joint(M), Nk(M), Sx(M * D), Sxx(M * D);
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    detail::GmmCache cache(g);
    std::fill(Nk.begin(), Nk.end(), 0.0);
    std::fill(Sx.begin(), Sx.end(), 0.0);
    std::fill(Sxx.begin(), Sxx.end(), 0.0);
    double total = 0, worst = std::numeric_limits<double>::infinity();
    std::size_t worst_frame = 0;
    for (std::size_t t = 0; t < N; ++t) {
      const auto x = frames.row(t);
      cache.joint(g, x, joint);
      const double lse = detail::log_sum_exp(joint);
      total += lse;
      if (lse < worst) {
        worst = lse;
        worst_frame = t;
      }
      for (std::size_t k = 0; k < M; ++k) {
        const double r = std::exp(joint[k] - lse);
        if (r == 0) continue;
        Nk[k] += r;
        for (std::size_t d = 0; d < D; ++d) {
          Sx[k * D + d] += r * x[d];
          Sxx[k * D + d] += r * x[d] * x[d];
        }
      }
    }
    res.log_likelihood.push_back(total);

    for (std::size_t k = 0; k < M; ++k) {
      if (Nk[k] < 1e-10) {
        res.warnings.push_back("EM iteration " + std::to_string(it + 1) + ": component " + std::to_string(k) +
                               " lost its responsibility mass; re-seeded from frame " + std::to_string(worst_frame));
        std::copy_n(frames.row(worst_frame).begin(), D, g.means.begin() + static_cast<std::ptrdiff_t>(k * D));
        std::copy(global_var.begin(), global_var.end(), g.variances.begin() + static_cast<std::ptrdiff_t>(k * D));
        g.weights[k] = 1.0 / static_cast<double>(N);
        continue;
      }
      g.weights[k] = Nk[k] / static_cast<double>(N);
      for (std::size_t d = 0; d < D; ++d) {
        const double mu = Sx[k * D + d] / Nk[k];
        g.means[k * D + d] = mu;
        g.variances[k * D + d] = std::max(Sxx[k * D + d] / Nk[k] - mu * mu, opt.variance_floor);
      }
    }
    wsum = 0;
    for (double w : g.weights) wsum += w;
    for (auto& w : g.weights) w /= wsum;
  }
  res.log_likelihood.push_back(gmm_total_log_likelihood(g, frames));
  return res;
}

/// Mean over frames of log p(x | bona) - log p(x | spoof).
inline double gmm_score(const FeatureMatrix& frames, const GmmModel& bona, const GmmModel& spoof) {
  if (frames.cols != bona.dim || frames.cols != spoof.dim)
    throw ShapeError("gmm_score: feature dimension " + std::to_string(frames.cols) + " does not match models (" +
                     std::to_string(bona.dim) + ", " + std::to_string(spoof.dim) + ")");
  if (frames.rows == 0) throw ShapeError("gmm_score: no frames");
  detail::GmmCache cb(bona), cs(spoof);
  std::vector<double> jb, js;
  double s = 0;
  for (std::size_t t = 0; t < frames.rows; ++t) {
    cb.joint(bona, frames.row(t), jb);
    cs.joint(spoof, frames.row(t), js);
    s += detail::log_sum_exp(jb) - detail::log_sum_exp(js);
  }
  return s / static_cast<double>(frames.rows);
}

// Text model format:
//   rawnet-gmm 1
//   components <M> dim <D>
//   then per component: "w <weight>", "mean <D values>", "var <D values>".
inline std::string serialize_gmm(const GmmModel& g) {
  std::string out = "rawnet-gmm 1\ncomponents " + std::to_string(g.components()) + " dim " + std::to_string(g.dim) + "\n";
  for (std::size_t k = 0; k < g.components(); ++k) {
    out += "w " + format_double(g.weights[k]) + "\nmean";
    for (std::size_t d = 0; d < g.dim; ++d) out += ' ' + format_double(g.means[k * g.dim + d]);
    out += "\nvar";
    for (std::size_t d = 0; d < g.dim; ++d) out += ' ' + format_double(g.variances[k * g.dim + d]);
    out += '\n';
  }
  return out;
}

inline GmmModel parse_gmm(detail::TokenReader& in) {
  in.expect("rawnet-gmm");
  if (in.count() != 1) throw FormatError("unsupported gmm model version");
  in.expect("components");
  const std::size_t M = in.count();
  in.expect("dim");
  GmmModel g;
  g.dim = in.count();
  if (M == 0 || g.dim == 0) throw FormatError("gmm model has no components or zero dimension");
  g.weights.resize(M);
  g.means.resize(M * g.dim);
  g.variances.resize(M * g.dim);
  double wsum = 0;
  for (std::size_t k = 0; k < M; ++k) {
    in.expect("w");
    g.weights[k] = in.number();
    wsum += g.weights[k];
    in.expect("mean");
    for (std::size_t d = 0; d < g.dim; ++d) g.means[k * g.dim + d] = in.number();
    in.expect("var");
    for (std::size_t d = 0; d < g.dim; ++d) {
      g.variances[k * g.dim + d] = in.number();
      if (!(g.variances[k * g.dim + d] > 0)) throw FormatError("gmm variance must be positive");
    }
  }
  if (std::abs(wsum - 1) > 1e-10) throw FormatError("gmm weights do not sum to 1");
  return g;
}

inline GmmModel parse_gmm(std::string_view text) {
  detail::TokenReader in{text};
  return parse_gmm(in);
}

}  // namespace rawnet
