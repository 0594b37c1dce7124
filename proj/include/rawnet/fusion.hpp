// SPDX-License-Identifier: Apache-2.0
//
// Score-level fusion: per-system standardization followed by a linear
// separator (hinge-loss SVM or logistic regression).
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rawnet/data.hpp"
#include "rawnet/error.hpp"

namespace rawnet {

enum class FusionKind { linear_svm, logistic };

inline const char* to_string(FusionKind k) { return k == FusionKind::linear_svm ? "linear_svm" : "logistic"; }

inline FusionKind parse_fusion_kind(std::string_view s) {
  if (s == "linear_svm" || s == "svm") return FusionKind::linear_svm;
  if (s == "logistic") return FusionKind::logistic;
  throw ValueError("unknown fusion kind '" + std::string(s) + "' (expected linear_svm or logistic)");
}

struct FusionOptions {
  FusionKind kind = FusionKind::linear_svm;
  double c = 1.0;  // inverse regularization strength; lambda = 1 / (c * N)
  std::size_t iterations = 2000;
  double step = 0.5;
};

struct FusionModel {
  FusionKind kind = FusionKind::linear_svm;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> weights;
  double bias = 0;

  std::size_t systems() const { return weights.size(); }

  /// w . z + b over standardized scores.
  double apply(std::span<const double> raw) const {
    if (raw.size() != systems())
      throw ShapeError("fusion: expected " + std::to_string(systems()) + " system scores, got " +
                       std::to_string(raw.size()));
    double f = bias;
    for (std::size_t j = 0; j < raw.size(); ++j) f += weights[j] * (raw[j] - mean[j]) / stddev[j];
    return f;
  }
};

struct FusionFitResult {
  FusionModel model;
  double objective = 0;
  std::vector<std::string> warnings;
};

/// Per-utterance score vectors aligned across systems.
struct AlignedScores {
  std::vector<ScoreRecord> reference;       // utterance metadata, order of the first system
  std::vector<std::vector<double>> scores;  // [utterance][system]
};

/// Aligns several score lists on utterance id, in the order of the first.
inline AlignedScores align_scores(const std::vector<std::vector<ScoreRecord>>& systems) {
  if (systems.empty()) throw ValueError("fusion: no score lists");
  std::vector<std::map<std::string, const ScoreRecord*>> index(systems.size());
  for (std::size_t s = 0; s < systems.size(); ++s)
    for (const auto& r : systems[s])
      if (!index[s].emplace(r.utterance_id, &r).second)
        throw ValueError("fusion: duplicate utterance id '" + r.utterance_id + "' in system " + std::to_string(s));
  std::vector<std::string> missing;
  for (std::size_t s = 0; s < systems.size(); ++s) {
    for (const auto& [id, rec] : index[s])
      for (std::size_t o = 0; o < systems.size(); ++o)
        if (o != s && !index[o].count(id)) missing.push_back(id + " (absent from system " + std::to_string(o) + ")");
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string msg = "fusion: score lists are misaligned; missing ids:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ... (" + std::to_string(missing.size()) + " total)";
    throw ValueError(msg);
  }
  AlignedScores out;
  for (const auto& r : systems[0]) {
    std::vector<double> row;
    for (std::size_t s = 0; s < systems.size(); ++s) {
      const auto* o = index[s].at(r.utterance_id);
      if (o->key != r.key) throw ValueError("fusion: key of '" + r.utterance_id + "' differs between systems");
      row.push_back(o->score);
    }
    out.reference.push_back(r);
    out.scores.push_back(std::move(row));
  }
  return out;
}

/// Standardizes each system, drops constant systems (weight fixed at 0) and
/// fits a class-balanced linear separator by full-batch (sub)gradient
/// descent, keeping the iterate with the lowest objective.
inline FusionFitResult fit_fusion(const std::vector<std::vector<double>>& x, const std::vector<Key>& keys,
                                  const FusionOptions& opt = {}) {
  const std::size_t N = x.size();
  if (N == 0 || keys.size() != N) throw ValueError("fusion: need one label per score vector");
  const std::size_t K = x[0].size();
  if (K < 2) throw ValueError("fusion: need at least two systems");
  if (K > 8) throw ValueError("fusion: at most eight systems are supported");
  for (const auto& row : x)
    if (row.size() != K) throw ShapeError("fusion: ragged score matrix");
  std::size_t n_bona = 0;
  for (Key k : keys) n_bona += k == Key::bonafide;
  if (n_bona == 0 || n_bona == N) throw ValueError("fusion: both classes must be present");
  if (!(opt.c > 0) || opt.iterations == 0 || !(opt.step > 0)) throw ValueError("fusion: invalid hyperparameters");

  FusionFitResult res;
  FusionModel& m = res.model;
  m.kind = opt.kind;
  m.mean.assign(K, 0.0);
  m.stddev.assign(K, 1.0);
  m.weights.assign(K, 0.0);
  std::vector<bool> active(K, true);
  for (std::size_t j = 0; j < K; ++j) {
    double mu = 0, var = 0;
    for (const auto& row : x) mu += row[j];
    mu /= static_cast<double>(N);
    for (const auto& row : x) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(N);
    m.mean[j] = mu;
    if (!(var > 1e-24 * std::max(1.0, mu * mu))) {
      active[j] = false;
      res.warnings.push_back("system " + std::to_string(j) + " has constant scores; dropped from fusion");
    } else {
      m.stddev[j] = std::sqrt(var);
    }
  }

  std::vector<std::vector<double>> z(N, std::vector<double>(K, 0.0));
  std::vector<double> y(N), alpha(N);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < K; ++j)
      if (active[j]) z[i][j] = (x[i][j] - m.mean[j]) / m.stddev[j];
    y[i] = keys[i] == Key::bonafide ? 1.0 : -1.0;
    alpha[i] = static_cast<double>(N) / (2.0 * static_cast<double>(keys[i] == Key::bonafide ? n_bona : N - n_bona));
  }

  const double lambda = 1.0 / (opt.c * static_cast<double>(N));
  auto objective = [&](const std::vector<double>& w, double b) {
    double loss = 0;
    for (std::size_t i = 0; i < N; ++i) {
      double f = b;
      for (std::size_t j = 0; j < K; ++j) f += w[j] * z[i][j];
      const double margin = y[i] * f;
      loss += alpha[i] * (opt.kind == FusionKind::linear_svm ? std::max(0.0, 1 - margin)
                                                              : std::log1p(std::exp(-std::abs(margin))) + std::max(0.0, -margin));
    }
    double reg = 0;
    for (double v : w) reg += v * v;
    return 0.5 * lambda * reg + loss / static_cast<double>(N);
  };

  std::vector<double> w(K, 0.0), gw(K);
  double b = 0;
  res.objective = objective(w, b);
  std::vector<double> best_w = w;
  double best_b = b;
  for (std::size_t t = 1; t <= opt.iterations; ++t) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0;
    for (std::size_t i = 0; i < N; ++i) {
      double f = b;
      for (std::size_t j = 0; j < K; ++j) f += w[j] * z[i][j];
      const double margin = y[i] * f;
      double coef;
      if (opt.kind == FusionKind::linear_svm)
        coef = margin < 1 ? -alpha[i] * y[i] : 0.0;
      else
        coef = -alpha[i] * y[i] / (1 + std::exp(margin));
      for (std::size_t j = 0; j < K; ++j) gw[j] += coef * z[i][j];
      gb += coef;
    }
    const double eta = opt.kind == FusionKind::linear_svm ? opt.step / std::sqrt(static_cast<double>(t)) : opt.step;
    for (std::size_t j = 0; j < K; ++j)
      if (active[j]) w[j] -= eta * (lambda * w[j] + gw[j] / static_cast<double>(N));
    b -= eta * gb / static_cast<double>(N);
    const double obj = objective(w, b);
    if (obj < res.objective) {
      res.objective = obj;
      best_w = w;
      best_b = b;
    }
  }
  m.weights = best_w;
  m.bias = best_b;
  return res;
}

inline FusionFitResult fit_fusion(const std::vector<std::vector<ScoreRecord>>& systems, const FusionOptions& opt = {}) {
  auto aligned = align_scores(systems);
  std::vector<Key> keys;
  for (const auto& r : aligned.reference) keys.push_back(r.key);
  return fit_fusion(aligned.scores, keys, opt);
}

inline std::vector<ScoreRecord> apply_fusion(const FusionModel& m, const std::vector<std::vector<ScoreRecord>>& systems) {
  if (systems.size() != m.systems())
    throw ShapeError("fusion: model expects " + std::to_string(m.systems()) + " systems, got " +
                     std::to_string(systems.size()));
  auto aligned = align_scores(systems);
  std::vector<ScoreRecord> out;
  for (std::size_t i = 0; i < aligned.reference.size(); ++i) {
    auto r = aligned.reference[i];
    r.score = m.apply(aligned.scores[i]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string serialize_fusion(const FusionModel& m) {
  std::string out = "rawnet-fusion 1\nkind " + std::string(to_string(m.kind)) + "\nsystems " +
                    std::to_string(m.systems()) + "\nbias " + format_double(m.bias) + "\n";
  for (std::size_t j = 0; j < m.systems(); ++j)
    out += "system " + std::to_string(j) + " mean " + format_double(m.mean[j]) + " std " + format_double(m.stddev[j]) +
           " weight " + format_double(m.weights[j]) + "\n";
  return out;
}

inline FusionModel parse_fusion(std::string_view text) {
  detail::TokenReader in{text};
  FusionModel m;
  in.expect("rawnet-fusion");
  if (in.count() != 1) throw FormatError("unsupported fusion model version");
  in.expect("kind");
  try {
    m.kind = parse_fusion_kind(in.next());
  } catch (const ValueError& e) {
    throw FormatError(e.what());
  }
  in.expect("systems");
  const std::size_t K = in.count();
  if (K == 0) throw FormatError("fusion model has no systems");
  in.expect("bias");
  m.bias = in.number();
  for (std::size_t j = 0; j < K; ++j) {
    in.expect("system");
    if (in.count() != j) throw FormatError("fusion systems out of order");
    in.expect("mean");
    m.mean.push_back(in.number());
    in.expect("std");
    m.stddev.push_back(in.number());
    if (!(m.stddev.back() > 0)) throw FormatError("fusion std must be positive");
    in.expect("weight");
    m.weights.push_back(in.number());
  }
  return m;
}

}  // namespace rawnet
