// SPDX-License-Identifier: Apache-2.0
//
// LFCC front-end with a bona fide GMM and a spoof GMM, scored by the mean
// per-frame log-likelihood ratio.
#pragma once

#include <string>
#include <vector>

#include "rawnet/data.hpp"
#include "rawnet/gmm.hpp"
#include "rawnet/lfcc.hpp"

namespace rawnet {

struct BaselineModel {
  LfccConfig lfcc;
  GmmModel bonafide;
  GmmModel spoof;
};

struct BaselineTrainResult {
  BaselineModel model;
  GmmFitResult bonafide_fit;
  GmmFitResult spoof_fit;
};

inline void append_rows(FeatureMatrix& dst, const FeatureMatrix& src) {
  if (dst.rows == 0) dst.cols = src.cols;
  if (src.cols != dst.cols) throw ShapeError("feature dimension mismatch while stacking");
  dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
  dst.rows += src.rows;
}

/// Pools the frames of every utterance per class and fits one GMM each.
inline BaselineTrainResult baseline_train(const Dataset& data, const LfccConfig& lfcc, GmmFitOptions opt) {
  FeatureMatrix frames[2];
  for (const auto& u : data) append_rows(frames[static_cast<int>(u.entry.key)], lfcc_extract(u.samples, lfcc));
  if (frames[0].rows == 0 || frames[1].rows == 0) throw ValueError("baseline: training data must contain both classes");
  BaselineTrainResult r;
  r.model.lfcc = lfcc;
  const std::uint64_t seed = opt.seed;
  opt.seed = mix_seed(seed, 0);
  r.bonafide_fit = gmm_fit(frames[0], opt);
  opt.seed = mix_seed(seed, 1);
  r.spoof_fit = gmm_fit(frames[1], opt);
  r.model.bonafide = r.bonafide_fit.model;
  r.model.spoof = r.spoof_fit.model;
  return r;
}

inline double baseline_score(const BaselineModel& m, const std::vector<float>& samples) {
  return gmm_score(lfcc_extract(samples, m.lfcc), m.bonafide, m.spoof);
}

inline std::vector<ScoreRecord> baseline_evaluate(const BaselineModel& m, const Dataset& data) {
  std::vector<ScoreRecord> out;
  out.reserve(data.size());
  for (const auto& u : data)
    out.push_back({u.entry.utterance_id, u.entry.attack_id, u.entry.key, baseline_score(m, u.samples)});
  return out;
}

inline std::string serialize_baseline(const BaselineModel& m) {
  const auto& c = m.lfcc;
  std::string out = "rawnet-baseline 1\n";
  out += "lfcc n_filters " + std::to_string(c.n_filters) + " frame_ms " + format_double(c.frame_ms) + " shift_ms " +
         format_double(c.shift_ms) + " n_fft " + std::to_string(c.n_fft) + " n_ceps " + std::to_string(c.n_ceps) +
         " deltas " + std::to_string(c.deltas) + " double_deltas " + std::to_string(c.double_deltas) + " f_min " +
         format_double(c.f_min) + " f_max " + format_double(c.f_max) + "\n";
  out += "bonafide\n" + serialize_gmm(m.bonafide);
  out += "spoof\n" + serialize_gmm(m.spoof);
  return out;
}

inline BaselineModel parse_baseline(std::string_view text) {
  detail::TokenReader in{text};
  BaselineModel m;
  in.expect("rawnet-baseline");
  if (in.count() != 1) throw FormatError("unsupported baseline model version");
  in.expect("lfcc");
  in.expect("n_filters");
  m.lfcc.n_filters = in.count();
  in.expect("frame_ms");
  m.lfcc.frame_ms = in.number();
  in.expect("shift_ms");
  m.lfcc.shift_ms = in.number();
  in.expect("n_fft");
  m.lfcc.n_fft = in.count();
  in.expect("n_ceps");
  m.lfcc.n_ceps = in.count();
  in.expect("deltas");
  m.lfcc.deltas = in.count() != 0;
  in.expect("double_deltas");
  m.lfcc.double_deltas = in.count() != 0;
  in.expect("f_min");
  m.lfcc.f_min = in.number();
  in.expect("f_max");
  m.lfcc.f_max = in.number();
  m.lfcc.validate();
  in.expect("bonafide");
  m.bonafide = parse_gmm(in);
  in.expect("spoof");
  m.spoof = parse_gmm(in);
  if (m.bonafide.dim != m.lfcc.dim() || m.spoof.dim != m.lfcc.dim())
    throw FormatError("baseline model: GMM dimension does not match the LFCC configuration");
  return m;
}

}  // namespace rawnet
