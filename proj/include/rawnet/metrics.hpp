// SPDX-License-Identifier: Apache-2.0
//
// DET curve, equal error rate and the original minimum normalized tandem
// detection cost, pooled and per attack.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rawnet/data.hpp"
#include "rawnet/error.hpp"

namespace rawnet {

/// Operating point at threshold t: bona fide scores below t are missed,
/// spoof scores at or above t are falsely accepted.
struct DetPoint {
  double threshold;
  double p_miss;
  double p_fa;
};

/// Points at -inf, every distinct score in increasing order, and +inf.
inline std::vector<DetPoint> det_curve(std::span<const double> bona, std::span<const double> spoof) {
  if (bona.empty() || spoof.empty()) throw ValueError("det_curve: both bona fide and spoof scores are required");
  std::vector<std::pair<double, int>> all;
  all.reserve(bona.size() + spoof.size());
  for (double s : bona) all.emplace_back(s, 0);
  for (double s : spoof) all.emplace_back(s, 1);
  std::sort(all.begin(), all.end());

  const double nb = static_cast<double>(bona.size()), ns = static_cast<double>(spoof.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<DetPoint> out{{-inf, 0.0, 1.0}};
  std::size_t bona_below = 0, spoof_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double t = all[i].first;
    out.push_back({t, bona_below / nb, (ns - spoof_below) / ns});
    for (; i < all.size() && all[i].first == t; ++i) (all[i].second == 0 ? bona_below : spoof_below)++;
  }
  out.push_back({inf, 1.0, 0.0});
  return out;
}

enum class EerMethod { rocch, naive };

struct EerResult {
  double eer;
  double threshold;
};

/// ROCCH: the EER is where the lower convex hull of the (P_miss, P_fa)
/// points crosses the diagonal, interpolating linearly between hull
/// vertices. Naive: the DET point minimizing |P_miss - P_fa|, averaged.
inline EerResult compute_eer(std::span<const double> bona, std::span<const double> spoof,
                             EerMethod method = EerMethod::rocch) {
  const auto det = det_curve(bona, spoof);
  if (method == EerMethod::naive) {
    const DetPoint* best = &det.front();
    for (const auto& p : det)
      if (std::abs(p.p_miss - p.p_fa) < std::abs(best->p_miss - best->p_fa)) best = &p;
    return {(best->p_miss + best->p_fa) / 2, best->threshold};
  }

  // Monotone-chain lower hull; x = P_miss increases, y = P_fa decreases.
  std::vector<const DetPoint*> hull;
  auto cross = [](const DetPoint* o, const DetPoint* a, const DetPoint* b) {
    return (a->p_miss - o->p_miss) * (b->p_fa - o->p_fa) - (a->p_fa - o->p_fa) * (b->p_miss - o->p_miss);
  };
  for (const auto& p : det) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), &p) <= 0) hull.pop_back();
    hull.push_back(&p);
  }
  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    const auto *a = hull[i], *b = hull[i + 1];
    const double da = a->p_miss - a->p_fa, db = b->p_miss - b->p_fa;
    if (da <= 0 && db >= 0) {
      if (da == db) return {a->p_miss, a->threshold};
      const double t = da / (da - db);
      const double eer = a->p_miss + t * (b->p_miss - a->p_miss);
      return {eer, t < 0.5 ? a->threshold : b->threshold};
    }
  }
  throw ValueError("compute_eer: hull does not cross the diagonal");
}

// ---------------------------------------------------------------------------
// t-DCF

/// Costs, priors and the fixed ASV operating point of the original t-DCF.
/// The defaults are ASVspoof 2019 style constants; the ASV error rates are
/// illustrative placeholders, since no ASV system is part of this project.
struct TdcfConfig {
  double pi_target = 0.95 * 0.99;
  double pi_nontarget = 0.95 * 0.01;
  double pi_spoof = 0.05;
  double c_miss_asv = 1;
  double c_fa_asv = 10;
  double c_miss_cm = 1;
  double c_fa_cm = 10;
  double p_miss_asv = 0.01;
  double p_fa_asv = 0.01;
  double p_miss_spoof_asv = 0.10;

  void validate() const {
    for (auto [name, p] : {std::pair{"pi_target", pi_target}, {"pi_nontarget", pi_nontarget}, {"pi_spoof", pi_spoof},
                           {"p_miss_asv", p_miss_asv}, {"p_fa_asv", p_fa_asv}, {"p_miss_spoof_asv", p_miss_spoof_asv}})
      if (!(p >= 0 && p <= 1)) throw ValueError(std::string("tdcf: ") + name + " must lie in [0, 1]");
    if (std::abs(pi_target + pi_nontarget + pi_spoof - 1) > 1e-12) throw ValueError("tdcf: priors must sum to 1");
    double cost_sum = 0;
    for (auto [name, c] : {std::pair{"c_miss_asv", c_miss_asv}, {"c_fa_asv", c_fa_asv}, {"c_miss_cm", c_miss_cm},
                           {"c_fa_cm", c_fa_cm}}) {
      if (!(c >= 0) || !std::isfinite(c)) throw ValueError(std::string("tdcf: ") + name + " must be nonnegative");
      cost_sum += c;
    }
    if (cost_sum <= 0) throw ValueError("tdcf: at least one cost must be positive");
  }

  /// Weight of the CM miss rate.
  double c1() const { return pi_target * (c_miss_cm - c_miss_asv * p_miss_asv) - pi_nontarget * c_fa_asv * p_fa_asv; }
  /// Weight of the CM false-alarm rate.
  double c2() const { return c_fa_cm * pi_spoof * (1 - p_miss_spoof_asv); }
};

/// Reads "name = value" lines; '#' starts a comment. Unlisted keys keep
/// their defaults, unknown keys are errors.
inline TdcfConfig parse_tdcf_config(std::string_view text) {
  TdcfConfig cfg;
  const std::map<std::string, double TdcfConfig::*, std::less<>> fields{
      {"pi_target", &TdcfConfig::pi_target},   {"pi_nontarget", &TdcfConfig::pi_nontarget},
      {"pi_spoof", &TdcfConfig::pi_spoof},     {"c_miss_asv", &TdcfConfig::c_miss_asv},
      {"c_fa_asv", &TdcfConfig::c_fa_asv},     {"c_miss_cm", &TdcfConfig::c_miss_cm},
      {"c_fa_cm", &TdcfConfig::c_fa_cm},       {"p_miss_asv", &TdcfConfig::p_miss_asv},
      {"p_fa_asv", &TdcfConfig::p_fa_asv},     {"p_miss_spoof_asv", &TdcfConfig::p_miss_spoof_asv}};
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw FormatError("tdcf config line " + std::to_string(line_no) + ": " + what);
    };
    if (tokens.size() != 3 || tokens[1] != "=") fail("expected 'name = value'");
    auto it = fields.find(tokens[0]);
    if (it == fields.end()) fail("unknown parameter '" + std::string(tokens[0]) + "'");
    double v = 0;
    auto [ptr, ec] = std::from_chars(tokens[2].data(), tokens[2].data() + tokens[2].size(), v);
    if (ec != std::errc() || ptr != tokens[2].data() + tokens[2].size()) fail("bad number '" + std::string(tokens[2]) + "'");
    cfg.*(it->second) = v;
  }
  cfg.validate();
  return cfg;
}

struct TdcfResult {
  double min_tdcf;
  double threshold;
};

/// min over thresholds of (C1 P_miss + C2 P_fa) / min(C1, C2). The
/// normalizer is the cost of the better of the accept-all and reject-all
/// operating points, so a no-information CM scores exactly 1.
inline TdcfResult min_tdcf(std::span<const double> bona, std::span<const double> spoof, const TdcfConfig& cfg) {
  cfg.validate();
  const double c1 = cfg.c1(), c2 = cfg.c2();
  if (c1 <= 0 || c2 <= 0)
    throw ValueError("tdcf: degenerate costs (C1=" + format_double(c1) + ", C2=" + format_double(c2) +
                     "); both must be positive");
  const double norm = std::min(c1, c2);
  TdcfResult best{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& p : det_curve(bona, spoof)) {
    const double v = (c1 * p.p_miss + c2 * p.p_fa) / norm;
    if (v < best.min_tdcf) best = {v, p.threshold};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Reports

enum class Polarity { higher_is_bonafide, higher_is_spoof };

struct AttackRow {
  std::string attack_id;
  std::size_t n_spoof = 0;
  double min_tdcf = 0;
  double eer = 0;
};

struct MetricReport {
  std::size_t n_bonafide = 0;
  std::size_t n_spoof = 0;
  double pooled_eer = 0;
  double eer_threshold = 0;
  double pooled_min_tdcf = 0;
  double tdcf_threshold = 0;
  std::vector<AttackRow> per_attack;  // lexicographic by attack id
  std::vector<std::string> warnings;
};

/// Pooled metrics over all trials plus, per attack, all bona fide trials
/// against that attack's spoofs. Attacks named in `expected_attacks` with no
/// spoof trials are skipped with a warning.
inline MetricReport per_attack_report(const std::vector<ScoreRecord>& records, const TdcfConfig& cfg,
                                      Polarity polarity = Polarity::higher_is_bonafide,
                                      EerMethod eer_method = EerMethod::rocch,
                                      const std::vector<std::string>& expected_attacks = {}) {
  const double sign = polarity == Polarity::higher_is_bonafide ? 1.0 : -1.0;
  std::vector<double> bona, spoof;
  std::map<std::string, std::vector<double>> by_attack;
  for (const auto& r : records) {
    const double s = sign * r.score;
    if (r.key == Key::bonafide) {
      bona.push_back(s);
    } else {
      spoof.push_back(s);
      by_attack[r.attack_id].push_back(s);
    }
  }
  if (bona.empty() || spoof.empty()) throw ValueError("report: scores must contain both bona fide and spoof trials");

  MetricReport rep;
  rep.n_bonafide = bona.size();
  rep.n_spoof = spoof.size();
  const auto eer = compute_eer(bona, spoof, eer_method);
  rep.pooled_eer = eer.eer;
  rep.eer_threshold = sign * eer.threshold;
  const auto tdcf = min_tdcf(bona, spoof, cfg);
  rep.pooled_min_tdcf = tdcf.min_tdcf;
  rep.tdcf_threshold = sign * tdcf.threshold;
  for (const auto& a : expected_attacks)
    if (!by_attack.count(a)) rep.warnings.push_back("attack " + a + " has no spoof trials; skipped");
  for (const auto& [attack, s] : by_attack)
    rep.per_attack.push_back({attack, s.size(), min_tdcf(bona, s, cfg).min_tdcf, compute_eer(bona, s, eer_method).eer});
  return rep;
}

namespace detail {
inline std::string fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}
}  // namespace detail

inline std::string format_report_text(const MetricReport& r) {
  std::string out;
  out += "trials: " + std::to_string(r.n_bonafide) + " bona fide, " + std::to_string(r.n_spoof) + " spoof\n";
  out += "pooled EER:        " + detail::fixed(100 * r.pooled_eer, 4) + " %\n";
  out += "pooled min t-DCF:  " + detail::fixed(r.pooled_min_tdcf, 6) + "\n";
  std::size_t w = 6;
  for (const auto& a : r.per_attack) w = std::max(w, a.attack_id.size());
  auto pad = [](std::string s, std::size_t n) { return s + std::string(n > s.size() ? n - s.size() : 0, ' '); };
  out += pad("attack", w) + "  n_spoof  min_tdcf   eer_%\n";
  for (const auto& a : r.per_attack) {
    std::string n = std::to_string(a.n_spoof);
    out += pad(a.attack_id, w) + "  " + std::string(7 > n.size() ? 7 - n.size() : 0, ' ') + n + "  " +
           detail::fixed(a.min_tdcf, 6) + "  " + detail::fixed(100 * a.eer, 4) + "\n";
  }
  for (const auto& msg : r.warnings) out += "warning: " + msg + "\n";
  return out;
}

inline std::string format_report_tsv(const MetricReport& r) {
  std::string out = "scope\tattack_id\tn_bonafide\tn_spoof\tmin_tdcf\teer\n";
  out += "pooled\t*\t" + std::to_string(r.n_bonafide) + '\t' + std::to_string(r.n_spoof) + '\t' +
         format_double(r.pooled_min_tdcf) + '\t' + format_double(r.pooled_eer) + '\n';
  for (const auto& a : r.per_attack)
    out += "attack\t" + a.attack_id + '\t' + std::to_string(r.n_bonafide) + '\t' + std::to_string(a.n_spoof) + '\t' +
           format_double(a.min_tdcf) + '\t' + format_double(a.eer) + '\n';
  return out;
}

}  // namespace rawnet
