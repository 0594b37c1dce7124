// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "metrics_oracle.hpp"
#include "rawnet/metrics.hpp"

namespace rawnet {
namespace {

using testing::oracle_eer;
using testing::oracle_min_tdcf;
using testing::oracle_point;
using testing::oracle_thresholds;
using testing::random_score_set;

TEST(Det, SeparatedSingletons) {
  std::vector<double> b{1}, s{0};
  auto det = det_curve(b, s);
  bool found = false;
  for (const auto& p : det) found |= p.p_miss == 0 && p.p_fa == 0;
  EXPECT_TRUE(found);
}

TEST(Det, IdenticalSingletonsOnlyExtremes) {
  std::vector<double> b{0.5}, s{0.5};
  for (const auto& p : det_curve(b, s))
    EXPECT_TRUE((p.p_miss == 0 && p.p_fa == 1) || (p.p_miss == 1 && p.p_fa == 0));
}

TEST(Det, MatchesPerThresholdCounting) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    auto set = random_score_set(rng, 100);
    auto det = det_curve(set.bona, set.spoof);
    auto thresholds = oracle_thresholds(set.bona, set.spoof);
    ASSERT_EQ(det.size(), thresholds.size());
    for (std::size_t i = 0; i < det.size(); ++i) {
      EXPECT_EQ(det[i].threshold, thresholds[i]);
      auto p = oracle_point(set.bona, set.spoof, thresholds[i]);
      EXPECT_DOUBLE_EQ(det[i].p_miss, p.p_miss);
      EXPECT_DOUBLE_EQ(det[i].p_fa, p.p_fa);
    }
  }
  std::vector<double> empty, one{1};
  EXPECT_THROW(det_curve(empty, one), ValueError);
  EXPECT_THROW(det_curve(one, empty), ValueError);
}

TEST(Eer, WorkedExamples) {
  std::vector<double> b{2, 3, 4}, s{-1, 0, 1};
  EXPECT_EQ(compute_eer(b, s).eer, 0.0);
  std::vector<double> b01{0, 1, 0, 1}, s01{0, 1, 0, 1};
  EXPECT_NEAR(compute_eer(b01, s01).eer, 0.5, 1e-15);
  std::vector<double> b13{1, 3}, s24{2, 4};
  EXPECT_NEAR(compute_eer(b13, s24).eer, 0.5, 1e-15);
  std::vector<double> bc{1, 1, 1}, sc{1, 1};
  EXPECT_NEAR(compute_eer(bc, sc).eer, 0.5, 1e-15);
}

TEST(Eer, RocchMatchesPairwiseOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    auto set = random_score_set(rng, 300);
    const double e = compute_eer(set.bona, set.spoof).eer;
    EXPECT_NEAR(e, oracle_eer(set.bona, set.spoof), 1e-9) << "trial " << trial;
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 0.5 + 1e-12);
  }
}

TEST(Eer, NaiveCrossingIsAnAverageOfOneOperatingPoint) {
  std::vector<double> b{1, 3}, s{2, 4};
  auto r = compute_eer(b, s, EerMethod::naive);
  EXPECT_DOUBLE_EQ(r.eer, 0.5);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto set = random_score_set(rng, 200);
    auto naive = compute_eer(set.bona, set.spoof, EerMethod::naive);
    auto p = oracle_point(set.bona, set.spoof, naive.threshold);
    EXPECT_DOUBLE_EQ(naive.eer, (p.p_miss + p.p_fa) / 2);
    // Any single operating point bounds the hull crossing by its worse rate.
    EXPECT_LE(compute_eer(set.bona, set.spoof).eer, std::max(p.p_miss, p.p_fa) + 1e-12);
  }
}

TEST(Tdcf, ConstantsFromConfig) {
  TdcfConfig c;
  EXPECT_NEAR(c.c1(), 0.9405 * (1 - 0.01) - 0.0095 * 10 * 0.01, 1e-15);
  EXPECT_NEAR(c.c2(), 10 * 0.05 * 0.9, 1e-15);
}

TEST(Tdcf, DegenerateCasesExact) {
  TdcfConfig cfg;
  std::vector<double> b{2, 3}, s{0, 1};
  EXPECT_EQ(min_tdcf(b, s, cfg).min_tdcf, 0.0);
  std::vector<double> bc(7, 0.25), sc(11, 0.25);
  EXPECT_EQ(min_tdcf(bc, sc, cfg).min_tdcf, 1.0);
}

TEST(Tdcf, MatchesBruteForceAndStaysInUnitInterval) {
  std::mt19937_64 rng(4);
  TdcfConfig cfg;
  for (int trial = 0; trial < 60; ++trial) {
    auto set = random_score_set(rng, 300);
    const double v = min_tdcf(set.bona, set.spoof, cfg).min_tdcf;
    EXPECT_NEAR(v, oracle_min_tdcf(set.bona, set.spoof, cfg), 1e-9);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Tdcf, RejectsDegenerateCostsAndBadConfig) {
  TdcfConfig zero_c2;
  zero_c2.p_miss_spoof_asv = 1.0;
  std::vector<double> b{1}, s{0};
  EXPECT_THROW(min_tdcf(b, s, zero_c2), ValueError);
  TdcfConfig bad_priors;
  bad_priors.pi_spoof = 0.2;
  EXPECT_THROW(min_tdcf(b, s, bad_priors), ValueError);
  TdcfConfig neg;
  neg.c_fa_cm = -1;
  EXPECT_THROW(neg.validate(), ValueError);
}

TEST(Metrics, InvariantUnderIncreasingTransformAndPolarity) {
  std::mt19937_64 rng(5);
  TdcfConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    auto set = random_score_set(rng, 200);
    std::vector<ScoreRecord> recs, flipped;
    std::vector<double> tb, ts;
    for (double v : set.bona) {
      recs.push_back({"b", "-", Key::bonafide, v});
      flipped.push_back({"b", "-", Key::bonafide, -v});
      tb.push_back(std::exp(v / 2) + 3);
    }
    for (double v : set.spoof) {
      recs.push_back({"s", "A01", Key::spoof, v});
      flipped.push_back({"s", "A01", Key::spoof, -v});
      ts.push_back(std::exp(v / 2) + 3);
    }
    EXPECT_NEAR(compute_eer(tb, ts).eer, compute_eer(set.bona, set.spoof).eer, 1e-12);
    EXPECT_NEAR(min_tdcf(tb, ts, cfg).min_tdcf, min_tdcf(set.bona, set.spoof, cfg).min_tdcf, 1e-12);
    auto a = per_attack_report(recs, cfg);
    auto f = per_attack_report(flipped, cfg, Polarity::higher_is_spoof);
    EXPECT_EQ(a.pooled_eer, f.pooled_eer);
    EXPECT_EQ(a.pooled_min_tdcf, f.pooled_min_tdcf);
    EXPECT_EQ(format_report_tsv(a), format_report_tsv(f));
  }
}

TEST(Report, SingleAttackEqualsPooled) {
  std::mt19937_64 rng(6);
  auto set = random_score_set(rng, 200);
  std::vector<ScoreRecord> recs;
  for (double v : set.bona) recs.push_back({"b", "-", Key::bonafide, v});
  for (double v : set.spoof) recs.push_back({"s", "A17", Key::spoof, v});
  auto r = per_attack_report(recs, TdcfConfig{});
  ASSERT_EQ(r.per_attack.size(), 1u);
  EXPECT_EQ(r.per_attack[0].min_tdcf, r.pooled_min_tdcf);
  EXPECT_EQ(r.per_attack[0].eer, r.pooled_eer);
}

TEST(Report, EasyAttackScoresZeroAndRowsAreSorted) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0, 1);
  std::vector<ScoreRecord> recs;
  for (int i = 0; i < 100; ++i) recs.push_back({"b", "-", Key::bonafide, 1 + g(rng)});
  for (int i = 0; i < 80; ++i) recs.push_back({"h", "A17", Key::spoof, 0.5 + g(rng)});
  for (int i = 0; i < 80; ++i) recs.push_back({"e", "A09", Key::spoof, -50 + g(rng)});
  auto r = per_attack_report(recs, TdcfConfig{}, Polarity::higher_is_bonafide, EerMethod::rocch, {"A09", "A17", "A18"});
  ASSERT_EQ(r.per_attack.size(), 2u);
  EXPECT_EQ(r.per_attack[0].attack_id, "A09");
  EXPECT_EQ(r.per_attack[1].attack_id, "A17");
  EXPECT_EQ(r.per_attack[0].min_tdcf, 0.0);
  EXPECT_GT(r.per_attack[1].min_tdcf, 0.0);
  EXPECT_LE(r.pooled_min_tdcf, r.per_attack[1].min_tdcf);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("A18"), std::string::npos);
  auto text = format_report_text(r);
  EXPECT_NE(text.find("pooled min t-DCF"), std::string::npos);
  EXPECT_LT(text.find("A09"), text.find("A17"));
}

TEST(TdcfConfigFile, ParsesOverridesAndRejectsJunk) {
  auto c = parse_tdcf_config("# comment\np_fa_asv = 0.02  # inline\n\nc_fa_cm = 5\n");
  EXPECT_DOUBLE_EQ(c.p_fa_asv, 0.02);
  EXPECT_DOUBLE_EQ(c.c_fa_cm, 5);
  EXPECT_DOUBLE_EQ(c.pi_spoof, 0.05);
  EXPECT_THROW(parse_tdcf_config("bogus = 1\n"), FormatError);
  EXPECT_THROW(parse_tdcf_config("c_fa_cm 5\n"), FormatError);
  EXPECT_THROW(parse_tdcf_config("c_fa_cm = x\n"), FormatError);
  EXPECT_THROW(parse_tdcf_config("pi_spoof = 0.5\n"), ValueError);
}

TEST(TdcfConfigFile, ShippedConstantsMatchBuiltInDefaults) {
  const auto c = parse_tdcf_config(read_text_file(std::string(RAWNET_SOURCE_DIR) + "/config/tdcf_asvspoof2019.txt"));
  const TdcfConfig d;
  EXPECT_NEAR(c.pi_target, d.pi_target, 1e-15);
  EXPECT_NEAR(c.pi_nontarget, d.pi_nontarget, 1e-15);
  EXPECT_EQ(c.pi_spoof, d.pi_spoof);
  EXPECT_EQ(c.c_miss_asv, d.c_miss_asv);
  EXPECT_EQ(c.c_fa_asv, d.c_fa_asv);
  EXPECT_EQ(c.c_miss_cm, d.c_miss_cm);
  EXPECT_EQ(c.c_fa_cm, d.c_fa_cm);
  EXPECT_EQ(c.p_miss_asv, d.p_miss_asv);
  EXPECT_EQ(c.p_fa_asv, d.p_fa_asv);
  EXPECT_EQ(c.p_miss_spoof_asv, d.p_miss_spoof_asv);
  EXPECT_GT(c.c1(), 0.0);
  EXPECT_GT(c.c2(), 0.0);
}

}  // namespace
}  // namespace rawnet
