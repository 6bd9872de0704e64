#include <gtest/gtest.h>

#include <random>

#include "lsm/metrics.hpp"

using namespace lsm;

namespace {

using U8 = std::vector<std::uint8_t>;
using D = std::vector<double>;

// All positive-negative pairs; ties count one half.
double auroc_pairs(const D& s, const U8& y) {
  std::uint64_t twice = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        ++pairs;
        twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
      }
  return double(twice) / double(2 * pairs);
}

// Full threshold sweep: flag score >= thr for every distinct score, from the
// top down, summing (R_k - R_{k-1}) * P_k in exact rational arithmetic.
double auprc_sweep(const D& s, const U8& y) {
  D thr = s;
  std::sort(thr.begin(), thr.end(), std::greater<>());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  const long pos = long(std::count(y.begin(), y.end(), 1));
  long num = 0, den = 1;  // running sum num/den
  long prev_tp = 0;
  for (double t : thr) {
    long tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) (y[i] ? tp : fp)++;
    // term = ((tp - prev_tp) / pos) * (tp / (tp + fp))
    const long tn = (tp - prev_tp) * tp, td = pos * (tp + fp);
    num = num * td + tn * den;
    den = den * td;
    const long g = std::gcd(num, den);
    num /= g;
    den /= g;
    prev_tp = tp;
  }
  return double(num) / double(den);
}

Confusion count(const D& s, const U8& y, double thr) {
  Confusion c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] > thr) {
      if (y[i]) c.tp++; else c.fp++;
    } else {
      if (y[i]) c.fn++; else c.tn++;
    }
  }
  return c;
}

}  // namespace

TEST(Threshold, HandExamples) {
  const D s{0.9, 0.4, 0.6, 0.1};
  const U8 y{1, 1, 0, 0};
  const auto c = confusion_at(s, y, 0.5);
  EXPECT_EQ(c, (Confusion{1, 1, 1, 1}));
  EXPECT_EQ(c.f1(), 0.5);
  EXPECT_EQ(c.accuracy(), 0.5);
  const auto perfect = confusion_at(D{1, 0, 1}, U8{1, 0, 1}, 0.5);
  EXPECT_EQ(perfect.accuracy(), 1.0);
  EXPECT_EQ(perfect.f1(), 1.0);
}

TEST(Threshold, AllNegativeOnThreePercentData) {
  U8 y(10000, 0);
  std::fill_n(y.begin(), 300, 1);
  const auto c = confusion_at(D(10000, 0.1), y, 0.5);
  EXPECT_DOUBLE_EQ(c.accuracy(), 0.97);
  EXPECT_EQ(c.f1(), 0.0);
}

TEST(Threshold, ScoreAtThresholdIsNotFlagged) {
  EXPECT_EQ(confusion_at(D{0.5}, U8{1}, 0.5).fn, 1u);
}

TEST(Threshold, ListValidation) {
  ScoreMap s(2, 2, 0.5);
  Grid<std::uint8_t> m(2, 2, 0), other(1, 4, 0);
  std::vector<ScoreMap> ss{s};
  std::vector<Grid<std::uint8_t>> ms{m}, bad{other};
  EXPECT_NO_THROW(threshold_metrics(ss, ms));
  EXPECT_THROW(threshold_metrics(ss, bad), DataError);
  EXPECT_THROW(threshold_metrics(ss, ms, 1.0), ConfigError);
  EXPECT_THROW(threshold_metrics(ss, ms, 0.0), ConfigError);
}

TEST(Auroc, HandExamples) {
  EXPECT_EQ(auroc(D{1, 0, 1, 0}, U8{1, 0, 1, 0}), 1.0);
  EXPECT_EQ(auroc(D{0.3, 0.3, 0.3}, U8{1, 0, 1}), 0.5);
  EXPECT_EQ(auroc(D{0.8, 0.6, 0.4}, U8{1, 0, 1}), 0.5);
}

TEST(Auroc, SingleClassIsUndefined) {
  EXPECT_THROW(auroc(D{0.1, 0.2}, U8{1, 1}), UndefinedMetricError);
  EXPECT_THROW(auroc(D{0.1, 0.2}, U8{0, 0}), UndefinedMetricError);
  EXPECT_THROW(auprc(D{0.1, 0.2}, U8{0, 0}), UndefinedMetricError);
}

TEST(Auprc, HandExamples) {
  EXPECT_EQ(auprc(D{0.9, 0.8, 0.1}, U8{1, 1, 0}), 1.0);
  EXPECT_NEAR(auprc(D{0.9, 0.8, 0.7}, U8{1, 0, 1}), 0.5 * (1.0 + 2.0 / 3.0), 1e-15);
}

TEST(Oracles, SmallInstancesWithTies) {
  std::mt19937_64 rng(1);
  int checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    D s(n);
    U8 y(n);
    const int levels = 1 + int(rng() % 6);  // few levels force ties
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = double(rng() % std::uint64_t(levels)) / levels;
      y[i] = std::uint8_t(rng() % 2);
    }
    const auto c = confusion_at(s, y, 0.5);
    ASSERT_EQ(c, count(s, y, 0.5));
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos > 0 && pos < long(n)) {
      ASSERT_EQ(auroc(s, y), auroc_pairs(s, y));
      ++checked;
    }
    if (pos > 0) {
      ASSERT_DOUBLE_EQ(auprc(s, y), auprc_sweep(s, y));
    }
  }
  EXPECT_GT(checked, 5000);
}

TEST(Auroc, RandomScoresGiveOneHalf) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  D s(100000);
  U8 y(100000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    y[i] = u(rng) < 0.03;
  }
  EXPECT_NEAR(auroc(s, y), 0.5, 0.01);
  EXPECT_NEAR(auprc(s, y), 0.03, 0.02);
}

TEST(Auc, MonotoneTransformInvariance) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 100; ++t) {
    D s(50), g(50);
    U8 y(50);
    for (std::size_t i = 0; i < 50; ++i) {
      s[i] = std::round(u(rng) * 10) / 10;
      y[i] = u(rng) < 0.4;
      g[i] = 1.0 / (1.0 + std::exp(-7 * s[i] + 2));
    }
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0) continue;
    EXPECT_EQ(auroc(s, y), auroc(g, y));
    EXPECT_EQ(auprc(s, y), auprc(g, y));
  }
}

TEST(Auroc, NegatedScoresSumToOne) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    D s(30), neg(30);
    U8 y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = double(rng() % 7);
      neg[i] = -s[i];
      y[i] = rng() % 2;
    }
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0) continue;
    EXPECT_EQ(auroc(s, y) + auroc(neg, y), 1.0);
  }
}

TEST(Auroc, EqualsTrapezoidalRocArea) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    D s(40);
    U8 y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = double(rng() % 9) / 8;
      y[i] = rng() % 3 == 0;
    }
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0) continue;
    const auto c = curves(s, y);
    double area = 0, fx = 0, ty = 0;
    for (const auto& [thr, fpr, tpr] : c.roc) {
      area += (fpr - fx) * (tpr + ty) / 2;
      fx = fpr;
      ty = tpr;
    }
    EXPECT_NEAR(area, auroc(s, y), 1e-12);
    EXPECT_DOUBLE_EQ(c.roc.back()[1], 1.0);
    EXPECT_DOUBLE_EQ(c.pr.back()[1], 1.0);
  }
}

TEST(Accumulator, PooledEqualsConcatenated) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u;
  MetricAccumulator acc;
  D all_s;
  U8 all_y;
  for (int p = 0; p < 5; ++p) {
    ScoreMap s(3, 4);
    Grid<std::uint8_t> m(3, 4);
    for (std::size_t i = 0; i < 12; ++i) {
      s.data[i] = u(rng);
      m.data[i] = u(rng) < 0.3;
    }
    acc.add(s, m);
    all_s.insert(all_s.end(), s.data.begin(), s.data.end());
    all_y.insert(all_y.end(), m.data.begin(), m.data.end());
  }
  const auto r = acc.result();
  EXPECT_EQ(r.confusion, confusion_at(all_s, all_y, 0.5));
  EXPECT_EQ(r.n_pixels, 60u);
  EXPECT_EQ(r.confusion.total(), r.n_pixels);
  EXPECT_EQ(*r.auroc, auroc(all_s, all_y));
  EXPECT_EQ(*r.auprc, auprc(all_s, all_y));
  for (double m : {r.accuracy, r.f1, *r.auroc, *r.auprc}) {
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
  }
}

TEST(Accumulator, UndefinedAucsAreAbsentNotZero) {
  MetricAccumulator acc;
  acc.add(ScoreMap(2, 2, 0.2), Grid<std::uint8_t>(2, 2, 0));
  const auto r = acc.result();
  EXPECT_FALSE(r.auroc.has_value());
  EXPECT_FALSE(r.auprc.has_value());
  EXPECT_TRUE(r.to_json()["auroc"].is_null());
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Accumulator, RejectsScoresOutsideUnitInterval) {
  MetricAccumulator acc;
  EXPECT_THROW(acc.add(ScoreMap(1, 1, 1.5), Grid<std::uint8_t>(1, 1, 0)), DataError);
  EXPECT_THROW(acc.add(ScoreMap(1, 2, 0.5), Grid<std::uint8_t>(2, 1, 0)), DataError);
}
