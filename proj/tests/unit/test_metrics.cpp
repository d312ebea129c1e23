#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vflab/metrics.hpp"

using namespace vflab;
using namespace vflab::metrics;

TEST(Metrics, PerfectPredictions) {
  const std::vector<int> y{0, 1, 2, 3, 3, 2};
  const auto m = compute_metrics(y, y);
  EXPECT_EQ(m.accuracy, 100.0);
  EXPECT_EQ(m.macro_f1, 100.0);
  EXPECT_EQ(m.weighted_f1, 100.0);
}

TEST(Metrics, BalancedTwoByTwo) {
  const auto m = from_confusion({{1, 1}, {1, 1}});
  EXPECT_DOUBLE_EQ(m.accuracy, 50.0);
  EXPECT_DOUBLE_EQ(m.macro_f1, 50.0);
  EXPECT_DOUBLE_EQ(m.weighted_f1, 50.0);
}

TEST(Metrics, HandWorkedExample) {
  // counts worked by hand: class 0 p=r=1/2, class 1 p=2/3 r=1, class 2 perfect, class 3 never hit
  const std::vector<int> t{0, 0, 1, 1, 2, 3}, p{0, 1, 1, 1, 2, 0};
  const auto m = compute_metrics(t, p);
  EXPECT_NEAR(m.accuracy, 400.0 / 6, 1e-12);
  EXPECT_NEAR(m.per_class[0].f1, 50.0, 1e-12);
  EXPECT_NEAR(m.per_class[1].f1, 80.0, 1e-12);
  EXPECT_NEAR(m.per_class[1].precision, 200.0 / 3, 1e-12);
  EXPECT_NEAR(m.per_class[2].f1, 100.0, 1e-12);
  EXPECT_EQ(m.per_class[3].f1, 0.0);
  EXPECT_FALSE(m.per_class[3].degenerate);
  EXPECT_NEAR(m.macro_f1, 57.5, 1e-12);
  EXPECT_NEAR(m.weighted_f1, 60.0, 1e-12);
  EXPECT_EQ(m.confusion[0][1], 1);
  EXPECT_EQ(m.confusion[3][0], 1);
}

TEST(Metrics, DegenerateClassFlagged) {
  const std::vector<int> t{0, 1, 1, 0}, p{0, 1, 0, 0};
  const auto m = compute_metrics(t, p);
  EXPECT_TRUE(m.per_class[2].degenerate);
  EXPECT_TRUE(m.per_class[3].degenerate);
  EXPECT_EQ(m.per_class[2].f1, 0.0);
  EXPECT_FALSE(m.per_class[0].degenerate);
}

TEST(Metrics, RecomputableFromConfusion) {
  std::mt19937_64 rng(4);
  std::vector<int> t(300), p(300);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<int>(rng() % 4);
    p[i] = rng() % 3 ? t[i] : static_cast<int>(rng() % 4);
  }
  const auto a = compute_metrics(t, p);
  const auto b = from_confusion(a.confusion);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.macro_f1, b.macro_f1);
  EXPECT_EQ(a.weighted_f1, b.weighted_f1);
  const auto c = Metrics::from_json(a.to_json());
  EXPECT_EQ(c.macro_f1, a.macro_f1);
  EXPECT_EQ(c.confusion, a.confusion);
}

TEST(Metrics, Errors) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(compute_metrics(a, b), ConfigError);
  const std::vector<int> bad{0, 4};
  EXPECT_THROW(compute_metrics(a, bad), ConfigError);
  EXPECT_THROW(from_confusion({{1, 2}, {3}}), ConfigError);
}

TEST(MeanStd, Population) {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  const auto s = mean_std(v);
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_DOUBLE_EQ(s.std, 2.0);
}

TEST(MeanStd, SingleAndEmpty) {
  const std::vector<double> one{3.5};
  EXPECT_EQ(mean_std(one).mean, 3.5);
  EXPECT_EQ(mean_std(one).std, 0.0);
  EXPECT_EQ(mean_std({}).mean, 0.0);
}
