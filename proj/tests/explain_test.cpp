#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "nsai/explain.hpp"
#include "nsai/tensornet.hpp"
#include "oracles.hpp"

using namespace nsai;

namespace {

explain::model_fn logistic(std::vector<double> w, double b = 0.0) {
  return [w = std::move(w), b](std::span<const double> x) {
    double z = b;
    for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * x[j];
    const double p = oracle::sigmoid(z);
    return std::vector<double>{1.0 - p, p};
  };
}

std::vector<explain::feature_stat> unit_stats(std::size_t d) {
  return std::vector<explain::feature_stat>(d, {0.0, 1.0});
}

double importance_of(const explain::explanation& e, const std::string& f) {
  for (const auto& c : e.contributions)
    if (c.feature == f) return c.importance;
  ADD_FAILURE() << "no contribution for " << f;
  return 0.0;
}

const std::vector<std::string> names2{"x1", "x2"};

data::dataset grid_data() {
  net::matrix rows(40, 2);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) {
    rows(i, 0) = static_cast<double>(i % 8) - 3.5;
    rows(i, 1) = static_cast<double>(i / 8) - 2.0;
    labels[i] = 2 * rows(i, 0) - 3 * rows(i, 1) > 0 ? data::high : data::low;
  }
  return data::make_dataset(names2, rows, labels);
}

}  // namespace

TEST(Lime, SignsAndRankingOfLinearLogit) {
  const std::vector<double> x{0.0, 0.0};
  const auto e = explain::lime_explain(logistic({2, -3}), x, names2, unit_stats(2), {});
  EXPECT_GT(importance_of(e, "x1"), 0.0);
  EXPECT_LT(importance_of(e, "x2"), 0.0);
  EXPECT_EQ(e.contributions.front().feature, "x2");
  EXPECT_EQ(e.predicted, data::low);  // p = 0.5 exactly; ties go to the first class
  EXPECT_DOUBLE_EQ(e.confidence[0] + e.confidence[1], 1.0);
}

TEST(Lime, ImportanceIsPerStandardDeviation) {
  // Same model, x2 spread scaled by 1/3: effects become equal in magnitude.
  std::vector<explain::feature_stat> stats{{0.0, 1.0}, {0.0, 2.0 / 3.0}};
  const std::vector<double> x{0.0, 0.0};
  explain::lime_config cfg;
  cfg.n_samples = 5000;
  const auto e = explain::lime_explain(logistic({2, -3}), x, names2, stats, cfg);
  EXPECT_NEAR(importance_of(e, "x1"), -importance_of(e, "x2"), 0.05 * importance_of(e, "x1"));
}

TEST(Lime, ConstantModelHasNoImportance) {
  const explain::model_fn constant = [](std::span<const double>) {
    return std::vector<double>{0.3, 0.7};
  };
  const std::vector<double> x{1.0, -2.0};
  const auto e = explain::lime_explain(constant, x, names2, unit_stats(2), {});
  for (const auto& c : e.contributions) EXPECT_LT(std::abs(c.importance), 1e-3);
  EXPECT_NEAR(e.intercept, 0.7, 1e-9);
}

TEST(Lime, IgnoredFeatureNearZero) {
  const std::vector<std::string> names{"a", "b", "c"};
  const std::vector<double> x{0.2, 0.0, -0.1};
  const auto e = explain::lime_explain(logistic({1.5, 0.0, -1.0}), x, names, unit_stats(3), {});
  EXPECT_LT(std::abs(importance_of(e, "b")), 0.1 * std::abs(importance_of(e, "a")));
  EXPECT_EQ(e.contributions.back().feature, "b");
}

TEST(Lime, ZeroSpreadFeatureIsFixed) {
  std::vector<explain::feature_stat> stats{{0.0, 1.0}, {5.0, 0.0}};
  const std::vector<double> x{0.0, 5.0};
  const auto e = explain::lime_explain(logistic({1, 10}, -50), x, names2, stats, {});
  EXPECT_EQ(importance_of(e, "x2"), 0.0);
  EXPECT_GT(importance_of(e, "x1"), 0.0);
}

TEST(Lime, MirroredInstancesGiveMatchingImportance) {
  const std::vector<double> a{1.0, 0.0}, b{-1.0, 0.0};
  const auto ea = explain::lime_explain(logistic({1, 0}), a, names2, unit_stats(2), {});
  const auto eb = explain::lime_explain(logistic({1, 0}), b, names2, unit_stats(2), {});
  const double ia = importance_of(ea, "x1"), ib = importance_of(eb, "x1");
  EXPECT_NEAR(ia, ib, 0.05 * ia);
}

TEST(Lime, DeterministicForSeed) {
  const std::vector<double> x{0.3, 0.1};
  explain::lime_config cfg;
  cfg.seed = 42;
  const auto a = explain::lime_explain(logistic({2, -3}), x, names2, unit_stats(2), cfg);
  const auto b = explain::lime_explain(logistic({2, -3}), x, names2, unit_stats(2), cfg);
  EXPECT_EQ(explain::to_json(a), explain::to_json(b));
  cfg.seed = 43;
  const auto c = explain::lime_explain(logistic({2, -3}), x, names2, unit_stats(2), cfg);
  EXPECT_NE(importance_of(a, "x1"), importance_of(c, "x1"));
}

TEST(Lime, RejectsBadArguments) {
  const std::vector<double> x{0.0, 0.0};
  explain::lime_config cfg;
  cfg.n_samples = 10;
  EXPECT_THROW(explain::lime_explain(logistic({1, 1}), x, names2, unit_stats(2), cfg), error);
  EXPECT_THROW(explain::lime_explain(logistic({1, 1}), x, names2, unit_stats(3), {}), error);
  const explain::model_fn bad = [](std::span<const double>) { return std::vector<double>{1.0}; };
  EXPECT_THROW(explain::lime_explain(bad, x, names2, unit_stats(2), {}), error);
}

TEST(FeatureStatistics, PopulationMoments) {
  net::matrix rows(4, 1);
  rows.data() = {1, 2, 3, 4};
  const auto s = explain::feature_statistics(data::make_dataset({"x"}, rows, {0, 1, 0, 1}));
  EXPECT_DOUBLE_EQ(s[0].mean, 2.5);
  EXPECT_DOUBLE_EQ(s[0].std, std::sqrt(1.25));
}

TEST(GlobalExplain, SingleInstanceEqualsLocal) {
  auto d = grid_data();
  const std::vector<std::size_t> first{5};
  const auto one = data::select_rows(d, first);
  const auto stats = explain::feature_statistics(d);
  explain::lime_config cfg;
  cfg.seed = 7;
  const auto g = explain::global_explain(logistic({2, -3}), one, stats, cfg);
  auto local_cfg = cfg;
  local_cfg.seed = derive_seed(cfg.seed, 0);
  const auto e = explain::lime_explain(logistic({2, -3}), one.rows.row(0), one.feature_names, stats,
                                       local_cfg);
  ASSERT_EQ(g.instances, 1u);
  for (const auto& f : g.features) {
    EXPECT_DOUBLE_EQ(f.mean_importance, importance_of(e, f.feature));
    EXPECT_DOUBLE_EQ(f.mean_abs_importance, std::abs(importance_of(e, f.feature)));
  }
}

TEST(GlobalExplain, RanksInfluentialFeatureFirst) {
  const auto g = explain::global_explain(logistic({0.2, -1.5}), grid_data(), {});
  ASSERT_EQ(g.features.size(), 2u);
  EXPECT_GT(g.features[1].mean_abs_importance, g.features[0].mean_abs_importance);
  EXPECT_LT(g.features[1].mean_importance, 0.0);
  const auto text = explain::to_text(g);
  EXPECT_EQ(text.rfind("feature\tmean_importance\tmean_abs_importance\nx2\t", 0), 0u);
}

TEST(Mispredictions, PerfectModelGivesEmptyReport) {
  const auto report = explain::misprediction_report(logistic({20, -30}), grid_data(), {});
  EXPECT_TRUE(report.empty());
  EXPECT_EQ(explain::to_text(report), "instance\ttrue\tpredicted\tconfidence\tsupporting\tcontradicting\n");
}

TEST(Mispredictions, OneEntryPerWrongRow) {
  const auto d = grid_data();
  const auto model = logistic({1.0, 0.0});  // ignores x2
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    wrong += static_cast<int>(net::argmax(model(d.rows.row(i)))) != d.labels[i];
  ASSERT_GT(wrong, 0u);
  const auto report = explain::misprediction_report(model, d, {});
  ASSERT_EQ(report.size(), wrong);
  for (const auto& m : report) {
    const auto& e = m.detail;
    ASSERT_TRUE(e.true_label.has_value());
    EXPECT_NE(*e.true_label, e.predicted);
    EXPECT_NEAR(e.confidence[0] + e.confidence[1], 1.0, 1e-12);
    EXPECT_EQ(m.supporting.size() + m.contradicting.size(), 2u);
    const double toward = e.predicted == data::high ? 1.0 : -1.0;
    for (const auto& c : m.supporting) EXPECT_GT(c.importance * toward, 0.0);
    for (const auto& c : m.contradicting) EXPECT_LT(c.importance * toward, 0.0);
    EXPECT_EQ(e.contributions.size(), 2u);
  }
  const auto text = explain::to_text(report);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), wrong + 1);
  EXPECT_NE(text.find("(Val="), std::string::npos);
}

TEST(NetworkModel, AppliesScalingBeforePredicting) {
  auto n = net::build_mlp(1, std::vector<std::size_t>{}, 2, 0, net::activation::relu,
                          net::activation::softmax);
  n.layers[0].weights(0, 0) = -5.0;
  n.layers[0].weights(1, 0) = 5.0;
  n.layers[0].biases = {0.0, 0.0};
  const auto raw = explain::network_model(n, std::nullopt);
  const auto scaled = explain::network_model(n, std::vector<data::feature_bounds>{{10, 20}});
  const std::vector<double> x{15.0};
  EXPECT_NEAR(scaled(x)[1], oracle::sigmoid(10.0 * 0.5), 1e-12);
  EXPECT_NEAR(raw(x)[1], 1.0, 1e-12);
}
