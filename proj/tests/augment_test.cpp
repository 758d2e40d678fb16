#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "nsai/augment.hpp"
#include "nsai/datakit.hpp"
#include "oracles.hpp"

using namespace nsai;

namespace {

data::dataset two_by_two() {
  // minority (Low): (0,0), (1,1); majority (High): three points
  net::matrix rows(5, 2);
  const double v[5][2] = {{0, 0}, {1, 1}, {5, 5}, {6, 5}, {5, 6}};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j) rows(i, j) = v[i][j];
  return data::make_dataset({"a", "b"}, rows, {data::low, data::low, data::high, data::high, data::high});
}

const data::dataset& default_synthetic() {
  static const auto d = data::generate_synthetic({}).train;
  return d;
}

}  // namespace

TEST(Smote, SegmentCaseWithOneNeighbour) {
  augment::smote_config cfg;
  cfg.k_neighbors = 1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    const auto r = augment::smote(two_by_two(), cfg);
    ASSERT_EQ(r.synthetic, 1u);
    ASSERT_EQ(r.data.size(), 6u);
    const double x = r.data.rows(5, 0), y = r.data.rows(5, 1);
    EXPECT_DOUBLE_EQ(x, y);
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
    EXPECT_EQ(r.data.labels[5], data::low);
  }
}

TEST(Smote, ZeroLambdaReproducesBase) {
  const auto d = two_by_two();
  const std::vector<augment::smote_draw> plan{{1, 0, 0.0}, {0, 1, 1.0}};
  const auto out = augment::apply_smote_plan(d, plan);
  EXPECT_EQ(out.rows(5, 0), 1.0);
  EXPECT_EQ(out.rows(5, 1), 1.0);
  EXPECT_EQ(out.rows(6, 0), 1.0);
  EXPECT_EQ(out.origin[5], "smote");
}

TEST(Smote, EqualizesDefaultSyntheticData) {
  const auto& d = default_synthetic();
  ASSERT_EQ(d.count(data::high), 364u);
  ASSERT_EQ(d.count(data::low), 63u);
  const auto r = augment::smote(d, {});
  EXPECT_EQ(r.synthetic, 301u);
  EXPECT_EQ(r.data.count(data::high), 364u);
  EXPECT_EQ(r.data.count(data::low), 364u);
  EXPECT_FALSE(r.unchanged);
  // originals first and untouched, provenance recorded
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(r.data.labels[i], d.labels[i]);
    for (std::size_t j = 0; j < d.dims(); ++j) ASSERT_EQ(r.data.rows(i, j), d.rows(i, j));
    EXPECT_EQ(r.data.origin[i], "real");
  }
  for (std::size_t i = d.size(); i < r.data.size(); ++i) {
    EXPECT_EQ(r.data.labels[i], data::low);
    EXPECT_EQ(r.data.origin[i], "smote");
  }
}

TEST(Smote, PointsStayOnNeighbourSegments) {
  const auto& d = default_synthetic();
  augment::smote_config cfg;
  cfg.seed = 5;
  const auto plan = augment::smote_plan(d, cfg);
  const auto b = data::compute_bounds(d.rows);
  std::vector<std::vector<double>> scaled, raw;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < d.size(); ++i) {
    raw.emplace_back(d.rows.row(i).begin(), d.rows.row(i).end());
    scaled.push_back(data::scale_row(d.rows.row(i), b));
    if (d.labels[i] == data::low) pool.push_back(i);
  }
  for (const auto& p : plan) {
    EXPECT_EQ(d.labels[p.base], data::low);
    const auto nn = oracle::knn(scaled, p.base, pool, cfg.k_neighbors);
    // ties in distance may order neighbours differently; require membership
    // among rows no farther than the oracle's k-th neighbour
    double kth = 0.0, dist = 0.0;
    for (std::size_t c = 0; c < d.dims(); ++c) {
      kth += std::pow(scaled[p.base][c] - scaled[nn.back()][c], 2);
      dist += std::pow(scaled[p.base][c] - scaled[p.neighbor][c], 2);
    }
    EXPECT_LE(dist, kth + 1e-12);
    EXPECT_EQ(d.labels[p.neighbor], data::low);
    EXPECT_NE(p.neighbor, p.base);
    EXPECT_GE(p.lambda, 0.0);
    EXPECT_LE(p.lambda, 1.0);
  }
  const auto out = augment::apply_smote_plan(d, plan);
  for (std::size_t s = 0; s < plan.size(); ++s) {
    const std::vector<double> x(out.rows.row(d.size() + s).begin(), out.rows.row(d.size() + s).end());
    EXPECT_TRUE(oracle::on_segment(x, raw[plan[s].base], raw[plan[s].neighbor]));
  }
}

TEST(Smote, MinorityRatioTarget) {
  augment::smote_config cfg;
  cfg.target = augment::minority_ratio{0.5};
  const auto r = augment::smote(default_synthetic(), cfg);
  EXPECT_EQ(r.data.count(data::low), 182u);
  EXPECT_EQ(r.synthetic, 182u - 63u);
}

TEST(Smote, BalancedInputUnchanged) {
  net::matrix rows(4, 1);
  for (std::size_t i = 0; i < 4; ++i) rows(i, 0) = static_cast<double>(i);
  const auto d = data::make_dataset({"a"}, rows, {0, 1, 0, 1});
  const auto r = augment::smote(d, {});
  EXPECT_TRUE(r.unchanged);
  EXPECT_EQ(r.synthetic, 0u);
  EXPECT_EQ(r.data, d);
}

TEST(Smote, MinorityTooSmall) {
  augment::smote_config cfg;
  cfg.k_neighbors = 2;
  EXPECT_THROW(augment::smote(two_by_two(), cfg), error);
  net::matrix rows(4, 1, 0.0);
  const auto single = data::make_dataset({"a"}, rows, {0, 1, 1, 1});
  cfg.k_neighbors = 1;
  EXPECT_THROW(augment::smote(single, cfg), error);
  cfg.k_neighbors = 0;
  EXPECT_THROW(augment::smote(two_by_two(), cfg), error);
}

TEST(Smote, Deterministic) {
  augment::smote_config cfg;
  cfg.seed = 17;
  EXPECT_EQ(augment::smote(default_synthetic(), cfg).data, augment::smote(default_synthetic(), cfg).data);
  auto other = cfg;
  other.seed = 18;
  EXPECT_NE(augment::smote(default_synthetic(), cfg).data, augment::smote(default_synthetic(), other).data);
}

TEST(Smote, WorksOnScaledData) {
  const auto scaled = data::normalize(default_synthetic());
  const auto r = augment::smote(scaled, {});
  EXPECT_EQ(r.data.count(data::low), 364u);
  EXPECT_TRUE(r.data.scaling.has_value());
}

namespace {

const augment::autoencoder& default_autoencoder() {
  static const auto ae = [] {
    augment::autoencoder_config cfg;
    cfg.train.seed = 3;
    return augment::train_autoencoder(default_synthetic(), cfg);
  }();
  return ae;
}

}  // namespace

TEST(Autoencoder, DefaultShape) {
  const auto& ae = default_autoencoder();
  std::vector<std::size_t> widths{ae.net.input_dim()};
  for (const auto& l : ae.net.layers) widths.push_back(l.outputs());
  EXPECT_EQ(widths, (std::vector<std::size_t>{9, 8, 4, 2, 4, 8, 9}));
  EXPECT_EQ(ae.bottleneck, 2u);
  EXPECT_EQ(encode(ae, default_synthetic().rows.row(0)).size(), 2u);
  EXPECT_EQ(ae.net.layers[0].act, net::activation::relu);
  EXPECT_EQ(ae.net.layers.back().act, net::activation::linear);
}

TEST(Autoencoder, BestEpochNoWorseThanFirst) {
  const auto& r = default_autoencoder().report;
  ASSERT_GE(r.best_epoch, 1u);
  EXPECT_GE(r.validation_score_history[r.best_epoch - 1], r.validation_score_history.front());
}

TEST(Autoencoder, ConstantDataReconstructs) {
  net::matrix rows(20, 3);
  for (std::size_t i = 0; i < 20; ++i) {
    rows(i, 0) = 4.0;
    rows(i, 1) = -1.5;
    rows(i, 2) = 10.0;
  }
  const auto d = data::make_dataset({"a", "b", "c"}, rows, std::vector<int>(20, data::high));
  augment::autoencoder_config cfg;
  cfg.train.max_epochs = 50;
  const auto ae = augment::train_autoencoder(d, cfg);
  EXPECT_LE(ae.report.epochs_run, 50u);
  EXPECT_LT(*std::min_element(ae.report.train_loss_history.begin(), ae.report.train_loss_history.end()),
            1e-6);
  const auto y = decode(ae, encode(ae, d.rows.row(0)));
  EXPECT_NEAR(y[0], 4.0, 1e-9);
  EXPECT_NEAR(y[1], -1.5, 1e-9);
  EXPECT_NEAR(y[2], 10.0, 1e-9);
}

TEST(Autoencoder, DeterministicTraining) {
  augment::autoencoder_config cfg;
  cfg.train.seed = 8;
  cfg.train.max_epochs = 20;
  const auto a = augment::train_autoencoder(default_synthetic(), cfg);
  const auto b = augment::train_autoencoder(default_synthetic(), cfg);
  EXPECT_EQ(a.report.train_loss_history, b.report.train_loss_history);
  EXPECT_EQ(a.net, b.net);
}

TEST(Autoencoder, ZeroNoiseGivesLatentMeanDecode) {
  auto ae = default_autoencoder();
  ae.noise_scale = 0.0;
  const auto& d = default_synthetic();
  const auto s = augment::autoencoder_sample(ae, d, data::low, 5, 1);
  std::vector<double> mean(2, 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] == data::low) {
      const auto c = encode(ae, d.rows.row(i));
      mean[0] += c[0];
      mean[1] += c[1];
      ++n;
    }
  mean[0] /= static_cast<double>(n);
  mean[1] /= static_cast<double>(n);
  auto expected = decode(ae, mean);
  for (std::size_t j = 0; j < expected.size(); ++j)
    expected[j] = std::clamp(expected[j], d.bounds[j].min, d.bounds[j].max);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t j = 0; j < d.dims(); ++j) EXPECT_NEAR(s(r, j), expected[j], 1e-9);
}

TEST(Autoencoder, SamplesStayInObservedRanges) {
  const auto& d = default_synthetic();
  const auto s = augment::autoencoder_sample(default_autoencoder(), d, data::low, 1000, 2);
  for (std::size_t r = 0; r < 1000; ++r)
    for (std::size_t j = 0; j < d.dims(); ++j) {
      EXPECT_GE(s(r, j), d.bounds[j].min);
      EXPECT_LE(s(r, j), d.bounds[j].max);
    }
}

TEST(Autoencoder, SamplesVary) {
  const auto s = augment::autoencoder_sample(default_autoencoder(), default_synthetic(), data::low, 50, 3);
  std::set<std::vector<double>> distinct;
  for (std::size_t r = 0; r < 50; ++r) distinct.emplace(s.row(r).begin(), s.row(r).end());
  EXPECT_GT(distinct.size(), 10u);
}

TEST(Autoencoder, SamplingDeterministic) {
  const auto& ae = default_autoencoder();
  EXPECT_EQ(augment::autoencoder_sample(ae, default_synthetic(), data::low, 30, 4),
            augment::autoencoder_sample(ae, default_synthetic(), data::low, 30, 4));
}

TEST(Autoencoder, ScaledDataSamplesInScaledSpace) {
  const auto scaled = data::normalize(default_synthetic());
  const auto s = augment::autoencoder_sample(default_autoencoder(), scaled, data::low, 200, 5);
  for (double v : s.data()) {
    EXPECT_GE(v, -1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
}

TEST(Autoencoder, BalanceEqualizes) {
  const auto out = augment::autoencoder_balance(default_autoencoder(), default_synthetic(), 6);
  EXPECT_EQ(out.count(data::high), 364u);
  EXPECT_EQ(out.count(data::low), 364u);
  EXPECT_EQ(std::count(out.origin.begin(), out.origin.end(), "autoencoder"), 301);
}

TEST(Autoencoder, Errors) {
  const auto& ae = default_autoencoder();
  net::matrix rows(3, 9, 1.0);
  const auto only_high = data::make_dataset(default_synthetic().feature_names, rows, {1, 1, 1});
  EXPECT_THROW(augment::autoencoder_sample(ae, only_high, data::low, 3, 0), error);
  EXPECT_THROW(augment::autoencoder_sample(ae, default_synthetic(), data::low, 0, 0), error);
  augment::autoencoder_config cfg;
  cfg.output_width = 10;
  EXPECT_THROW(augment::train_autoencoder(default_synthetic(), cfg), error);
  cfg = {};
  cfg.bottleneck_activation = net::activation::softmax;
  EXPECT_THROW(augment::train_autoencoder(default_synthetic(), cfg), error);
}
