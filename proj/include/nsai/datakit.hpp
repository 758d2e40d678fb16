#pragma once

// Tabular datasets with a binary Final_score label: CSV I/O, min-max
// scaling, stratified splitting and a synthetic generator that mimics the
// AutoThinking feature space with a controllable spurious feature.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nsai/error.hpp"
#include "nsai/random.hpp"
#include "nsai/tensornet.hpp"

namespace nsai::data {

inline constexpr int low = 0;
inline constexpr int high = 1;
inline const std::array<std::string, 2> class_names{"Low", "High"};
inline constexpr std::string_view label_column = "Final_score";
inline constexpr std::string_view origin_column = "origin";

/// Maps input label tokens onto {Low, High}; True/False are accepted aliases.
inline std::optional<int> parse_label(std::string_view token) {
  std::string t(token);
  for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "high" || t == "true") return high;
  if (t == "low" || t == "false") return low;
  return std::nullopt;
}

inline int class_index(std::string_view name) {
  for (int i = 0; i < 2; ++i)
    if (class_names[static_cast<std::size_t>(i)] == name) return i;
  throw error("unknown class '" + std::string(name) + "'");
}

struct feature_bounds {
  double min = 0.0;
  double max = 0.0;

  friend bool operator==(const feature_bounds&, const feature_bounds&) = default;
};

struct dataset {
  std::vector<std::string> feature_names;
  net::matrix rows;           // [n x d]
  std::vector<int> labels;    // low / high
  std::vector<feature_bounds> bounds;  // observed raw ranges
  std::optional<std::vector<feature_bounds>> scaling;  // set once rows are normalized
  std::vector<std::string> origin;     // empty, or one provenance tag per row

  std::size_t size() const { return labels.size(); }
  std::size_t dims() const { return feature_names.size(); }

  std::size_t feature_index(std::string_view name) const {
    const auto it = std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end()) throw error("unknown feature '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - feature_names.begin());
  }

  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = rows(i, j);
    return out;
  }

  void validate() const {
    if (rows.rows() != labels.size()) throw error("row/label count mismatch");
    if (rows.cols() != feature_names.size()) throw error("column count mismatch");
    if (!origin.empty() && origin.size() != labels.size())
      throw error("origin column length mismatch");
    for (int l : labels)
      if (l != low && l != high) throw error("label outside {Low, High}");
    for (double v : rows.data())
      if (!std::isfinite(v)) throw error("non-finite value in dataset");
  }

  friend bool operator==(const dataset&, const dataset&) = default;
};

inline std::vector<feature_bounds> compute_bounds(const net::matrix& rows) {
  std::vector<feature_bounds> b(rows.cols());
  for (std::size_t j = 0; j < rows.cols(); ++j) {
    if (rows.rows() == 0) continue;
    b[j] = {rows(0, j), rows(0, j)};
    for (std::size_t i = 1; i < rows.rows(); ++i) {
      b[j].min = std::min(b[j].min, rows(i, j));
      b[j].max = std::max(b[j].max, rows(i, j));
    }
  }
  return b;
}

inline dataset make_dataset(std::vector<std::string> names, net::matrix rows,
                            std::vector<int> labels, std::vector<std::string> origin = {}) {
  dataset d;
  d.feature_names = std::move(names);
  d.bounds = compute_bounds(rows);
  d.rows = std::move(rows);
  d.labels = std::move(labels);
  d.origin = std::move(origin);
  d.validate();
  return d;
}

inline dataset select_rows(const dataset& d, std::span<const std::size_t> idx) {
  dataset out;
  out.feature_names = d.feature_names;
  out.rows = net::matrix(idx.size(), d.dims());
  out.bounds = d.bounds;
  out.scaling = d.scaling;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(d.rows.row(idx[i]).begin(), d.dims(), out.rows.row(i).begin());
    out.labels.push_back(d.labels[idx[i]]);
    if (!d.origin.empty()) out.origin.push_back(d.origin[idx[i]]);
  }
  return out;
}

/// `d` followed by `extra`; both must share features and scaling state.
inline dataset concat(const dataset& d, const dataset& extra) {
  if (d.feature_names != extra.feature_names) throw error("feature mismatch in concat");
  if (d.scaling != extra.scaling) throw error("scaling mismatch in concat");
  dataset out = d;
  out.rows = net::matrix(d.size() + extra.size(), d.dims());
  std::copy(d.rows.data().begin(), d.rows.data().end(), out.rows.data().begin());
  std::copy(extra.rows.data().begin(), extra.rows.data().end(),
            out.rows.data().begin() + static_cast<std::ptrdiff_t>(d.rows.size()));
  out.labels.insert(out.labels.end(), extra.labels.begin(), extra.labels.end());
  if (!d.origin.empty() || !extra.origin.empty()) {
    out.origin = d.origin.empty() ? std::vector<std::string>(d.size(), "real") : d.origin;
    if (extra.origin.empty())
      out.origin.insert(out.origin.end(), extra.size(), "real");
    else
      out.origin.insert(out.origin.end(), extra.origin.begin(), extra.origin.end());
  }
  if (!d.scaling) out.bounds = compute_bounds(out.rows);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(std::move(cell));
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Reads a header row plus data rows. Positions in errors are 1-based
/// (line, column) counted in the file.
inline dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error("missing header row", 1, 1);
  const auto header = detail::split_csv_line(line);

  std::optional<std::size_t> label_col, origin_col;
  std::vector<std::size_t> feature_cols;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == label_column) {
      label_col = c;
    } else if (header[c] == origin_column) {
      origin_col = c;
    } else {
      if (header[c].empty()) throw parse_error("empty column name", 1, c + 1);
      feature_cols.push_back(c);
      names.push_back(header[c]);
    }
  }
  if (!label_col) throw parse_error("missing column 'Final_score'", 1, 1);

  std::vector<double> values;
  std::vector<int> labels;
  std::vector<std::string> origin;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw parse_error("expected " + std::to_string(header.size()) + " cells, found " +
                            std::to_string(cells.size()),
                        line_no, 1);
    for (std::size_t c : feature_cols) {
      const auto& s = cells[c];
      double v = 0.0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() ||
          !std::isfinite(v))
        throw parse_error("non-numeric value '" + s + "' in column '" + header[c] + "'",
                          line_no, c + 1);
      values.push_back(v);
    }
    const auto label = parse_label(cells[*label_col]);
    if (!label)
      throw parse_error("unknown label '" + cells[*label_col] + "'", line_no, *label_col + 1);
    labels.push_back(*label);
    if (origin_col) origin.push_back(cells[*origin_col]);
  }

  net::matrix rows(labels.size(), names.size());
  rows.data() = std::move(values);
  return make_dataset(std::move(names), std::move(rows), std::move(labels), std::move(origin));
}

inline dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot open '" + path + "'");
  return read_csv(in);
}

/// Features, then Final_score (High/Low), then origin when present.
inline void write_csv(std::ostream& out, const dataset& d) {
  for (const auto& n : d.feature_names) out << n << ',';
  out << label_column;
  if (!d.origin.empty()) out << ',' << origin_column;
  out << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.dims(); ++j) out << detail::format_number(d.rows(i, j)) << ',';
    out << class_names[static_cast<std::size_t>(d.labels[i])];
    if (!d.origin.empty()) out << ',' << d.origin[i];
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const dataset& d) {
  std::ofstream out(path);
  if (!out) throw error("cannot write '" + path + "'");
  write_csv(out, d);
}

// ---------------------------------------------------------------------------
// scaling

namespace detail {

inline double scale(double v, const feature_bounds& b) {
  return b.max > b.min ? (v - b.min) / (b.max - b.min) : 0.0;
}

inline double unscale(double v, const feature_bounds& b) {
  return b.max > b.min ? b.min + v * (b.max - b.min) : b.min;
}

}  // namespace detail

/// Undoes any scaling, returning raw feature values.
inline dataset denormalize(const dataset& d) {
  if (!d.scaling) return d;
  dataset out = d;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.dims(); ++j)
      out.rows(i, j) = detail::unscale(d.rows(i, j), (*d.scaling)[j]);
  out.scaling.reset();
  return out;
}

/// Min-max scales with the given (train-set) bounds; values outside them map
/// outside [0, 1] and constant features map to 0. Applying the same bounds
/// twice is a no-op.
inline dataset apply_normalization(const dataset& d, const std::vector<feature_bounds>& b) {
  if (b.size() != d.dims()) throw error("bounds do not match feature count");
  if (d.scaling == b) return d;
  dataset out = denormalize(d);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out.dims(); ++j)
      out.rows(i, j) = detail::scale(out.rows(i, j), b[j]);
  out.scaling = b;
  return out;
}

/// Scales with bounds observed on this dataset's raw values.
inline dataset normalize(const dataset& d) {
  const auto raw = denormalize(d);
  return apply_normalization(raw, compute_bounds(raw.rows));
}

inline std::vector<double> scale_row(std::span<const double> raw,
                                     const std::vector<feature_bounds>& b) {
  std::vector<double> out(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) out[j] = detail::scale(raw[j], b[j]);
  return out;
}

/// Network samples with one-hot targets ordered (Low, High).
inline net::samples to_samples(const dataset& d) {
  net::samples s{d.rows, net::matrix(d.size(), 2, 0.0)};
  for (std::size_t i = 0; i < d.size(); ++i)
    s.targets(i, static_cast<std::size_t>(d.labels[i])) = 1.0;
  return s;
}

// ---------------------------------------------------------------------------
// statistics

struct correlation {
  double r = 0.0;
  bool constant = false;  // r reported as 0 because a side has no variance
};

inline correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw error("pearson: size mismatch");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  return {sxy / std::sqrt(sxx * syy), false};
}

/// Pearson r between a feature and the label encoded Low=0, High=1.
inline correlation label_correlation(const dataset& d, std::size_t feature) {
  const auto x = d.column(feature);
  std::vector<double> y(d.labels.begin(), d.labels.end());
  return pearson(x, y);
}

// ---------------------------------------------------------------------------
// splitting

struct fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Stratified k-fold partition: each fold holds floor or ceil of n_c / k rows
/// of every class c.
inline std::vector<fold> kfold_split(const dataset& d, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw error("k must be at least 2");
  if (k > d.size()) throw error("k (" + std::to_string(k) + ") exceeds row count (" +
                                std::to_string(d.size()) + ")");
  rng_type rng(seed);
  std::vector<std::size_t> dealt;
  for (int c : {low, high}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.labels[i] == c) members.push_back(i);
    shuffle(std::span<std::size_t>(members), rng);
    dealt.insert(dealt.end(), members.begin(), members.end());
  }
  std::vector<std::size_t> assignment(d.size());
  for (std::size_t pos = 0; pos < dealt.size(); ++pos) assignment[dealt[pos]] = pos % k;

  std::vector<fold> folds(k);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t f = 0; f < k; ++f)
      (assignment[i] == f ? folds[f].validation : folds[f].train).push_back(i);
  return folds;
}

/// Stratified hold-out split; returns (train, test).
inline std::pair<dataset, dataset> stratified_split(const dataset& d, double test_fraction,
                                                    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw error("test_fraction must lie in (0, 1)");
  rng_type rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (int c : {low, high}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.labels[i] == c) members.push_back(i);
    shuffle(std::span<std::size_t>(members), rng);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(members.size())));
    test_idx.insert(test_idx.end(), members.begin(), members.begin() + n_test);
    train_idx.insert(train_idx.end(), members.begin() + n_test, members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {select_rows(d, train_idx), select_rows(d, test_idx)};
}

// ---------------------------------------------------------------------------
// synthetic data

struct feature_spec {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

/// AutoThinking feature summary (427 players): name, min, max, mean, std.
inline const std::vector<std::pair<std::string, feature_spec>>& autothinking_features() {
  static const std::vector<std::pair<std::string, feature_spec>> specs{
      {"Arrow", {15, 180, 82.05, 34.65}},
      {"Big_cheese", {0, 4, 1.6, 0.7}},
      {"Small_cheese", {0, 74, 63.38, 17.72}},
      {"Function", {0, 4, 0.6, 1.2}},
      {"Debug", {0, 17, 0.8, 2.3}},
      {"Simulation", {0, 19, 2.92, 4.24}},
      {"Loop", {0, 50, 6.66, 8.12}},
      {"Conditional", {0, 46, 3, 6.4}},
      {"Hitting_wall", {0, 180, 6.19, 18.57}},
  };
  return specs;
}

struct synth_config {
  std::size_t n_rows = 427;
  std::size_t test_rows = 85;
  double class_ratio = 364.0 / 427.0;  // share of High
  std::string spurious_feature = "Small_cheese";
  double train_spurious_r = 0.887;
  double test_spurious_r = 0.632;
  /// Pre-clipping correlation of each causal feature with the label; the same
  /// mechanism holds in train and test.
  std::map<std::string, double> causal_weights{{"Conditional", 0.45}, {"Loop", 0.45},
                                               {"Debug", 0.45},       {"Simulation", 0.45},
                                               {"Function", 0.45}};
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, feature_spec>> feature_ranges = autothinking_features();

  void validate() const {
    if (n_rows < 3 || test_rows < 3) throw error("need at least 3 rows per split");
    if (!(class_ratio > 0.0 && class_ratio < 1.0)) throw error("class_ratio must lie in (0, 1)");
    if (!(std::abs(train_spurious_r) < 1.0) || !(std::abs(test_spurious_r) < 1.0))
      throw error("spurious correlations must satisfy |r| < 1");
    auto known = [&](const std::string& n) {
      return std::any_of(feature_ranges.begin(), feature_ranges.end(),
                         [&](const auto& f) { return f.first == n; });
    };
    if (!known(spurious_feature))
      throw error("spurious feature '" + spurious_feature + "' has no range");
    for (const auto& [name, w] : causal_weights) {
      if (!known(name)) throw error("causal feature '" + name + "' has no range");
      if (!(std::abs(w) < 1.0)) throw error("causal weight for '" + name + "' must be in (-1, 1)");
      if (name == spurious_feature) throw error("spurious feature cannot be causal");
    }
    for (const auto& [name, s] : feature_ranges)
      if (!(s.max > s.min) || !(s.std > 0.0)) throw error("degenerate range for '" + name + "'");
  }
};

struct synthetic_data {
  dataset train;
  dataset test;
  double train_spurious_r = 0.0;  // achieved, after clipping and rounding
  double test_spurious_r = 0.0;
};

namespace detail {

inline std::vector<double> standardized(std::vector<double> v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (auto& x : v) {
    x -= m;
    ss += x * x;
  }
  const double sd = std::sqrt(ss / n);
  if (sd > 0)
    for (auto& x : v) x /= sd;
  return v;
}

inline double count_value(double v, const feature_spec& s) {
  return std::round(std::clamp(v, s.min, s.max));
}

// Spurious column whose achieved correlation with `y` (after clipping and
// rounding) matches `target`: a mixing coefficient over an in-sample
// orthogonal noise direction is solved by bisection.
inline std::pair<std::vector<double>, double> calibrated_column(
    const std::vector<double>& y_std, const std::vector<double>& y, const feature_spec& s,
    double target, rng_type& rng, const std::string& name) {
  const std::size_t n = y.size();
  std::vector<double> e(n);
  for (auto& v : e) v = standard_normal(rng);
  e = standardized(std::move(e));
  double proj = 0.0;
  for (std::size_t i = 0; i < n; ++i) proj += e[i] * y_std[i];
  proj /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) e[i] -= proj * y_std[i];
  e = standardized(std::move(e));

  auto build = [&](double rho) {
    std::vector<double> x(n);
    const double c = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    for (std::size_t i = 0; i < n; ++i)
      x[i] = count_value(s.mean + s.std * (rho * y_std[i] + c * e[i]), s);
    return x;
  };
  auto achieved = [&](double rho) { return pearson(build(rho), y).r; };

  double lo = -0.9999, hi = 0.9999;
  double r_lo = achieved(lo), r_hi = achieved(hi);
  if (target < r_lo - 1e-3 || target > r_hi + 1e-3)
    throw error("correlation " + std::to_string(target) + " for '" + name +
                "' is infeasible within its range (achievable " + std::to_string(r_lo) +
                " .. " + std::to_string(r_hi) + ")");
  double best = lo, best_gap = std::abs(r_lo - target);
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = achieved(mid);
    if (std::abs(r - target) < best_gap) {
      best_gap = std::abs(r - target);
      best = mid;
    }
    (r < target ? lo : hi) = mid;
  }
  if (std::abs(achieved(hi) - target) < best_gap) best = hi;
  auto x = build(best);
  const double r = pearson(x, y).r;
  if (std::abs(r - target) > 0.01)
    throw error("correlation " + std::to_string(target) + " for '" + name +
                "' is infeasible within its range (closest " + std::to_string(r) + ")");
  return {std::move(x), r};
}

inline std::pair<dataset, double> synth_split(const synth_config& cfg, std::size_t n,
                                              double spurious_r, std::uint64_t seed) {
  rng_type rng(seed);
  const auto n_high = static_cast<std::size_t>(
      std::llround(cfg.class_ratio * static_cast<double>(n)));
  std::vector<int> labels(n, low);
  std::fill_n(labels.begin(), std::min(n_high, n), high);
  shuffle(std::span<int>(labels), rng);
  const std::vector<double> y(labels.begin(), labels.end());
  const auto y_std = standardized(y);

  std::vector<std::string> names;
  net::matrix rows(n, cfg.feature_ranges.size());
  double achieved = 0.0;
  for (std::size_t j = 0; j < cfg.feature_ranges.size(); ++j) {
    const auto& [name, spec] = cfg.feature_ranges[j];
    names.push_back(name);
    std::vector<double> col(n);
    if (name == cfg.spurious_feature) {
      auto [x, r] = calibrated_column(y_std, y, spec, spurious_r, rng, name);
      col = std::move(x);
      achieved = r;
    } else {
      const auto it = cfg.causal_weights.find(name);
      const double rho = it == cfg.causal_weights.end() ? 0.0 : it->second;
      const double c = std::sqrt(1.0 - rho * rho);
      for (std::size_t i = 0; i < n; ++i)
        col[i] = count_value(spec.mean + spec.std * (rho * y_std[i] + c * standard_normal(rng)),
                             spec);
    }
    for (std::size_t i = 0; i < n; ++i) rows(i, j) = col[i];
  }
  return {make_dataset(std::move(names), std::move(rows), std::move(labels)), achieved};
}

}  // namespace detail

/// Independent train and test draws sharing the causal mechanism but with
/// different spurious-feature correlations. Values are clipped, rounded counts.
inline synthetic_data generate_synthetic(const synth_config& cfg) {
  cfg.validate();
  synthetic_data out;
  auto [train, r_train] =
      detail::synth_split(cfg, cfg.n_rows, cfg.train_spurious_r, derive_seed(cfg.seed, "train"));
  auto [test, r_test] =
      detail::synth_split(cfg, cfg.test_rows, cfg.test_spurious_r, derive_seed(cfg.seed, "test"));
  out.train = std::move(train);
  out.test = std::move(test);
  out.train_spurious_r = r_train;
  out.test_spurious_r = r_test;
  return out;
}

}  // namespace nsai::data
