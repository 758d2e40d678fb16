#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "nsai/datakit.hpp"
#include "nsai/error.hpp"
#include "nsai/random.hpp"
#include "nsai/tensornet.hpp"

namespace nsai::explain {

/// Class probabilities (Low, High) for one feature vector.
using model_fn = std::function<std::vector<double>(std::span<const double>)>;

struct feature_stat {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline std::vector<feature_stat> feature_statistics(const data::dataset& d) {
  if (d.size() == 0) throw error("statistics of an empty dataset");
  std::vector<feature_stat> out(d.dims());
  const double n = static_cast<double>(d.size());
  for (std::size_t j = 0; j < d.dims(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) m += d.rows(i, j);
    m /= n;
    double v = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) v += (d.rows(i, j) - m) * (d.rows(i, j) - m);
    out[j] = {m, std::sqrt(v / n)};
  }
  return out;
}

struct lime_config {
  std::size_t n_samples = 1000;
  double kernel_width = 0.0;  // 0: 0.75 * sqrt(feature count)
  std::uint64_t seed = 0;

  double width_for(std::size_t dims) const {
    return kernel_width > 0.0 ? kernel_width : 0.75 * std::sqrt(static_cast<double>(dims));
  }
  void validate() const {
    if (n_samples < 50) throw error("LIME needs at least 50 samples");
    if (!(kernel_width >= 0.0) || !std::isfinite(kernel_width))
      throw error("kernel_width must be finite and non-negative");
  }
};

struct contribution {
  std::string feature;
  double value = 0.0;
  double importance = 0.0;  // surrogate slope per standard deviation

  friend bool operator==(const contribution&, const contribution&) = default;
};

struct explanation {
  std::size_t instance_id = 0;
  int predicted = data::low;
  std::optional<int> true_label;
  std::vector<double> confidence;            // per class
  std::vector<contribution> contributions;  // sorted by |importance| descending
  double intercept = 0.0;

  friend bool operator==(const explanation&, const explanation&) = default;
};

namespace detail {

inline std::vector<double> checked_proba(const model_fn& model, std::span<const double> x) {
  auto p = model(x);
  if (p.size() != 2) throw error("model must return two class probabilities");
  return p;
}

// Solves (X'WX) b = X'Wy; on failure retries once with 1e-6 ridge damping.
inline Eigen::VectorXd weighted_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& w) {
  const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
  Eigen::MatrixXd a = xtw * x;
  const Eigen::VectorXd rhs = xtw * y;
  auto solve = [&](const Eigen::MatrixXd& m) -> std::optional<Eigen::VectorXd> {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Eigen::VectorXd b = llt.solve(rhs);
    if (!b.allFinite()) return std::nullopt;
    return b;
  };
  if (auto b = solve(a)) return *b;
  a.diagonal().array() += 1e-6;
  if (auto b = solve(a)) return *b;
  throw error("LIME weighted design matrix is singular even with ridge damping");
}

}  // namespace detail

/// Local linear surrogate of `model` around `instance`. Perturbations are
/// Gaussian in per-feature standard-deviation units; features with zero
/// spread are held fixed and get importance 0.
inline explanation lime_explain(const model_fn& model, std::span<const double> instance,
                                std::span<const std::string> names,
                                std::span<const feature_stat> stats, const lime_config& cfg,
                                std::size_t instance_id = 0,
                                std::optional<int> true_label = std::nullopt) {
  cfg.validate();
  const std::size_t d = instance.size();
  if (names.size() != d || stats.size() != d)
    throw error("instance, feature names and statistics differ in length");

  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < d; ++j)
    if (stats[j].std > 0.0) active.push_back(j);

  const double width = cfg.width_for(d);
  const std::size_t n = cfg.n_samples;
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n),
                         static_cast<Eigen::Index>(active.size() + 1));
  Eigen::VectorXd target(static_cast<Eigen::Index>(n)), weight(static_cast<Eigen::Index>(n));
  rng_type rng(cfg.seed);
  std::vector<double> x(instance.begin(), instance.end());
  for (std::size_t s = 0; s < n; ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    design(row, 0) = 1.0;
    double dist2 = 0.0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto j = active[a];
      // The first sample is the instance itself.
      const double z = s == 0 ? 0.0 : standard_normal(rng);
      x[j] = instance[j] + z * stats[j].std;
      design(row, static_cast<Eigen::Index>(a + 1)) = z;
      dist2 += z * z;
    }
    target(row) = detail::checked_proba(model, x)[data::high];
    weight(row) = std::exp(-dist2 / (width * width));
  }
  const auto coef = detail::weighted_least_squares(design, target, weight);

  explanation e;
  e.instance_id = instance_id;
  e.true_label = true_label;
  e.confidence = detail::checked_proba(model, instance);
  e.predicted = static_cast<int>(net::argmax(e.confidence));
  e.intercept = coef(0);
  for (std::size_t j = 0; j < d; ++j) e.contributions.push_back({names[j], instance[j], 0.0});
  for (std::size_t a = 0; a < active.size(); ++a)
    e.contributions[active[a]].importance = coef(static_cast<Eigen::Index>(a + 1));
  std::stable_sort(e.contributions.begin(), e.contributions.end(),
                   [](const contribution& l, const contribution& r) {
                     return std::abs(l.importance) > std::abs(r.importance);
                   });
  return e;
}

struct global_entry {
  std::string feature;
  double mean_importance = 0.0;
  double mean_abs_importance = 0.0;
};

struct global_explanation {
  std::vector<global_entry> features;  // dataset column order
  std::size_t instances = 0;
};

/// Explanation of row i uses seed derive_seed(cfg.seed, i).
inline std::vector<explanation> explain_rows(const model_fn& model, const data::dataset& d,
                                             std::span<const feature_stat> stats,
                                             const lime_config& cfg,
                                             std::span<const std::size_t> rows) {
  std::vector<explanation> out;
  out.reserve(rows.size());
  for (std::size_t i : rows) {
    auto c = cfg;
    c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    out.push_back(lime_explain(model, d.rows.row(i), d.feature_names, stats, c, i, d.labels[i]));
  }
  return out;
}

inline global_explanation global_explain(const model_fn& model, const data::dataset& d,
                                         std::span<const feature_stat> stats,
                                         const lime_config& cfg) {
  if (d.size() == 0) throw error("cannot explain an empty dataset");
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto locals = explain_rows(model, d, stats, cfg, all);

  global_explanation g;
  g.instances = d.size();
  for (const auto& name : d.feature_names) g.features.push_back({name, 0.0, 0.0});
  for (const auto& e : locals)
    for (const auto& c : e.contributions) {
      auto& entry = g.features[d.feature_index(c.feature)];
      entry.mean_importance += c.importance;
      entry.mean_abs_importance += std::abs(c.importance);
    }
  for (auto& entry : g.features) {
    entry.mean_importance /= static_cast<double>(d.size());
    entry.mean_abs_importance /= static_cast<double>(d.size());
  }
  return g;
}

inline global_explanation global_explain(const model_fn& model, const data::dataset& d,
                                         const lime_config& cfg) {
  const auto stats = feature_statistics(d);
  return global_explain(model, d, stats, cfg);
}

struct misprediction {
  explanation detail;
  std::vector<contribution> supporting;     // push toward the predicted class
  std::vector<contribution> contradicting;  // push away from it
};

/// Explanations of the rows whose argmax prediction differs from the label.
inline std::vector<misprediction> misprediction_report(const model_fn& model,
                                                       const data::dataset& d,
                                                       std::span<const feature_stat> stats,
                                                       const lime_config& cfg) {
  std::vector<std::size_t> wrong;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = detail::checked_proba(model, d.rows.row(i));
    if (static_cast<int>(net::argmax(p)) != d.labels[i]) wrong.push_back(i);
  }
  std::vector<misprediction> out;
  for (auto& e : explain_rows(model, d, stats, cfg, wrong)) {
    misprediction m;
    const double toward = e.predicted == data::high ? 1.0 : -1.0;
    for (const auto& c : e.contributions) {
      if (c.importance * toward > 0.0) m.supporting.push_back(c);
      else if (c.importance * toward < 0.0) m.contradicting.push_back(c);
    }
    m.detail = std::move(e);
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<misprediction> misprediction_report(const model_fn& model,
                                                       const data::dataset& d,
                                                       const lime_config& cfg) {
  const auto stats = feature_statistics(d);
  return misprediction_report(model, d, stats, cfg);
}

/// Adapts a softmax network trained on `scaling`-normalized inputs to raw
/// feature vectors. With no scaling the inputs are passed through.
inline model_fn network_model(net::network n,
                              std::optional<std::vector<data::feature_bounds>> scaling) {
  return [n = std::move(n), scaling = std::move(scaling)](std::span<const double> x) {
    if (!scaling) return net::predict(n, x);
    const auto s = data::scale_row(x, *scaling);
    return net::predict(n, s);
  };
}

// ---------------------------------------------------------------------------
// export

using json = nlohmann::json;

inline std::string format_number(double v, int precision = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

inline json to_json(const contribution& c) {
  return {{"feature", c.feature}, {"value", c.value}, {"importance", c.importance}};
}

inline json to_json(const explanation& e) {
  json contributions = json::array();
  for (const auto& c : e.contributions) contributions.push_back(to_json(c));
  json j{{"instance_id", e.instance_id},
         {"predicted", data::class_names.at(static_cast<std::size_t>(e.predicted))},
         {"confidence", {{"Low", e.confidence.at(0)}, {"High", e.confidence.at(1)}}},
         {"intercept", e.intercept},
         {"contributions", contributions}};
  j["true_label"] = e.true_label
                        ? json(data::class_names.at(static_cast<std::size_t>(*e.true_label)))
                        : json(nullptr);
  return j;
}

inline json to_json(const global_explanation& g) {
  json features = json::array();
  for (const auto& f : g.features)
    features.push_back({{"feature", f.feature},
                        {"mean_importance", f.mean_importance},
                        {"mean_abs_importance", f.mean_abs_importance}});
  return {{"instances", g.instances}, {"features", features}};
}

inline json to_json(const misprediction& m) {
  auto j = to_json(m.detail);
  json sup = json::array(), con = json::array();
  for (const auto& c : m.supporting) sup.push_back(to_json(c));
  for (const auto& c : m.contradicting) con.push_back(to_json(c));
  j["supporting"] = sup;
  j["contradicting"] = con;
  return j;
}

inline std::string to_text(const global_explanation& g) {
  auto rows = g.features;
  std::stable_sort(rows.begin(), rows.end(), [](const global_entry& a, const global_entry& b) {
    return a.mean_abs_importance > b.mean_abs_importance;
  });
  std::ostringstream os;
  os << "feature\tmean_importance\tmean_abs_importance\n";
  for (const auto& f : rows)
    os << f.feature << '\t' << format_number(f.mean_importance, 4) << '\t'
       << format_number(f.mean_abs_importance, 4) << '\n';
  return os.str();
}

inline std::string format_contributions(const std::vector<contribution>& cs) {
  std::string out;
  for (const auto& c : cs) {
    if (!out.empty()) out += "; ";
    out += c.feature + " = (Val=" + data::detail::format_number(c.value) +
           ", Imp=" + format_number(c.importance) + ")";
  }
  return out.empty() ? "-" : out;
}

/// Flat misprediction table: true value, prediction, (Low, High) confidence,
/// supporting and contradicting features. Tab separated.
inline std::string to_text(const std::vector<misprediction>& report) {
  std::ostringstream os;
  os << "instance\ttrue\tpredicted\tconfidence\tsupporting\tcontradicting\n";
  for (const auto& m : report) {
    const auto& e = m.detail;
    os << e.instance_id << '\t'
       << (e.true_label ? data::class_names.at(static_cast<std::size_t>(*e.true_label)) : "?")
       << '\t' << data::class_names.at(static_cast<std::size_t>(e.predicted)) << '\t' << '('
       << format_number(e.confidence.at(0), 2) << ", " << format_number(e.confidence.at(1), 2)
       << ")\t" << format_contributions(m.supporting) << '\t'
       << format_contributions(m.contradicting) << '\n';
  }
  return os.str();
}

}  // namespace nsai::explain
