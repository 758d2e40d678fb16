#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nsai/datakit.hpp"
#include "nsai/error.hpp"
#include "nsai/random.hpp"
#include "nsai/tensornet.hpp"

namespace nsai::augment {

// ---------------------------------------------------------------------------
// SMOTE

struct equalize_classes {};

/// Minority count after augmentation = round(ratio * majority count).
struct minority_ratio {
  double value = 1.0;
};

struct smote_config {
  std::size_t k_neighbors = 5;
  std::variant<equalize_classes, minority_ratio> target = equalize_classes{};
  std::uint64_t seed = 0;

  void validate() const {
    if (k_neighbors < 1) throw error("k_neighbors must be at least 1");
    if (const auto* r = std::get_if<minority_ratio>(&target); r && !(r->value > 0.0))
      throw error("ratio must be positive");
  }
};

/// One synthetic row: base + lambda * (neighbor - base). Indices are rows of the input.
struct smote_draw {
  std::size_t base = 0;
  std::size_t neighbor = 0;
  double lambda = 0.0;
};

struct smote_result {
  data::dataset data;
  std::size_t synthetic = 0;
  bool unchanged = false;  // nothing to add for the requested target
};

inline std::vector<double> interpolate(std::span<const double> a, std::span<const double> b,
                                       double lambda) {
  if (a.size() != b.size()) throw error("interpolate: size mismatch");
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] + lambda * (b[j] - a[j]);
  return out;
}

namespace detail {

inline int minority_label(const data::dataset& d) {
  return d.count(data::low) <= d.count(data::high) ? data::low : data::high;
}

inline std::size_t smote_needed(const data::dataset& d, const smote_config& cfg) {
  const int minority = minority_label(d);
  const std::size_t n_min = d.count(minority);
  const std::size_t n_maj = d.size() - n_min;
  std::size_t target = n_maj;
  if (const auto* r = std::get_if<minority_ratio>(&cfg.target))
    target = static_cast<std::size_t>(std::llround(r->value * static_cast<double>(n_maj)));
  return target > n_min ? target - n_min : 0;
}

// Features scaled by the data's own ranges, so no column dominates the distance.
inline net::matrix distance_space(const data::dataset& d) {
  if (d.scaling) return d.rows;
  const auto b = data::compute_bounds(d.rows);
  net::matrix out(d.size(), d.dims());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto r = data::scale_row(d.rows.row(i), b);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

}  // namespace detail

/// k nearest minority-class neighbours of every minority row (exact search,
/// ties broken by row index). Keys are row indices of `d`.
inline std::vector<std::vector<std::size_t>> minority_neighbors(const data::dataset& d, int label,
                                                                std::size_t k) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] == label) members.push_back(i);
  const auto space = detail::distance_space(d);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(members.size());
  for (std::size_t i : members) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j : members)
      if (j != i) cand.emplace_back(detail::squared_distance(space.row(i), space.row(j)), j);
    const auto kk = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
    std::vector<std::size_t> nn;
    for (std::size_t t = 0; t < kk; ++t) nn.push_back(cand[t].second);
    out.push_back(std::move(nn));
  }
  return out;
}

/// The seeded interpolation plan SMOTE would apply to `d`.
inline std::vector<smote_draw> smote_plan(const data::dataset& d, const smote_config& cfg) {
  cfg.validate();
  const int minority = detail::minority_label(d);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] == minority) members.push_back(i);
  const std::size_t needed = detail::smote_needed(d, cfg);
  if (needed == 0) return {};
  if (members.size() < 2)
    throw error("minority class has " + std::to_string(members.size()) +
                " rows; SMOTE needs at least 2");
  if (cfg.k_neighbors >= members.size())
    throw error("k_neighbors (" + std::to_string(cfg.k_neighbors) +
                ") must be below the minority count (" + std::to_string(members.size()) + ")");

  const auto nn = minority_neighbors(d, minority, cfg.k_neighbors);
  rng_type rng(cfg.seed);
  std::vector<smote_draw> plan;
  plan.reserve(needed);
  for (std::size_t s = 0; s < needed; ++s) {
    const auto m = uniform_index(rng, members.size());
    const auto& cand = nn[m];
    const auto j = cand[uniform_index(rng, cand.size())];
    plan.push_back({members[m], j, uniform01(rng)});
  }
  return plan;
}

/// Appends one row per draw, labelled like its base row and tagged "smote".
inline data::dataset apply_smote_plan(const data::dataset& d, std::span<const smote_draw> plan) {
  data::dataset extra;
  extra.feature_names = d.feature_names;
  extra.scaling = d.scaling;
  extra.rows = net::matrix(plan.size(), d.dims());
  for (std::size_t s = 0; s < plan.size(); ++s) {
    const auto& p = plan[s];
    if (p.base >= d.size() || p.neighbor >= d.size()) throw error("smote draw out of range");
    const auto x = interpolate(d.rows.row(p.base), d.rows.row(p.neighbor), p.lambda);
    std::copy(x.begin(), x.end(), extra.rows.row(s).begin());
    extra.labels.push_back(d.labels[p.base]);
    extra.origin.push_back("smote");
  }
  return data::concat(d, extra);
}

inline smote_result smote(const data::dataset& d, const smote_config& cfg) {
  d.validate();
  const auto plan = smote_plan(d, cfg);
  if (plan.empty()) return {d, 0, true};
  return {apply_smote_plan(d, plan), plan.size(), false};
}

// ---------------------------------------------------------------------------
// autoencoder

struct autoencoder_config {
  // Reconstruction of skewed count features stalls at the mean with the
  // classifier settings, so the autoencoder trains slower, longer and unpenalised.
  static net::train_config default_train() {
    net::train_config t;
    t.learning_rate = 0.003;
    t.l1 = 0.0;
    t.l2 = 0.0;
    t.patience = 10;
    t.loss = net::loss_kind::mean_squared_error;
    return t;
  }

  std::vector<std::size_t> encoder_widths{8, 4, 2};
  std::vector<std::size_t> decoder_widths{4, 8};
  std::size_t output_width = 0;  // 0: the dataset's feature count
  net::train_config train = default_train();  // loss is forced to mean_squared_error
  double noise_scale = 1.0;
  // Hidden layers use relu; a relu code layer of width 2 often dies entirely.
  net::activation bottleneck_activation = net::activation::linear;

  void validate() const {
    if (encoder_widths.empty()) throw error("encoder needs at least one layer");
    for (auto w : encoder_widths)
      if (w < 1) throw error("layer widths must be at least 1");
    for (auto w : decoder_widths)
      if (w < 1) throw error("layer widths must be at least 1");
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
      throw error("noise_scale must be finite and non-negative");
    if (bottleneck_activation == net::activation::softmax)
      throw error("softmax is not allowed on the code layer");
  }
};

struct autoencoder {
  net::network net;
  std::size_t bottleneck = 0;                // layer index whose output is the code
  std::vector<data::feature_bounds> scaling;  // raw ranges the network was trained in
  double noise_scale = 1.0;
  net::train_report report;
};

namespace detail {

inline net::matrix scaled_rows(const data::dataset& d,
                               const std::vector<data::feature_bounds>& b) {
  const auto raw = data::denormalize(d);
  net::matrix out(raw.size(), raw.dims());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto r = data::scale_row(raw.rows.row(i), b);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

inline std::vector<double> run_layers(const net::network& net, std::span<const double> x,
                                      std::size_t first, std::size_t last) {
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t li = first; li < last; ++li) {
    const auto& l = net.layers[li];
    std::vector<double> z(l.outputs()), a(l.outputs());
    net::detail::affine(l, cur, z);
    net::detail::apply_activation(l.act, z, a);
    cur = std::move(a);
  }
  return cur;
}

}  // namespace detail

/// Trains encoder+decoder on min-max scaled features; labels are ignored.
inline autoencoder train_autoencoder(const data::dataset& d, const autoencoder_config& cfg) {
  cfg.validate();
  if (d.size() < 2) throw error("autoencoder needs at least 2 rows");
  const std::size_t out_w = cfg.output_width ? cfg.output_width : d.dims();
  if (out_w != d.dims())
    throw error("output_width " + std::to_string(out_w) + " does not match " +
                std::to_string(d.dims()) + " features");

  std::vector<std::size_t> hidden = cfg.encoder_widths;
  hidden.insert(hidden.end(), cfg.decoder_widths.begin(), cfg.decoder_widths.end());
  auto tc = cfg.train;
  tc.loss = net::loss_kind::mean_squared_error;
  auto net0 = net::build_mlp(d.dims(), std::span<const std::size_t>(hidden), out_w, tc.seed,
                             net::activation::relu, net::activation::linear);
  net0.input_names = d.feature_names;
  net0.output_names = d.feature_names;

  autoencoder ae;
  ae.scaling = data::denormalize(d).bounds;
  ae.bottleneck = cfg.encoder_widths.size() - 1;
  net0.layers[ae.bottleneck].act = cfg.bottleneck_activation;
  ae.noise_scale = cfg.noise_scale;
  const auto x = detail::scaled_rows(d, ae.scaling);
  auto result = net::train(std::move(net0), net::samples{x, x}, tc);
  ae.net = std::move(result.net);
  ae.report = std::move(result.report);
  return ae;
}

/// Bottleneck code of one raw feature vector.
inline std::vector<double> encode(const autoencoder& ae, std::span<const double> raw) {
  const auto x = data::scale_row(raw, ae.scaling);
  return detail::run_layers(ae.net, x, 0, ae.bottleneck + 1);
}

/// Raw feature vector decoded from a code (not clipped).
inline std::vector<double> decode(const autoencoder& ae, std::span<const double> code) {
  auto y = detail::run_layers(ae.net, code, ae.bottleneck + 1, ae.net.layers.size());
  for (std::size_t j = 0; j < y.size(); ++j) y[j] = data::detail::unscale(y[j], ae.scaling[j]);
  return y;
}

/// Draws n synthetic rows for `class_label` from a per-dimension Gaussian fit
/// to the class's codes. Rows come back in the same space as `d` (raw or
/// scaled), clipped to the observed range of each feature.
inline net::matrix autoencoder_sample(const autoencoder& ae, const data::dataset& d,
                                      int class_label, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw error("sample count must be at least 1");
  if (d.count(class_label) == 0)
    throw error("class '" + data::class_names.at(static_cast<std::size_t>(class_label)) +
                "' is absent from the data");
  if (d.dims() != ae.scaling.size()) throw error("feature count does not match the autoencoder");

  const auto raw = data::denormalize(d);
  std::vector<std::vector<double>> codes;
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (raw.labels[i] == class_label) codes.push_back(encode(ae, raw.rows.row(i)));
  const std::size_t dim = codes.front().size();
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (const auto& c : codes)
    for (std::size_t k = 0; k < dim; ++k) mean[k] += c[k];
  for (auto& m : mean) m /= static_cast<double>(codes.size());
  for (const auto& c : codes)
    for (std::size_t k = 0; k < dim; ++k) sd[k] += (c[k] - mean[k]) * (c[k] - mean[k]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(codes.size()));

  rng_type rng(seed);
  net::matrix out(n, d.dims());
  std::vector<double> z(dim);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < dim; ++k)
      z[k] = mean[k] + ae.noise_scale * sd[k] * standard_normal(rng);
    auto y = decode(ae, z);
    for (std::size_t j = 0; j < y.size(); ++j) {
      y[j] = std::clamp(y[j], raw.bounds[j].min, raw.bounds[j].max);
      if (d.scaling) y[j] = data::detail::scale(y[j], (*d.scaling)[j]);
    }
    std::copy(y.begin(), y.end(), out.row(s).begin());
  }
  return out;
}

/// Equalizes the classes with autoencoder samples of the minority class,
/// tagged "autoencoder". Returns `d` unchanged when already balanced.
inline data::dataset autoencoder_balance(const autoencoder& ae, const data::dataset& d,
                                         std::uint64_t seed) {
  const int minority = detail::minority_label(d);
  const std::size_t n_min = d.count(minority);
  const std::size_t needed = d.size() - 2 * n_min;
  if (needed == 0) return d;
  data::dataset extra;
  extra.feature_names = d.feature_names;
  extra.scaling = d.scaling;
  extra.rows = autoencoder_sample(ae, d, minority, needed, seed);
  extra.labels.assign(needed, minority);
  extra.origin.assign(needed, "autoencoder");
  return data::concat(d, extra);
}

}  // namespace nsai::augment
