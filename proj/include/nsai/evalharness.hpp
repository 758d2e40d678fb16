#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsai/augment.hpp"
#include "nsai/datakit.hpp"
#include "nsai/error.hpp"
#include "nsai/kbann.hpp"
#include "nsai/random.hpp"
#include "nsai/rulelang.hpp"
#include "nsai/tensornet.hpp"

namespace nsai::eval {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// metrics

struct metrics {
  std::size_t n = 0;
  double accuracy = 0.0;
  // confusion[truth][prediction], indexed Low=0, High=1
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::array<std::optional<double>, 2> recall;     // absent when the class never occurs
  std::array<std::optional<double>, 2> precision;  // absent when never predicted

  friend bool operator==(const metrics&, const metrics&) = default;
};

inline metrics compute_metrics(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size())
    throw error("prediction/truth length mismatch (" + std::to_string(predictions.size()) +
                " vs " + std::to_string(truth.size()) + ")");
  if (truth.empty()) throw error("metrics need at least one prediction");
  metrics m;
  m.n = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (int v : {truth[i], predictions[i]})
      if (v != data::low && v != data::high) throw error("class index outside {Low, High}");
    ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predictions[i])];
  }
  m.accuracy = static_cast<double>(m.confusion[0][0] + m.confusion[1][1]) /
               static_cast<double>(m.n);
  for (std::size_t c = 0; c < 2; ++c) {
    const auto actual = m.confusion[c][0] + m.confusion[c][1];
    const auto predicted = m.confusion[0][c] + m.confusion[1][c];
    if (actual) m.recall[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(actual);
    if (predicted)
      m.precision[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(predicted);
  }
  return m;
}

/// Argmax class of every row; `d` must be in the network's input scale.
inline std::vector<int> predict_classes(const net::network& n, const data::dataset& d) {
  std::vector<int> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    out[i] = static_cast<int>(net::argmax(net::predict(n, d.rows.row(i))));
  return out;
}

inline metrics evaluate(const net::network& n, const data::dataset& d) {
  return compute_metrics(predict_classes(n, d), d.labels);
}

// ---------------------------------------------------------------------------
// correlation

struct correlation_table {
  std::vector<std::string> features;
  std::vector<std::string> sources;
  std::vector<std::vector<data::correlation>> r;  // [feature][source]
};

inline correlation_table make_correlation_table(
    std::span<const std::pair<std::string, data::dataset>> sources) {
  if (sources.empty()) throw error("no datasets to correlate");
  correlation_table t;
  t.features = sources.front().second.feature_names;
  for (const auto& [name, d] : sources) {
    if (d.feature_names != t.features) throw error("dataset '" + name + "' has other features");
    if (d.size() < 3) throw error("dataset '" + name + "' has fewer than 3 rows");
    t.sources.push_back(name);
  }
  t.r.assign(t.features.size(), {});
  for (std::size_t j = 0; j < t.features.size(); ++j)
    for (const auto& [name, d] : sources) t.r[j].push_back(data::label_correlation(d, j));
  return t;
}

// ---------------------------------------------------------------------------
// model training

struct model_spec {
  std::vector<std::size_t> hidden{50, 50};
  net::train_config train{};
};

/// 9-[50,50]-2 style relu network with softmax output, trained on scaled data.
inline net::train_result train_baseline(const data::dataset& scaled, const model_spec& spec,
                                        std::uint64_t seed) {
  auto tc = spec.train;
  tc.seed = seed;
  auto n = net::build_mlp(scaled.dims(), std::span<const std::size_t>(spec.hidden), 2,
                          derive_seed(seed, "init"));
  n.input_names = scaled.feature_names;
  n.output_names = {data::class_names.begin(), data::class_names.end()};
  return net::train(std::move(n), data::to_samples(scaled), tc);
}

inline net::network compile_nsai(const rules::rule_set& rules,
                                 std::span<const std::string> features,
                                 kbann::compile_config cc, std::uint64_t seed) {
  cc.seed = derive_seed(seed, "init");
  const auto rewritten = rules::rewrite_disjuncts(rules);
  return kbann::compile(rewritten, features, data::class_names, cc);
}

inline net::train_result train_nsai(const data::dataset& scaled, const rules::rule_set& rules,
                                    const kbann::compile_config& cc,
                                    const net::train_config& train, std::uint64_t seed) {
  auto n = compile_nsai(rules, scaled.feature_names, cc, seed);
  auto tc = train;
  tc.seed = seed;
  return net::train(std::move(n), data::to_samples(scaled), tc);
}

// ---------------------------------------------------------------------------
// comparison

struct comparison_config {
  std::uint64_t seed = 0;
  model_spec baseline{};
  net::train_config nsai_train{};
  kbann::compile_config nsai_compile = default_nsai_compile();
  augment::smote_config smote{};
  augment::autoencoder_config autoencoder{};
  std::size_t cv_folds = 10;
  std::string spurious_feature = "Small_cheese";
  std::size_t importance_repeats = 10;

  // Knowledge links are frozen here: left free, the penalty erodes them long
  // before the saturated rule units receive any useful gradient.
  static kbann::compile_config default_nsai_compile() {
    kbann::compile_config c;
    c.freeze_knowledge_links = true;
    return c;
  }
};

/// Per-stage seeds, all derived from the master seed by tag.
struct comparison_seeds {
  std::uint64_t deep_nn, deep_nn_smote, deep_nn_autoencoder, nsai;
  std::uint64_t smote, autoencoder_train, autoencoder_sample, cv, importance;

  explicit comparison_seeds(std::uint64_t master)
      : deep_nn(derive_seed(master, "deep_nn")),
        deep_nn_smote(derive_seed(master, "deep_nn_smote")),
        deep_nn_autoencoder(derive_seed(master, "deep_nn_autoencoder")),
        nsai(derive_seed(master, "nsai")),
        smote(derive_seed(master, "smote")),
        autoencoder_train(derive_seed(master, "autoencoder_train")),
        autoencoder_sample(derive_seed(master, "autoencoder_sample")),
        cv(derive_seed(master, "cv")),
        importance(derive_seed(master, "importance")) {}
};

struct cv_summary {
  std::vector<double> fold_accuracy;
  double mean = 0.0;
  double std = 0.0;  // population
};

struct model_result {
  std::string name;
  std::string source;  // training data the model learned from
  std::uint64_t seed = 0;
  std::size_t train_rows = 0;
  net::train_report report;
  metrics test;
  cv_summary cv;
  double spurious_importance = 0.0;
};

struct experiment_report {
  std::uint64_t seed = 0;
  std::string spurious_feature;
  std::size_t test_rows = 0;
  std::vector<model_result> models;  // Deep NN, Deep NN-SMOTE, Deep NN-Autoencoder, NSAI
  correlation_table correlations;
  kbann::extracted_rule_set nsai_rules;
};

namespace detail {

template <class Train>
cv_summary cross_validate(const data::dataset& scaled, std::size_t k, std::uint64_t seed,
                          Train&& train) {
  cv_summary s;
  const auto folds = data::kfold_split(scaled, k, seed);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto tr = data::select_rows(scaled, folds[f].train);
    const auto va = data::select_rows(scaled, folds[f].validation);
    const auto result = train(tr, derive_seed(seed, static_cast<std::uint64_t>(f)));
    s.fold_accuracy.push_back(evaluate(result.net, va).accuracy);
  }
  for (double a : s.fold_accuracy) s.mean += a;
  s.mean /= static_cast<double>(s.fold_accuracy.size());
  for (double a : s.fold_accuracy) s.std += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(s.fold_accuracy.size()));
  return s;
}

}  // namespace detail

/// Trains the three data-driven models and the knowledge-based one, scores
/// them on the shared test set and assembles the full report. `train` and
/// `test` hold raw feature values; scaling uses the real training ranges.
inline experiment_report run_comparison(const data::dataset& train, const data::dataset& test,
                                        const rules::rule_set& rules,
                                        const comparison_config& cfg) {
  if (train.feature_names != test.feature_names)
    throw error("train and test files have different feature columns");
  const comparison_seeds seeds(cfg.seed);
  // Compile first so that rule problems surface before any training.
  (void)compile_nsai(rules, train.feature_names, cfg.nsai_compile, seeds.nsai);
  train.feature_index(cfg.spurious_feature);

  const auto raw_train = data::denormalize(train);
  const auto raw_test = data::denormalize(test);
  const auto bounds = data::compute_bounds(raw_train.rows);

  auto smote_cfg = cfg.smote;
  smote_cfg.seed = seeds.smote;
  const auto smote_data = augment::smote(raw_train, smote_cfg).data;
  auto ae_cfg = cfg.autoencoder;
  ae_cfg.train.seed = seeds.autoencoder_train;
  const auto ae = augment::train_autoencoder(raw_train, ae_cfg);
  const auto ae_data = augment::autoencoder_balance(ae, raw_train, seeds.autoencoder_sample);

  const auto test_scaled = data::apply_normalization(raw_test, bounds);
  experiment_report rep;
  rep.seed = cfg.seed;
  rep.spurious_feature = cfg.spurious_feature;
  rep.test_rows = test.size();

  auto baseline = [&](const data::dataset& d, std::uint64_t s) {
    return train_baseline(d, cfg.baseline, s);
  };
  auto nsai = [&](const data::dataset& d, std::uint64_t s) {
    return train_nsai(d, rules, cfg.nsai_compile, cfg.nsai_train, s);
  };

  struct job {
    std::string name, source;
    const data::dataset* data;
    std::uint64_t seed;
    bool knowledge;
  };
  const std::vector<job> jobs{{"Deep NN", "train", &raw_train, seeds.deep_nn, false},
                              {"Deep NN-SMOTE", "smote", &smote_data, seeds.deep_nn_smote, false},
                              {"Deep NN-Autoencoder", "autoencoder", &ae_data,
                               seeds.deep_nn_autoencoder, false},
                              {"NSAI", "train", &raw_train, seeds.nsai, true}};
  for (const auto& j : jobs) {
    const auto scaled = data::apply_normalization(*j.data, bounds);
    auto result = j.knowledge ? nsai(scaled, j.seed) : baseline(scaled, j.seed);
    model_result m;
    m.name = j.name;
    m.source = j.source;
    m.seed = j.seed;
    m.train_rows = scaled.size();
    m.report = result.report;
    m.test = evaluate(result.net, test_scaled);
    m.spurious_importance = kbann::permutation_importance(
        result.net, test_scaled, cfg.spurious_feature, cfg.importance_repeats, seeds.importance);
    const auto cv_seed = derive_seed(seeds.cv, j.name);
    m.cv = j.knowledge ? detail::cross_validate(scaled, cfg.cv_folds, cv_seed, nsai)
                       : detail::cross_validate(scaled, cfg.cv_folds, cv_seed, baseline);
    if (j.knowledge) rep.nsai_rules = kbann::extract_rules(result.net, scaled);
    rep.models.push_back(std::move(m));
  }

  const std::vector<std::pair<std::string, data::dataset>> sources{
      {"train", raw_train}, {"smote", smote_data}, {"autoencoder", ae_data}, {"test", raw_test}};
  rep.correlations = make_correlation_table(sources);
  return rep;
}

// ---------------------------------------------------------------------------
// export

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

inline std::string percent(const std::optional<double>& v) { return v ? percent(*v) : "n/a"; }

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const metrics& m) {
  return {{"n", m.n},
          {"accuracy", m.accuracy},
          {"confusion",
           {{"truth_Low", {{"pred_Low", m.confusion[0][0]}, {"pred_High", m.confusion[0][1]}}},
            {"truth_High", {{"pred_Low", m.confusion[1][0]}, {"pred_High", m.confusion[1][1]}}}}},
          {"recall", {{"Low", optional_json(m.recall[0])}, {"High", optional_json(m.recall[1])}}},
          {"precision",
           {{"Low", optional_json(m.precision[0])}, {"High", optional_json(m.precision[1])}}}};
}

inline json to_json(const correlation_table& t) {
  json rows = json::array();
  for (std::size_t j = 0; j < t.features.size(); ++j) {
    json r{{"feature", t.features[j]}};
    for (std::size_t s = 0; s < t.sources.size(); ++s) {
      r[t.sources[s]] = t.r[j][s].r;
      if (t.r[j][s].constant) r[t.sources[s] + "_constant"] = true;
    }
    rows.push_back(r);
  }
  return {{"sources", t.sources}, {"rows", rows}};
}

inline json to_json(const experiment_report& rep) {
  json models = json::array();
  for (const auto& m : rep.models)
    models.push_back({{"name", m.name},
                      {"source", m.source},
                      {"seed", m.seed},
                      {"train_rows", m.train_rows},
                      {"epochs_run", m.report.epochs_run},
                      {"best_epoch", m.report.best_epoch},
                      {"stopped_early", m.report.stopped_early},
                      {"test", to_json(m.test)},
                      {"cv", {{"folds", m.cv.fold_accuracy}, {"mean", m.cv.mean}, {"std", m.cv.std}}},
                      {"spurious_importance", m.spurious_importance}});
  return {{"format", "nsai-experiment-report"},
          {"version", 1},
          {"seed", rep.seed},
          {"spurious_feature", rep.spurious_feature},
          {"test_rows", rep.test_rows},
          {"models", models},
          {"correlations", to_json(rep.correlations)},
          {"nsai_rules", kbann::to_json(rep.nsai_rules)}};
}

/// Plain-text performance table (percentages, 2 decimals), then the
/// correlation table and the extracted rules.
inline std::string to_text(const experiment_report& rep) {
  std::ostringstream os;
  os << "model\tsource\taccuracy\trecall_High\trecall_Low\tprecision_High\tprecision_Low\t"
        "cv_accuracy\t"
     << rep.spurious_feature << "_importance\n";
  for (const auto& m : rep.models)
    os << m.name << '\t' << m.source << '\t' << percent(m.test.accuracy) << '\t'
       << percent(m.test.recall[1]) << '\t' << percent(m.test.recall[0]) << '\t'
       << percent(m.test.precision[1]) << '\t' << percent(m.test.precision[0]) << '\t'
       << percent(m.cv.mean) << " +- " << percent(m.cv.std) << '\t'
       << percent(m.spurious_importance) << '\n';
  os << "\nfeature";
  for (const auto& s : rep.correlations.sources) os << '\t' << s;
  os << '\n';
  for (std::size_t j = 0; j < rep.correlations.features.size(); ++j) {
    os << rep.correlations.features[j];
    for (const auto& c : rep.correlations.r[j]) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", c.r);
      os << '\t' << buf;
    }
    os << '\n';
  }
  os << '\n' << kbann::to_text(rep.nsai_rules);
  return os.str();
}

// ---------------------------------------------------------------------------
// model files

/// A trained network plus the feature ranges its inputs were scaled with.
struct model_file {
  std::string kind;     // "deep_nn" or "nsai"
  std::string augment;  // "none", "smote" or "autoencoder"
  std::vector<data::feature_bounds> scaling;
  net::network network;
  std::string rules;  // source rules for nsai models

  friend bool operator==(const model_file&, const model_file&) = default;
};

inline json to_json(const model_file& m) {
  json scaling = json::array();
  for (const auto& b : m.scaling) scaling.push_back({b.min, b.max});
  return {{"format", "nsai-model"}, {"version", 1},       {"kind", m.kind},
          {"augment", m.augment},   {"scaling", scaling}, {"rules", m.rules},
          {"network", net::to_json(m.network)}};
}

inline model_file model_from_json(const json& j) {
  if (j.value("format", "") != "nsai-model") throw error("not an nsai model file");
  if (j.at("version").get<int>() != 1) throw error("unsupported model file version");
  model_file m;
  m.kind = j.at("kind").get<std::string>();
  if (m.kind != "deep_nn" && m.kind != "nsai") throw error("unknown model kind '" + m.kind + "'");
  m.augment = j.at("augment").get<std::string>();
  for (const auto& b : j.at("scaling")) m.scaling.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
  m.rules = j.value("rules", "");
  m.network = net::network_from_json(j.at("network"));
  if (m.scaling.size() != m.network.input_dim())
    throw error("model scaling does not match the network input width");
  return m;
}

}  // namespace nsai::eval
