#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "json_config.hpp"
#include "manifest.hpp"
#include "nsai/augment.hpp"
#include "nsai/datakit.hpp"
#include "nsai/evalharness.hpp"
#include "nsai/explain.hpp"
#include "nsai/kbann.hpp"
#include "nsai/rulelang.hpp"

#ifndef NSAI_VERSION
#define NSAI_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flag combinations detected after parsing; exit code 2 like parse errors.
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const CLI::Validator open_unit_interval(
    [](std::string& v) {
      double x = 0.0;
      if (!CLI::detail::lexical_cast(v, x) || !(x > 0.0 && x < 1.0))
        return "value " + v + " not in (0, 1)";
      return std::string();
    },
    "FLOAT in (0, 1)");

std::string env_name(const std::string& long_name) {
  std::string out = "NSAI_";
  for (char c : long_name)
    out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

// Every long flag can also be set through NSAI_<FLAG> (dashes become underscores).
void bind_env(CLI::App& app) {
  for (auto* opt : app.get_options()) {
    const auto& l = opt->get_lnames();
    if (l.empty() || l.front() == "help") continue;
    opt->envname(env_name(l.front()));
  }
}

// CLI11 drops an environment value that fails validation without a word; an
// option left empty while its variable is set means exactly that happened.
void check_env(const CLI::App& app) {
  for (const auto* opt : app.get_options()) {
    const auto& var = opt->get_envname();
    if (var.empty() || opt->count() > 0) continue;
    const char* v = std::getenv(var.c_str());
    if (v && *v) throw usage_error("invalid value '" + std::string(v) + "' in " + var);
  }
}

nsai::rules::rule_set load_rules(const std::string& path) {
  return nsai::rules::parse_rules(nsai::tools::read_file(path));
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

nsai::eval::model_file load_model(const std::string& path) {
  try {
    return nsai::eval::model_from_json(json::parse(nsai::tools::read_file(path)));
  } catch (const json::exception& e) {
    throw nsai::error("model file '" + path + "' is malformed: " + e.what());
  }
}

struct train_flags {
  double learning_rate = 0.03;
  std::string optimizer = "adam";
  double l1 = 1.0;
  double l2 = 1.0;
  std::size_t patience = 3;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 32;
  double validation_fraction = 0.1;

  void add(CLI::App& app) {
    app.add_option("--learning-rate", learning_rate, "Step size")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--optimizer", optimizer, "adam or sgd")
        ->check(CLI::IsMember({"adam", "sgd"}))
        ->capture_default_str();
    app.add_option("--l1", l1, "L1 coefficient")->check(CLI::NonNegativeNumber)->capture_default_str();
    app.add_option("--l2", l2, "L2 coefficient")->check(CLI::NonNegativeNumber)->capture_default_str();
    app.add_option("--patience", patience, "Early-stopping patience (epochs)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--max-epochs", max_epochs)->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--batch-size", batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--validation-fraction", validation_fraction)
        ->check(open_unit_interval)
        ->capture_default_str();
  }

  nsai::net::train_config config() const {
    nsai::net::train_config t;
    t.learning_rate = learning_rate;
    t.optimizer = optimizer == "sgd" ? nsai::net::optimizer_kind::sgd
                                     : nsai::net::optimizer_kind::adam;
    t.l1 = l1;
    t.l2 = l2;
    t.patience = patience;
    t.max_epochs = max_epochs;
    t.batch_size = batch_size;
    t.validation_fraction = validation_fraction;
    return t;
  }
};

struct compile_flags {
  double omega = 4.0;
  double perturb_scale = 0.01;
  std::size_t extra_hidden = 3;
  bool freeze_knowledge = true;

  void add(CLI::App& app) {
    app.add_option("--omega", omega, "Knowledge link weight")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--perturb-scale", perturb_scale)
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--extra-hidden", extra_hidden, "Extra units per level")->capture_default_str();
    app.add_option("--freeze-knowledge", freeze_knowledge, "Keep knowledge links fixed")
        ->capture_default_str();
  }

  nsai::kbann::compile_config config() const {
    nsai::kbann::compile_config c;
    c.omega = omega;
    c.perturb_scale = perturb_scale;
    c.extra_hidden_per_level = extra_hidden;
    c.freeze_knowledge_links = freeze_knowledge;
    return c;
  }
};

// ---------------------------------------------------------------------------
// synth

struct synth_cmd {
  std::size_t rows = 427;
  std::size_t test_rows = 85;
  double class_ratio = 364.0 / 427.0;
  double train_r = 0.887;
  double test_r = 0.632;
  std::string spurious = "Small_cheese";
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--rows", rows, "Training rows")->check(CLI::Range(3, 10000000))->capture_default_str();
    app.add_option("--test-rows", test_rows, "Test rows")
        ->check(CLI::Range(3, 10000000))
        ->capture_default_str();
    app.add_option("--class-ratio", class_ratio, "Share of High rows")
        ->check(open_unit_interval)
        ->default_str(nsai::data::detail::format_number(class_ratio));
    app.add_option("--train-r", train_r, "Spurious correlation in train")
        ->check(CLI::Range(-0.999, 0.999))
        ->capture_default_str();
    app.add_option("--test-r", test_r, "Spurious correlation in test")
        ->check(CLI::Range(-0.999, 0.999))
        ->capture_default_str();
    app.add_option("--spurious-feature", spurious)->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
    app.add_option("--out", out, "Output directory")->required();
  }

  int run(const CLI::App& app) const {
    nsai::data::synth_config c;
    c.n_rows = rows;
    c.test_rows = test_rows;
    c.class_ratio = class_ratio;
    c.train_spurious_r = train_r;
    c.test_spurious_r = test_r;
    c.spurious_feature = spurious;
    c.seed = seed;
    const auto syn = nsai::data::generate_synthetic(c);

    const auto dir = prepare_out(out);
    nsai::tools::manifest m(app, NSAI_VERSION);
    m.seed(seed);
    std::ostringstream tr, te;
    nsai::data::write_csv(tr, syn.train);
    nsai::data::write_csv(te, syn.test);
    m.output(dir, "train.csv", tr.str());
    m.output(dir, "test.csv", te.str());
    m.note("train_spurious_r", syn.train_spurious_r);
    m.note("test_spurious_r", syn.test_spurious_r);
    m.save(dir);
    std::cout << "wrote " << syn.train.size() << " train and " << syn.test.size()
              << " test rows to " << dir.string() << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// train

struct train_cmd {
  std::string data_path;
  std::string rules_path;
  std::string model = "auto";
  std::string augment = "none";
  std::uint64_t seed = 0;
  std::string out;
  train_flags tf;
  compile_flags cf;
  nsai::augment::autoencoder_config ae{};

  void add(CLI::App& app) {
    app.add_option("--data", data_path, "Training CSV")->required()->check(CLI::ExistingFile);
    app.add_option("--rules", rules_path, "Rule file (knowledge-based model)")
        ->check(CLI::ExistingFile);
    app.add_option("--model", model, "auto, deep_nn or nsai")
        ->check(CLI::IsMember({"auto", "deep_nn", "nsai"}))
        ->capture_default_str();
    app.add_option("--augment", augment, "none, smote or autoencoder")
        ->check(CLI::IsMember({"none", "smote", "autoencoder"}))
        ->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
    app.add_option("--out", out, "Output directory")->required();
    tf.add(app);
    cf.add(app);
  }

  int run(const CLI::App& app) const {
    std::string kind = model == "auto" ? (rules_path.empty() ? "deep_nn" : "nsai") : model;
    if (kind == "nsai" && rules_path.empty()) throw usage_error("--model nsai requires --rules");
    if (kind == "deep_nn" && !rules_path.empty())
      throw usage_error("--rules only applies to --model nsai");

    const auto raw = nsai::data::denormalize(nsai::data::load_csv(data_path));
    std::optional<nsai::rules::rule_set> rules;
    if (kind == "nsai") rules = load_rules(rules_path);
    const nsai::eval::comparison_seeds seeds(seed);
    const auto bounds = nsai::data::compute_bounds(raw.rows);

    nsai::data::dataset effective = raw;
    if (augment == "smote") {
      nsai::augment::smote_config sc;
      sc.seed = seeds.smote;
      effective = nsai::augment::smote(raw, sc).data;
    } else if (augment == "autoencoder") {
      auto c = ae;
      c.train.seed = seeds.autoencoder_train;
      const auto net = nsai::augment::train_autoencoder(raw, c);
      effective = nsai::augment::autoencoder_balance(net, raw, seeds.autoencoder_sample);
    }
    const auto scaled = nsai::data::apply_normalization(effective, bounds);

    nsai::net::train_result result;
    std::uint64_t model_seed = 0;
    if (kind == "nsai") {
      model_seed = seeds.nsai;
      result = nsai::eval::train_nsai(scaled, *rules, cf.config(), tf.config(), model_seed);
    } else {
      model_seed = augment == "smote"         ? seeds.deep_nn_smote
                   : augment == "autoencoder" ? seeds.deep_nn_autoencoder
                                              : seeds.deep_nn;
      nsai::eval::model_spec spec;
      spec.train = tf.config();
      result = nsai::eval::train_baseline(scaled, spec, model_seed);
    }

    nsai::eval::model_file mf{kind, augment, bounds, result.net,
                              rules ? nsai::rules::to_string(*rules) : std::string{}};
    const auto& r = result.report;
    json report{{"epochs_run", r.epochs_run},
                {"best_epoch", r.best_epoch},
                {"stopped_early", r.stopped_early},
                {"train_loss", r.train_loss_history},
                {"validation_score", r.validation_score_history}};

    const auto dir = prepare_out(out);
    nsai::tools::manifest m(app, NSAI_VERSION);
    m.seed(seed);
    m.input(data_path);
    if (!rules_path.empty()) m.input(rules_path);
    m.note("model_seed", model_seed);
    m.note("training_rows", {{"total", effective.size()},
                             {"Low", effective.count(nsai::data::low)},
                             {"High", effective.count(nsai::data::high)}});
    m.output(dir, "model.json", nsai::eval::to_json(mf).dump(2) + "\n");
    m.output(dir, "train_report.json", report.dump(2) + "\n");
    m.save(dir);
    std::cout << kind << " model trained on " << effective.size() << " rows ("
              << effective.count(nsai::data::low) << " Low / "
              << effective.count(nsai::data::high) << " High), " << r.epochs_run
              << " epochs, best epoch " << r.best_epoch << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// evaluate

struct evaluate_cmd {
  std::string model_path;
  std::string data_path;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
    app.add_option("--data", data_path, "Labelled CSV")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out, "Output directory");
  }

  static std::string text(const nsai::eval::metrics& mt) {
    using nsai::eval::percent;
    std::ostringstream os;
    os << "accuracy\t" << percent(mt.accuracy) << "\n"
       << "recall_High\t" << percent(mt.recall[1]) << "\n"
       << "recall_Low\t" << percent(mt.recall[0]) << "\n"
       << "precision_High\t" << percent(mt.precision[1]) << "\n"
       << "precision_Low\t" << percent(mt.precision[0]) << "\n"
       << "confusion (rows truth Low/High, columns predicted Low/High)\n"
       << mt.confusion[0][0] << '\t' << mt.confusion[0][1] << '\n'
       << mt.confusion[1][0] << '\t' << mt.confusion[1][1] << '\n';
    return os.str();
  }

  int run(const CLI::App& app) const {
    const auto mf = load_model(model_path);
    const auto d = nsai::data::apply_normalization(
        nsai::data::denormalize(nsai::data::load_csv(data_path)), mf.scaling);
    const auto mt = nsai::eval::evaluate(mf.network, d);
    const auto txt = text(mt);
    std::cout << txt;
    if (!out.empty()) {
      const auto dir = prepare_out(out);
      nsai::tools::manifest m(app, NSAI_VERSION);
      m.input(model_path);
      m.input(data_path);
      m.output(dir, "metrics.json", nsai::eval::to_json(mt).dump(2) + "\n");
      m.output(dir, "metrics.txt", txt);
      m.save(dir);
    }
    return 0;
  }
};

// ---------------------------------------------------------------------------
// explain

struct explain_cmd {
  std::string model_path;
  std::string data_path;
  std::size_t samples = 1000;
  double kernel_width = 0.0;
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
    app.add_option("--data", data_path, "Labelled CSV")->required()->check(CLI::ExistingFile);
    app.add_option("--samples", samples, "Perturbations per instance")
        ->check(CLI::Range(std::size_t{50}, std::size_t{10000000}))
        ->capture_default_str();
    app.add_option("--kernel-width", kernel_width, "0 selects 0.75*sqrt(features)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
    app.add_option("--out", out, "Output directory");
  }

  int run(const CLI::App& app) const {
    const auto mf = load_model(model_path);
    const auto d = nsai::data::denormalize(nsai::data::load_csv(data_path));
    if (d.dims() != mf.scaling.size()) throw nsai::error("data width does not match the model");
    const auto model = nsai::explain::network_model(mf.network, mf.scaling);
    nsai::explain::lime_config lc;
    lc.n_samples = samples;
    lc.kernel_width = kernel_width;
    lc.seed = seed;
    const auto stats = nsai::explain::feature_statistics(d);
    const auto global = nsai::explain::global_explain(model, d, stats, lc);
    const auto wrong = nsai::explain::misprediction_report(model, d, stats, lc);

    const auto global_txt = nsai::explain::to_text(global);
    const auto wrong_txt = nsai::explain::to_text(wrong);
    std::cout << global_txt << "\n" << wrong_txt;
    if (!out.empty()) {
      json wj = json::array();
      for (const auto& w : wrong) wj.push_back(nsai::explain::to_json(w));
      const auto dir = prepare_out(out);
      nsai::tools::manifest m(app, NSAI_VERSION);
      m.seed(seed);
      m.input(model_path);
      m.input(data_path);
      m.output(dir, "global.json", nsai::explain::to_json(global).dump(2) + "\n");
      m.output(dir, "global.txt", global_txt);
      m.output(dir, "mispredictions.json", wj.dump(2) + "\n");
      m.output(dir, "mispredictions.txt", wrong_txt);
      m.save(dir);
    }
    return 0;
  }
};

// ---------------------------------------------------------------------------
// extract

struct extract_cmd {
  std::string model_path;
  std::string data_path;
  double tolerance = 0.1;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--model", model_path, "Knowledge-based model file")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--data", data_path, "CSV used to measure fidelity")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--tolerance", tolerance, "Relative weight grouping tolerance")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--out", out, "Output directory");
  }

  int run(const CLI::App& app) const {
    const auto mf = load_model(model_path);
    if (mf.kind != "nsai")
      throw nsai::error("model '" + model_path +
                        "' is a plain network without rule units; use 'explain' instead");
    const auto d = nsai::data::apply_normalization(
        nsai::data::denormalize(nsai::data::load_csv(data_path)), mf.scaling);
    const auto rs = nsai::kbann::extract_rules(mf.network, d, tolerance);
    const auto txt = nsai::kbann::to_text(rs);
    std::cout << txt;
    if (!out.empty()) {
      const auto dir = prepare_out(out);
      nsai::tools::manifest m(app, NSAI_VERSION);
      m.input(model_path);
      m.input(data_path);
      m.output(dir, "rules.txt", txt);
      m.output(dir, "rules.json", nsai::kbann::to_json(rs).dump(2) + "\n");
      m.save(dir);
    }
    return 0;
  }
};

// ---------------------------------------------------------------------------
// compare

struct compare_cmd {
  std::string train_path;
  std::string test_path;
  std::string rules_path;
  std::uint64_t seed = 0;
  std::size_t folds = 10;
  std::size_t repeats = 10;
  std::string spurious = "Small_cheese";
  std::string out;
  train_flags tf;
  compile_flags cf;

  void add(CLI::App& app) {
    app.add_option("--train", train_path, "Training CSV")->required()->check(CLI::ExistingFile);
    app.add_option("--test", test_path, "Test CSV")->required()->check(CLI::ExistingFile);
    app.add_option("--rules", rules_path, "Rule file")->required()->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Master seed")->capture_default_str();
    app.add_option("--cv-folds", folds)->check(CLI::Range(2, 1000))->capture_default_str();
    app.add_option("--importance-repeats", repeats)->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--spurious-feature", spurious)->capture_default_str();
    app.add_option("--out", out, "Output directory");
    tf.add(app);
    cf.add(app);
  }

  int run(const CLI::App& app) const {
    const auto rules = load_rules(rules_path);
    const auto train = nsai::data::load_csv(train_path);
    const auto test = nsai::data::load_csv(test_path);
    nsai::eval::comparison_config c;
    c.seed = seed;
    c.cv_folds = folds;
    c.importance_repeats = repeats;
    c.spurious_feature = spurious;
    c.baseline.train = tf.config();
    c.nsai_train = tf.config();
    c.nsai_compile = cf.config();
    const auto rep = nsai::eval::run_comparison(train, test, rules, c);
    const auto txt = nsai::eval::to_text(rep);
    std::cout << txt;
    if (!out.empty()) {
      const auto dir = prepare_out(out);
      nsai::tools::manifest m(app, NSAI_VERSION);
      m.seed(seed);
      m.input(train_path);
      m.input(test_path);
      m.input(rules_path);
      m.output(dir, "report.json", nsai::eval::to_json(rep).dump(2) + "\n");
      m.output(dir, "report.txt", txt);
      m.save(dir);
    }
    return 0;
  }
};

// CLI11 only reads --config on the top-level app, ahead of the subcommand;
// hoist it there wherever it was written.
std::vector<std::string> hoist_config(int argc, char** argv) {
  std::vector<std::string> head, rest;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      head.push_back(a);
      head.push_back(argv[++i]);
    } else if (a.rfind("--config=", 0) == 0) {
      head.push_back(a);
    } else {
      rest.push_back(a);
    }
  }
  head.insert(head.end(), rest.begin(), rest.end());
  std::reverse(head.begin(), head.end());  // CLI11 consumes the vector from the back
  return head;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-based neural network toolkit: synthetic data, training, "
               "evaluation, explanations, rule extraction and model comparison",
               "nsai"};
  app.set_version_flag("--version", NSAI_VERSION);
  std::string command;
  for (int i = 1; i < argc && command.empty(); ++i)
    for (const char* name : {"synth", "train", "evaluate", "explain", "extract", "compare"})
      if (std::string(argv[i]) == name) command = name;
  app.config_formatter(std::make_shared<nsai::tools::json_config>(command));
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "JSON file with option values (a run manifest works)");
  app.require_subcommand(1);

  synth_cmd synth;
  train_cmd train;
  evaluate_cmd evaluate;
  explain_cmd explain;
  extract_cmd extract;
  compare_cmd compare;
  auto* s_synth = app.add_subcommand("synth", "Generate synthetic train/test CSV files");
  auto* s_train = app.add_subcommand("train", "Train a baseline or knowledge-based model");
  auto* s_eval = app.add_subcommand("evaluate", "Score a model on labelled data");
  auto* s_explain = app.add_subcommand("explain", "Global and misprediction LIME tables");
  auto* s_extract = app.add_subcommand("extract", "Threshold rules from a knowledge-based model");
  auto* s_compare = app.add_subcommand("compare", "Four-model comparison report");
  synth.add(*s_synth);
  train.add(*s_train);
  evaluate.add(*s_eval);
  explain.add(*s_explain);
  extract.add(*s_extract);
  compare.add(*s_compare);
  for (auto* s : {s_synth, s_train, s_eval, s_explain, s_extract, s_compare}) bind_env(*s);

  try {
    app.parse(hoist_config(argc, argv));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (auto* s : {s_synth, s_train, s_eval, s_explain, s_extract, s_compare})
      if (s->parsed()) check_env(*s);
    if (s_synth->parsed()) return synth.run(*s_synth);
    if (s_train->parsed()) return train.run(*s_train);
    if (s_eval->parsed()) return evaluate.run(*s_eval);
    if (s_explain->parsed()) return explain.run(*s_explain);
    if (s_extract->parsed()) return extract.run(*s_extract);
    if (s_compare->parsed()) return compare.run(*s_compare);
  } catch (const usage_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
