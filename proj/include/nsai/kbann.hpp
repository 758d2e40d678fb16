#pragma once

// Knowledge-based networks: compiles a disjunct-free rule set into the
// topology and initial weights of a sigmoid network, checks the compiled
// logic against the boolean semantics, and reads threshold rules back out of
// a trained network.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <cctype>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsai/datakit.hpp"
#include "nsai/error.hpp"
#include "nsai/random.hpp"
#include "nsai/rulelang.hpp"
#include "nsai/tensornet.hpp"

namespace nsai::kbann {

struct compile_config {
  double omega = 4.0;          // magnitude of rule-derived links
  double perturb_scale = 0.01;
  std::size_t extra_hidden_per_level = 3;
  net::activation knowledge_activation = net::activation::sigmoid;
  std::uint64_t seed = 0;
  bool freeze_knowledge_links = false;

  void validate() const {
    if (!(omega > 0.0)) throw error("omega must be positive");
    if (!(perturb_scale >= 0.0)) throw error("perturb_scale must be non-negative");
    if (knowledge_activation != net::activation::sigmoid)
      throw error("knowledge units must be sigmoid");
  }
};

/// `<symbol>__r<level>` carries a lower-level symbol up one level so that
/// knowledge links only join adjacent levels.
inline std::string relay_name(std::string_view symbol, std::size_t level) {
  return std::string(symbol) + "__r" + std::to_string(level);
}

/// Symbol relayed by a relay unit, if `label` names one.
inline std::optional<std::string> relayed_symbol(std::string_view label) {
  if (!rules::detail::has_numbered_suffix(label, "__r")) return std::nullopt;
  return std::string(label.substr(0, label.rfind("__r")));
}

inline bool is_extra_head(std::string_view label) {
  if (label.size() <= 4 || label.substr(0, 4) != "head") return false;
  return std::all_of(label.begin() + 4, label.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

/// Level of every symbol: 0 for features, one above the deepest antecedent
/// for heads.
inline std::map<std::string, std::size_t> symbol_levels(const rules::rule_set& rules,
                                                         std::span<const std::string> features) {
  std::map<std::string, std::size_t> level;
  for (const auto& f : features) level[f] = 0;
  for (const auto& h : rules.topological_heads()) {
    std::size_t lv = 0;
    for (const auto& c : rules.clauses())
      if (c.head == h)
        for (const auto& l : c.body) lv = std::max(lv, level.at(l.symbol) + 1);
    level[h] = lv;
  }
  return level;
}

namespace detail {

inline void check_compilable(const rules::rule_set& rules, std::span<const std::string> features) {
  const std::set<std::string> feature_set(features.begin(), features.end());
  if (feature_set.size() != features.size()) throw error("duplicate feature names");
  for (const auto& h : rules.heads()) {
    if (feature_set.count(h)) throw error("rule head '" + h + "' is also a feature name");
    if (rules.clause_count(h) > 1 && !rules.is_disjunctive(h))
      throw error("head '" + h + "' has several clauses; run rewrite_disjuncts first");
  }
  for (const auto& c : rules.clauses())
    if (rules.is_disjunctive(c.head) && (c.body.size() != 1 || c.body[0].negated))
      throw error("disjunctive head '" + c.head + "' must have single positive antecedents");
  for (const auto& in : rules.inputs())
    if (!feature_set.count(in))
      throw error("rule input '" + in + "' is not a feature of the data");
  if (rules.roots().size() > 1) {
    std::string names;
    for (const auto& r : rules.roots()) names += (names.empty() ? "" : ", ") + r;
    throw error("rule set has several roots {" + names + "}; exactly one is required");
  }
}

}  // namespace detail

/// Builds the initial network. The single root drives the second class
/// (the positive one) of a two-unit softmax output.
inline net::network compile(const rules::rule_set& rules, std::span<const std::string> features,
                            std::span<const std::string> classes, const compile_config& cfg) {
  cfg.validate();
  if (classes.size() != 2) throw error("exactly two classes are required");
  if (features.empty()) throw error("no input features");
  detail::check_compilable(rules, features);

  const auto level = symbol_levels(rules, features);
  std::size_t top = 1;
  for (const auto& h : rules.heads()) top = std::max(top, level.at(h));

  std::vector<std::vector<std::string>> units(top + 1);
  units[0].assign(features.begin(), features.end());
  for (const auto& h : rules.heads()) units[level.at(h)].push_back(h);

  std::set<std::string> relays;
  for (const auto& c : rules.clauses()) {
    const auto lh = level.at(c.head);
    for (const auto& l : c.body)
      for (auto k = level.at(l.symbol) + 1; k < lh; ++k) {
        const auto name = relay_name(l.symbol, k);
        if (relays.insert(name).second) units[k].push_back(name);
      }
  }
  std::size_t extra = 0;
  for (std::size_t lv = 1; lv <= top; ++lv)
    for (std::size_t i = 0; i < cfg.extra_hidden_per_level; ++i)
      units[lv].push_back("head" + std::to_string(++extra));
  for (std::size_t lv = 1; lv <= top; ++lv)
    if (units[lv].empty()) throw error("level " + std::to_string(lv) + " has no units");

  auto index_of = [&](std::size_t lv, const std::string& name) {
    const auto& u = units[lv];
    return static_cast<std::size_t>(std::find(u.begin(), u.end(), name) - u.begin());
  };
  // Unit carrying `symbol` at level `lv`: the symbol itself or its relay.
  auto source_at = [&](const std::string& symbol, std::size_t lv) {
    return level.at(symbol) == lv ? index_of(lv, symbol) : index_of(lv, relay_name(symbol, lv));
  };

  rng_type rng(cfg.seed);
  const double s = cfg.perturb_scale;
  const double w = cfg.omega;
  net::network out;

  auto new_layer = [&](std::size_t in, std::size_t n, net::activation act) {
    net::layer l(in, n, act);
    for (auto& v : l.weights.data()) v = uniform(rng, -s, s);
    return l;
  };
  auto link = [&](net::layer& l, std::size_t to, std::size_t from, double value) {
    l.weights(to, from) = value;
    l.knowledge(to, from) = 1;
  };

  for (std::size_t lv = 1; lv <= top; ++lv) {
    auto l = new_layer(units[lv - 1].size(), units[lv].size(), cfg.knowledge_activation);
    for (std::size_t u = 0; u < units[lv].size(); ++u) {
      const auto& name = units[lv][u];
      if (const auto relayed = relayed_symbol(name); relayed && relays.count(name)) {
        link(l, u, source_at(*relayed, lv - 1), w);
        l.biases[u] = -w / 2;
      } else if (rules.is_head(name) && rules.is_disjunctive(name)) {
        for (const auto& c : rules.clauses())
          if (c.head == name) link(l, u, source_at(c.body[0].symbol, lv - 1), w);
        l.biases[u] = -w / 2;
      } else if (rules.is_head(name)) {
        double positives = 0;
        for (const auto& c : rules.clauses()) {
          if (c.head != name) continue;
          for (const auto& lit : c.body) {
            const auto from = source_at(lit.symbol, lv - 1);
            link(l, u, from, l.knowledge(u, from) ? l.weights(u, from) + (lit.negated ? -w : w)
                                                  : (lit.negated ? -w : w));
            positives += lit.negated ? 0 : 1;
          }
        }
        l.biases[u] = -w * (positives - 0.5);
      }
    }
    out.layers.push_back(std::move(l));
    out.unit_labels.push_back(units[lv]);
  }

  auto head_layer = new_layer(units[top].size(), 2, net::activation::softmax);
  if (!rules.roots().empty()) {
    const auto root = index_of(top, rules.roots().front());
    link(head_layer, 1, root, w);
    link(head_layer, 0, root, -w);
    head_layer.biases[1] = -w / 2;
    head_layer.biases[0] = w / 2;
  }
  out.layers.push_back(std::move(head_layer));
  out.unit_labels.emplace_back(classes.begin(), classes.end());

  for (auto& l : out.layers) {
    for (auto& v : l.weights.data()) v += uniform(rng, -s, s);
    for (auto& b : l.biases) b += uniform(rng, -s, s);
    if (cfg.freeze_knowledge_links) l.frozen = l.knowledge;
  }
  out.input_names.assign(features.begin(), features.end());
  out.output_names.assign(classes.begin(), classes.end());
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// logic check

struct logic_violation {
  std::string unit;
  rules::assignment inputs;
  bool expected = false;
  double activation = 0.0;
};

/// First unit whose activation disagrees with the boolean semantics, over
/// every assignment of the rule inputs (other features held at 0).
inline std::optional<logic_violation> find_logic_violation(const net::network& net,
                                                           const rules::rule_set& rules,
                                                           double activation_high = 0.85,
                                                           double activation_low = 0.15) {
  const auto& inputs = rules.inputs();
  if (inputs.size() > 20) throw error("too many rule inputs for an exhaustive sweep");
  std::vector<std::size_t> columns;
  for (const auto& in : inputs) {
    const auto it = std::find(net.input_names.begin(), net.input_names.end(), in);
    if (it == net.input_names.end()) throw error("network lacks input '" + in + "'");
    columns.push_back(static_cast<std::size_t>(it - net.input_names.begin()));
  }

  const std::uint64_t combos = std::uint64_t{1} << inputs.size();
  std::vector<double> x(net.input_dim());
  for (std::uint64_t bits = 0; bits < combos; ++bits) {
    rules::assignment a;
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const bool v = (bits >> i) & 1U;
      a[inputs[i]] = v;
      x[columns[i]] = v ? 1.0 : 0.0;
    }
    const auto truth = rules::evaluate_boolean(rules, a);
    const auto acts = net::forward(net, x);
    for (std::size_t li = 0; li + 1 < net.layers.size(); ++li)
      for (std::size_t u = 0; u < net.unit_labels[li].size(); ++u) {
        const auto& label = net.unit_labels[li][u];
        std::optional<bool> expected;
        if (const auto it = truth.find(label); it != truth.end()) {
          expected = it->second;
        } else if (const auto relayed = relayed_symbol(label)) {
          if (const auto h = truth.find(*relayed); h != truth.end())
            expected = h->second;
          else if (const auto in = a.find(*relayed); in != a.end())
            expected = in->second;
        }
        if (!expected) continue;
        const double act = acts[li][u];
        if (*expected ? !(act > activation_high) : !(act < activation_low))
          return logic_violation{label, a, *expected, act};
      }
  }
  return std::nullopt;
}

inline bool verify_compiled_logic(const net::network& net, const rules::rule_set& rules,
                                  double activation_high = 0.85, double activation_low = 0.15) {
  if (rules.inputs().size() > 12) throw error("verification supports at most 12 inputs");
  return !find_logic_violation(net, rules, activation_high, activation_low);
}

// ---------------------------------------------------------------------------
// rule extraction

struct rule_term {
  double weight = 0.0;
  std::vector<std::string> antecedents;
  std::vector<std::size_t> sources;  // unit indices in the layer below
};

struct extracted_rule {
  std::string head;
  std::size_t layer = 0;  // index into network::layers
  double threshold = 0.0;
  std::vector<rule_term> terms;
};

struct extracted_rule_set {
  std::vector<extracted_rule> rules;  // top hidden level first, output units last
  double fidelity = 0.0;
};

/// Clusters incoming weights: after sorting, a weight joins the current group
/// when it has the group anchor's sign and lies within `tolerance` relative
/// magnitude of it. Terms come back ordered by decreasing |weight|.
inline std::vector<rule_term> group_weights(std::span<const double> weights,
                                            std::span<const std::string> names,
                                            double tolerance) {
  if (!(tolerance >= 0.0)) throw error("group tolerance must be non-negative");
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] < weights[b]; });

  auto sign = [](double v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); };
  std::vector<std::vector<std::size_t>> groups;
  double anchor = 0.0;
  for (auto i : order) {
    const double v = weights[i];
    if (!groups.empty() && sign(v) == sign(anchor) &&
        std::abs(v - anchor) <= tolerance * std::max(std::abs(v), std::abs(anchor))) {
      groups.back().push_back(i);
    } else {
      groups.push_back({i});
      anchor = v;
    }
  }

  std::vector<rule_term> terms;
  for (auto& g : groups) {
    std::sort(g.begin(), g.end());
    rule_term t;
    double sum = 0.0;
    for (auto i : g) {
      sum += weights[i];
      t.antecedents.push_back(names[i]);
    }
    t.weight = sum / static_cast<double>(g.size());
    t.sources = g;
    terms.push_back(std::move(t));
  }
  std::stable_sort(terms.begin(), terms.end(), [](const rule_term& a, const rule_term& b) {
    if (std::abs(a.weight) != std::abs(b.weight)) return std::abs(a.weight) > std::abs(b.weight);
    return a.sources.front() < b.sources.front();
  });
  return terms;
}

namespace detail {

inline double term_sum(const extracted_rule& r, std::span<const double> below) {
  double s = 0.0;
  for (const auto& t : r.terms) {
    double a = 0.0;
    for (auto src : t.sources) a += below[src];
    s += t.weight * a;
  }
  return s;
}

}  // namespace detail

/// Class index predicted by the rule system: hidden units fire (1) when their
/// weighted term sum exceeds the threshold, and the output unit with the
/// largest margin over its threshold wins.
inline std::size_t rule_system_predict(const extracted_rule_set& rs, std::size_t layer_count,
                                       std::span<const double> input) {
  std::vector<std::vector<const extracted_rule*>> by_layer(layer_count);
  for (const auto& r : rs.rules) by_layer.at(r.layer).push_back(&r);
  std::vector<double> below(input.begin(), input.end());
  for (std::size_t li = 0; li < layer_count; ++li) {
    std::vector<double> cur(by_layer[li].size());
    std::vector<double> margin(cur.size());
    for (std::size_t u = 0; u < cur.size(); ++u) {
      margin[u] = detail::term_sum(*by_layer[li][u], below) - by_layer[li][u]->threshold;
      cur[u] = margin[u] > 0 ? 1.0 : 0.0;
    }
    if (li + 1 == layer_count) return net::argmax(margin);
    below = std::move(cur);
  }
  return 0;
}

inline bool is_labeled(const net::network& net) {
  for (std::size_t li = 0; li + 1 < net.layers.size(); ++li)
    for (const auto& l : net.unit_labels[li])
      if (l.empty()) return false;
  return !net.unit_labels.empty();
}

/// One rule per non-input unit; the threshold is the negated bias. Fidelity
/// is measured on `inputs` (already scaled) against the network's argmax.
inline extracted_rule_set extract_rules(const net::network& net, const net::matrix& inputs,
                                        double group_tolerance = 0.1) {
  net.validate();
  if (!is_labeled(net))
    throw error("network has unlabeled units; rule extraction needs a knowledge-based "
                "network (use LIME explanations for plain networks)");
  if (inputs.rows() == 0) throw error("fidelity is undefined on an empty data set");
  if (inputs.cols() != net.input_dim()) throw error("data width does not match network");

  extracted_rule_set out;
  const std::size_t layers = net.layers.size();
  for (std::size_t step = 0; step < layers; ++step) {
    // top hidden layer first, then down to the first, output layer last
    const std::size_t li = step + 1 < layers ? layers - 2 - step : layers - 1;
    const auto& l = net.layers[li];
    const auto& names = li == 0 ? net.input_names : net.unit_labels[li - 1];
    for (std::size_t u = 0; u < l.outputs(); ++u) {
      extracted_rule r;
      r.head = net.unit_labels[li][u];
      r.layer = li;
      r.threshold = -l.biases[u];
      r.terms = group_weights(l.weights.row(u), names, group_tolerance);
      out.rules.push_back(std::move(r));
    }
  }

  std::size_t agree = 0;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto x = inputs.row(i);
    agree += rule_system_predict(out, layers, x) == net::argmax(net::predict(net, x));
  }
  out.fidelity = static_cast<double>(agree) / static_cast<double>(inputs.rows());
  return out;
}

inline extracted_rule_set extract_rules(const net::network& net, const data::dataset& train,
                                        double group_tolerance = 0.1) {
  return extract_rules(net, train.rows, group_tolerance);
}

inline std::string format_weight(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

/// `head: threshold  w1 * (a,b) + w2 * (c)`, one rule per line, followed by a
/// `%` comment carrying the fidelity.
inline std::string to_text(const extracted_rule_set& rs) {
  std::string out;
  for (const auto& r : rs.rules) {
    out += r.head + ": " + format_weight(r.threshold) + " ";
    for (std::size_t i = 0; i < r.terms.size(); ++i) {
      out += i ? " + " : " ";
      out += format_weight(r.terms[i].weight) + " * (";
      for (std::size_t a = 0; a < r.terms[i].antecedents.size(); ++a)
        out += (a ? "," : "") + r.terms[i].antecedents[a];
      out += ")";
    }
    out += "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%% fidelity: %.6f\n", rs.fidelity);
  return out + buf;
}

inline nlohmann::json to_json(const extracted_rule_set& rs) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : rs.rules) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : r.terms)
      terms.push_back({{"weight", t.weight}, {"antecedents", t.antecedents}});
    rules.push_back(
        {{"head", r.head}, {"layer", r.layer}, {"threshold", r.threshold}, {"terms", terms}});
  }
  return {{"rules", rules}, {"fidelity", rs.fidelity}};
}

// ---------------------------------------------------------------------------
// reliance

/// Mean accuracy drop over `repeats` seeded shuffles of one feature column.
/// `d` must already be in the network's input scale.
inline double permutation_importance(const net::network& net, const data::dataset& d,
                                     std::string_view feature, std::size_t repeats,
                                     std::uint64_t seed) {
  if (repeats < 1) throw error("repeats must be at least 1");
  const auto j = d.feature_index(feature);
  const auto s = data::to_samples(d);
  const double base = net::accuracy(net, s);
  rng_type rng(seed);
  double drop = 0.0;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto shuffled = s;
    auto col = d.column(j);
    shuffle(std::span<double>(col), rng);
    for (std::size_t i = 0; i < d.size(); ++i) shuffled.inputs(i, j) = col[i];
    drop += base - net::accuracy(net, shuffled);
  }
  return drop / static_cast<double>(repeats);
}

}  // namespace nsai::kbann
