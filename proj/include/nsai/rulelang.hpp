#pragma once

// Propositional Horn-clause knowledge: parsing, validation, disjunct
// elimination and a boolean reference evaluator.
//
//   Final_score :- CT_concepts, CT_skills.
//   CT_concepts :- Conditional, not Idle.   % comments run to end of line

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nsai/error.hpp"

namespace nsai::rules {

struct literal {
  std::string symbol;
  bool negated = false;

  friend bool operator==(const literal&, const literal&) = default;
};

struct horn_clause {
  std::string head;
  std::vector<literal> body;

  friend bool operator==(const horn_clause&, const horn_clause&) = default;
};

enum class rule_error_kind {
  syntax,
  cycle,
  empty_body,
  duplicate_clause,
  reserved_name,
  missing_input,
};

struct rule_error : error {
  rule_error(rule_error_kind kind, const std::string& what, std::size_t line = 0,
             std::size_t column = 0)
      : error(line == 0 ? what
                        : what + " at line " + std::to_string(line) +
                              ", column " + std::to_string(column)),
        kind(kind),
        line(line),
        column(column) {}

  rule_error_kind kind;
  std::size_t line;
  std::size_t column;
};

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  const auto c0 = static_cast<unsigned char>(s[0]);
  if (!(std::isalpha(c0) || c0 == '_')) return false;
  return std::all_of(s.begin() + 1, s.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u == '_';
  });
}

namespace detail {

inline bool has_numbered_suffix(std::string_view s, std::string_view marker) {
  const auto pos = s.rfind(marker);
  if (pos == std::string_view::npos || pos == 0) return false;
  const auto digits = s.substr(pos + marker.size());
  return !digits.empty() &&
         std::all_of(digits.begin(), digits.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

}  // namespace detail

/// Names ending in `__d<N>` (disjunct intermediates) or `__r<N>` (level relays)
/// are generated internally and cannot appear in knowledge files.
inline bool is_reserved_name(std::string_view s) {
  return detail::has_numbered_suffix(s, "__d") ||
         detail::has_numbered_suffix(s, "__r");
}

inline std::string disjunct_name(std::string_view head, std::size_t index) {
  return std::string(head) + "__d" + std::to_string(index);
}

/// A validated, acyclic set of clauses. `roots` and `inputs` are derived and
/// listed in order of first appearance.
class rule_set {
 public:
  rule_set() = default;

  /// Validates and derives roots/inputs. `disjunctive` names heads whose
  /// clauses are alternatives produced by rewrite_disjuncts.
  explicit rule_set(std::vector<horn_clause> clauses,
                    std::set<std::string> disjunctive = {})
      : clauses_(std::move(clauses)), disjunctive_(std::move(disjunctive)) {
    validate();
  }

  const std::vector<horn_clause>& clauses() const { return clauses_; }
  const std::vector<std::string>& roots() const { return roots_; }
  const std::vector<std::string>& inputs() const { return inputs_; }
  const std::set<std::string>& disjunctive_heads() const { return disjunctive_; }

  /// Distinct heads in order of first appearance.
  const std::vector<std::string>& heads() const { return heads_; }

  bool is_head(std::string_view s) const {
    return std::find(heads_.begin(), heads_.end(), s) != heads_.end();
  }
  bool is_input(std::string_view s) const {
    return std::find(inputs_.begin(), inputs_.end(), s) != inputs_.end();
  }
  bool is_disjunctive(const std::string& head) const {
    return disjunctive_.count(head) != 0;
  }

  std::size_t clause_count(std::string_view head) const {
    return static_cast<std::size_t>(
        std::count_if(clauses_.begin(), clauses_.end(),
                      [&](const horn_clause& c) { return c.head == head; }));
  }

  /// Heads ordered so every head follows the heads it depends on; ties keep
  /// first-appearance order.
  const std::vector<std::string>& topological_heads() const { return topo_; }

  friend bool operator==(const rule_set& a, const rule_set& b) {
    return a.clauses_ == b.clauses_ && a.disjunctive_ == b.disjunctive_;
  }

 private:
  void validate() {
    std::set<std::string> head_set;
    for (const auto& c : clauses_) {
      if (!is_identifier(c.head))
        throw rule_error(rule_error_kind::syntax, "invalid head '" + c.head + "'");
      if (c.body.empty())
        throw rule_error(rule_error_kind::empty_body,
                         "clause for '" + c.head + "' has an empty body");
      for (const auto& l : c.body) {
        if (!is_identifier(l.symbol))
          throw rule_error(rule_error_kind::syntax,
                           "invalid symbol '" + l.symbol + "'");
        if (l.symbol == c.head)
          throw rule_error(rule_error_kind::cycle,
                           "'" + c.head + "' depends on itself");
      }
      if (head_set.insert(c.head).second) heads_.push_back(c.head);
    }
    for (std::size_t i = 0; i < clauses_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (clauses_[i] == clauses_[j])
          throw rule_error(rule_error_kind::duplicate_clause,
                           "duplicate clause for '" + clauses_[i].head + "'");
    for (const auto& d : disjunctive_)
      if (!head_set.count(d))
        throw rule_error(rule_error_kind::syntax,
                         "disjunctive mark on unknown head '" + d + "'");

    std::set<std::string> used_as_antecedent;
    std::set<std::string> seen_inputs;
    for (const auto& c : clauses_)
      for (const auto& l : c.body) {
        used_as_antecedent.insert(l.symbol);
        if (!head_set.count(l.symbol) && seen_inputs.insert(l.symbol).second)
          inputs_.push_back(l.symbol);
      }
    for (const auto& h : heads_)
      if (!used_as_antecedent.count(h)) roots_.push_back(h);

    topo_sort();
  }

  void topo_sort() {
    // Kahn's algorithm over head -> head dependencies.
    std::unordered_map<std::string, std::set<std::string>> deps;
    for (const auto& h : heads_) deps[h];
    for (const auto& c : clauses_)
      for (const auto& l : c.body)
        if (deps.count(l.symbol)) deps[c.head].insert(l.symbol);

    std::set<std::string> done;
    while (topo_.size() < heads_.size()) {
      bool progressed = false;
      for (const auto& h : heads_) {
        if (done.count(h)) continue;
        const auto& d = deps[h];
        if (std::all_of(d.begin(), d.end(),
                        [&](const std::string& s) { return done.count(s) != 0; })) {
          topo_.push_back(h);
          done.insert(h);
          progressed = true;
        }
      }
      if (!progressed) {
        std::string members;
        for (const auto& h : heads_)
          if (!done.count(h)) members += (members.empty() ? "" : ", ") + h;
        throw rule_error(rule_error_kind::cycle,
                         "cyclic dependency among {" + members + "}");
      }
    }
  }

  std::vector<horn_clause> clauses_;
  std::set<std::string> disjunctive_;
  std::vector<std::string> heads_;
  std::vector<std::string> roots_;
  std::vector<std::string> inputs_;
  std::vector<std::string> topo_;
};

namespace detail {

class scanner {
 public:
  explicit scanner(std::string_view text) : text_(text) {}

  void skip_space() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '%') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  std::string identifier() {
    skip_space();
    const auto c0 = static_cast<unsigned char>(peek());
    if (!(std::isalpha(c0) || c0 == '_')) fail("expected identifier");
    std::string out;
    while (pos_ < text_.size()) {
      const auto u = static_cast<unsigned char>(text_[pos_]);
      if (!(std::isalnum(u) || u == '_')) break;
      out.push_back(text_[pos_]);
      advance();
    }
    return out;
  }

  void expect(std::string_view token) {
    skip_space();
    if (text_.substr(pos_, token.size()) != token)
      fail("expected '" + std::string(token) + "'");
    for (std::size_t i = 0; i < token.size(); ++i) advance();
  }

  bool accept(char c) {
    skip_space();
    if (peek() != c) return false;
    advance();
    return true;
  }

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

  [[noreturn]] void fail(const std::string& msg,
                         rule_error_kind kind = rule_error_kind::syntax) const {
    throw rule_error(kind, msg, line_, column_);
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t column_ = 1;
};

}  // namespace detail

/// Parses a knowledge file. Clause order is preserved.
inline rule_set parse_rules(std::string_view text) {
  detail::scanner in(text);
  std::vector<horn_clause> clauses;
  std::vector<std::pair<std::size_t, std::size_t>> positions;

  auto checked_name = [&](std::string name) {
    if (is_reserved_name(name))
      in.fail("identifier '" + name + "' uses a reserved suffix",
              rule_error_kind::reserved_name);
    return name;
  };

  while (!in.at_end()) {
    positions.emplace_back(in.line(), in.column());
    horn_clause clause;
    clause.head = in.identifier();
    if (clause.head == "not") in.fail("'not' is reserved");
    clause.head = checked_name(std::move(clause.head));
    in.expect(":-");
    in.skip_space();
    if (in.peek() == '.')
      in.fail("clause for '" + clause.head + "' has an empty body",
              rule_error_kind::empty_body);
    do {
      literal lit;
      std::string word = in.identifier();
      if (word == "not") {
        lit.negated = true;
        word = in.identifier();
        if (word == "not") in.fail("'not' is reserved");
      }
      lit.symbol = checked_name(std::move(word));
      clause.body.push_back(std::move(lit));
    } while (in.accept(','));
    in.expect(".");

    for (std::size_t j = 0; j < clauses.size(); ++j)
      if (clauses[j] == clause)
        throw rule_error(rule_error_kind::duplicate_clause,
                         "duplicate clause for '" + clause.head + "'",
                         positions.back().first, positions.back().second);
    clauses.push_back(std::move(clause));
  }
  return rule_set(std::move(clauses));
}

inline std::string to_string(const horn_clause& c) {
  std::string out = c.head + " :- ";
  for (std::size_t i = 0; i < c.body.size(); ++i) {
    if (i) out += ", ";
    if (c.body[i].negated) out += "not ";
    out += c.body[i].symbol;
  }
  return out + ".";
}

/// One clause per line, re-parseable by parse_rules when no generated names
/// are present.
inline std::string to_string(const rule_set& rules) {
  std::string out;
  for (const auto& c : rules.clauses()) out += to_string(c) + "\n";
  return out;
}

/// Replaces every head defined by k > 1 clauses with k fresh intermediates
/// `<head>__d1..k` plus an OR over them. Already-disjunctive heads are kept,
/// which makes the rewrite idempotent.
inline rule_set rewrite_disjuncts(const rule_set& rules) {
  std::vector<horn_clause> out;
  std::set<std::string> disjunctive = rules.disjunctive_heads();
  std::set<std::string> emitted;

  for (const auto& c : rules.clauses()) {
    const auto k = rules.clause_count(c.head);
    if (k == 1 || rules.is_disjunctive(c.head)) {
      out.push_back(c);
      continue;
    }
    if (!emitted.insert(c.head).second) continue;

    std::vector<const horn_clause*> group;
    for (const auto& other : rules.clauses())
      if (other.head == c.head) group.push_back(&other);
    for (std::size_t i = 0; i < group.size(); ++i)
      out.push_back({c.head, {{disjunct_name(c.head, i + 1), false}}});
    for (std::size_t i = 0; i < group.size(); ++i)
      out.push_back({disjunct_name(c.head, i + 1), group[i]->body});
    disjunctive.insert(c.head);
  }
  return rule_set(std::move(out), std::move(disjunctive));
}

using assignment = std::map<std::string, bool>;

/// Reference semantics: a head holds iff some clause has every positive
/// antecedent true and every negated antecedent false.
inline assignment evaluate_boolean(const rule_set& rules, const assignment& inputs) {
  assignment values;
  for (const auto& in : rules.inputs()) {
    const auto it = inputs.find(in);
    if (it == inputs.end())
      throw rule_error(rule_error_kind::missing_input,
                       "no value for input symbol '" + in + "'");
    values[in] = it->second;
  }
  assignment heads;
  for (const auto& h : rules.topological_heads()) {
    bool any = false;
    for (const auto& c : rules.clauses()) {
      if (c.head != h) continue;
      const bool holds = std::all_of(c.body.begin(), c.body.end(), [&](const literal& l) {
        return values.at(l.symbol) != l.negated;
      });
      if (holds) {
        any = true;
        break;
      }
    }
    values[h] = any;
    heads[h] = any;
  }
  return heads;
}

}  // namespace nsai::rules
