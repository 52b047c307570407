// Line-oriented rule file parser and load-time validation.

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "ccic/rbes.hpp"

namespace ccic::rbes {

const PredicateTable& builtin_predicates() {
  static const PredicateTable table = {
      // identity and configuration
      {"self", 1},
      {"site", 1},
      {"site_kind", 2},
      {"section", 2},
      {"loop_section", 3},
      {"measured_var", 3},
      {"actuator_var", 3},
      {"input_var", 3},
      {"produces", 2},
      {"loop_depends", 3},
      {"dependency", 3},
      // detector output
      {"loop_state", 3},
      {"anomaly", 2},
      {"outlier", 5},
      {"low_confidence", 3},
      {"quality_suspect", 2},
      {"alarm", 2},
      {"section_alarm", 2},
      {"resource_avail", 3},
      // operator and link state
      {"isolated", 1},
      {"manual", 2},
      {"validated", 2},
      {"link_health", 3},
      {"command", 3},
      {"command_param", 3},
      {"unknown_command", 2},
      // community layer
      {"site_advisory", 3},
      {"site_missing", 1},
      {"site_link", 2},
      {"community_state", 1},
      {"outlier_site", 1},
      {"impacted", 3},
  };
  return table;
}

namespace {

enum class Tok { ident, var, wildcard, number, string, punct, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  double number = 0.0;
  int col = 1;
};

class LineLexer {
 public:
  LineLexer(const std::string& line, int lineno) : s_(line), line_(lineno) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
      if (i_ >= s_.size() || s_[i_] == '#') break;
      out.push_back(next());
    }
    Token end;
    end.col = static_cast<int>(s_.size()) + 1;
    out.push_back(end);
    return out;
  }

 private:
  static bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  }

  Token next() {
    Token t;
    t.col = static_cast<int>(i_) + 1;
    const char c = s_[i_];
    if (c == '"') {
      ++i_;
      t.kind = Tok::string;
      while (i_ < s_.size() && s_[i_] != '"') {
        if (s_[i_] == '\\' && i_ + 1 < s_.size()) ++i_;
        t.text += s_[i_++];
      }
      if (i_ >= s_.size()) throw ParseError("unterminated string", line_, t.col);
      ++i_;
      return t;
    }
    if (c == '?') {
      ++i_;
      t.kind = Tok::var;
      while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) t.text += s_[i_++];
      if (t.text.empty()) throw ParseError("empty variable name", line_, t.col);
      return t;
    }
    const bool signed_number = (c == '-' || c == '+') && i_ + 1 < s_.size() &&
                               (std::isdigit(static_cast<unsigned char>(s_[i_ + 1])) || s_[i_ + 1] == '.');
    if (std::isdigit(static_cast<unsigned char>(c)) || signed_number) {
      std::size_t used = 0;
      try {
        t.number = std::stod(s_.substr(i_), &used);
      } catch (const std::exception&) {
        throw ParseError("malformed number", line_, t.col);
      }
      t.kind = Tok::number;
      t.text = s_.substr(i_, used);
      i_ += used;
      if (i_ < s_.size() && ident_char(s_[i_])) throw ParseError("malformed number", line_, t.col);
      return t;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i_ < s_.size() && ident_char(s_[i_])) t.text += s_[i_++];
      t.kind = t.text == "_" ? Tok::wildcard : Tok::ident;
      return t;
    }
    for (const char* op : {"<=", ">=", "==", "!="}) {
      if (s_.compare(i_, 2, op) == 0) {
        t.kind = Tok::punct;
        t.text = op;
        i_ += 2;
        return t;
      }
    }
    if (std::string("()[],/:=<>").find(c) != std::string::npos) {
      t.kind = Tok::punct;
      t.text = std::string(1, c);
      ++i_;
      return t;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", line_, t.col);
  }

  const std::string& s_;
  std::size_t i_ = 0;
  int line_;
};

struct Cursor {
  std::vector<Token> toks;
  std::size_t pos = 0;
  int line = 0;

  const Token& peek() const { return toks[pos]; }
  bool at_end() const { return toks[pos].kind == Tok::end; }
  const Token& take() {
    const Token& t = toks[pos];
    if (t.kind != Tok::end) ++pos;
    return t;
  }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line, peek().col); }
  bool is_punct(const char* p) const { return peek().kind == Tok::punct && peek().text == p; }
  void expect_punct(const char* p) {
    if (!is_punct(p)) fail(std::string("expected '") + p + "'");
    take();
  }
  std::string expect_ident(const char* what) {
    if (peek().kind != Tok::ident) fail(std::string("expected ") + what);
    return take().text;
  }
  std::string expect_string(const char* what) {
    if (peek().kind != Tok::string) fail(std::string("expected quoted ") + what);
    return take().text;
  }
  void expect_end() {
    if (!at_end()) fail("unexpected '" + peek().text + "'");
  }
};

Term parse_term(Cursor& c) {
  const Token& t = c.peek();
  switch (t.kind) {
    case Tok::var: return Variable{c.take().text};
    case Tok::wildcard: c.take(); return Wildcard{};
    case Tok::number: return Atom{c.take().number};
    case Tok::ident: return Atom{c.take().text};
    case Tok::string: return Atom{c.take().text};
    default: c.fail("expected a term");
  }
}

struct ParsedPattern {
  std::string predicate;
  std::vector<Term> terms;
  int col = 1;
};

ParsedPattern parse_pattern(Cursor& c) {
  ParsedPattern p;
  p.col = c.peek().col;
  p.predicate = c.expect_ident("predicate name");
  if (!c.is_punct("(")) return p;
  c.take();
  if (c.is_punct(")")) {
    c.take();
    return p;
  }
  while (true) {
    p.terms.push_back(parse_term(c));
    if (c.is_punct(")")) {
      c.take();
      return p;
    }
    c.expect_punct(",");
  }
}

std::optional<CompareOp> compare_op(const std::string& s) {
  if (s == "<") return CompareOp::lt;
  if (s == "<=") return CompareOp::le;
  if (s == ">") return CompareOp::gt;
  if (s == ">=") return CompareOp::ge;
  if (s == "==") return CompareOp::eq;
  if (s == "!=") return CompareOp::ne;
  return std::nullopt;
}

// Variable occurrences, with the column each was seen at (for error reporting).
struct VarUse {
  std::string name;
  int col;
};

void collect(const Term& t, int col, std::vector<VarUse>& out) {
  if (const auto* v = std::get_if<Variable>(&t)) out.push_back({v->name, col});
}

std::vector<std::string> template_vars(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '?') continue;
    std::string name;
    std::size_t j = i + 1;
    while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) name += text[j++];
    if (!name.empty()) out.push_back(name);
    i = j - 1;
  }
  return out;
}

class Parser {
 public:
  explicit Parser(const PredicateTable& predicates) { set_.predicates = predicates; }

  RuleSet run(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      Cursor c{LineLexer(line, lineno).run(), 0, lineno};
      if (c.at_end()) continue;
      statement(c);
    }
    if (open_) throw ParseError("rule '" + current_.rule_id + "' is missing 'end'", lineno + 1, 1);
    check_stratification();
    return std::move(set_);
  }

 private:
  void statement(Cursor& c) {
    const std::string kw = c.expect_ident("keyword");
    if (kw == "pred") return declare(c);
    if (kw == "rule") return begin_rule(c);
    if (!open_) throw ParseError("'" + kw + "' outside a rule block", c.line, 1);
    if (kw == "if") return condition(c);
    if (kw == "then") return action(c);
    if (kw == "end") return end_rule(c);
    throw ParseError("unknown keyword '" + kw + "'", c.line, 1);
  }

  void declare(Cursor& c) {
    if (open_) c.fail("'pred' inside a rule block");
    const std::string name = c.expect_ident("predicate name");
    c.expect_punct("/");
    if (c.peek().kind != Tok::number) c.fail("expected arity");
    const double n = c.take().number;
    if (n < 0 || n != static_cast<double>(static_cast<std::size_t>(n))) c.fail("arity must be a non-negative integer");
    c.expect_end();
    const auto arity = static_cast<std::size_t>(n);
    auto [it, inserted] = set_.predicates.emplace(name, arity);
    if (!inserted && it->second != arity)
      throw ParseError("predicate '" + name + "' redeclared with arity " + std::to_string(arity) + " (was " +
                           std::to_string(it->second) + ")",
                       c.line, 1);
  }

  void begin_rule(Cursor& c) {
    if (open_) c.fail("rule '" + current_.rule_id + "' is missing 'end'");
    current_ = Rule{};
    positive_vars_.clear();
    deferred_.clear();
    current_.line = c.line;
    current_.rule_id = c.expect_ident("rule id");
    if (!ids_.insert(current_.rule_id).second)
      throw ParseError("duplicate rule id '" + current_.rule_id + "'", c.line, 6);
    if (!c.at_end()) {
      const std::string kw = c.expect_ident("'priority'");
      if (kw != "priority") c.fail("expected 'priority'");
      if (c.peek().kind != Tok::number) c.fail("expected priority value");
      const double p = c.take().number;
      if (p != static_cast<double>(static_cast<int>(p))) c.fail("priority must be an integer");
      current_.priority = static_cast<int>(p);
    }
    c.expect_end();
    open_ = true;
  }

  void check_pattern(const ParsedPattern& p, int line) {
    auto it = set_.predicates.find(p.predicate);
    if (it == set_.predicates.end()) throw ParseError("unknown predicate '" + p.predicate + "'", line, p.col);
    if (it->second != p.terms.size())
      throw ParseError("predicate '" + p.predicate + "' takes " + std::to_string(it->second) + " arguments, got " +
                           std::to_string(p.terms.size()),
                       line, p.col);
  }

  void condition(Cursor& c) {
    if (!current_.actions.empty()) c.fail("conditions must precede actions");
    bool negated = false;
    if (c.peek().kind == Tok::ident && c.peek().text == "not") {
      c.take();
      negated = true;
    }
    // comparison: term OP term
    if (!negated && (c.peek().kind != Tok::ident || (c.toks.size() > c.pos + 1 && c.toks[c.pos + 1].kind == Tok::punct &&
                                                     compare_op(c.toks[c.pos + 1].text)))) {
      CompareCondition cc;
      const int lcol = c.peek().col;
      cc.lhs = parse_term(c);
      if (c.peek().kind != Tok::punct || !compare_op(c.peek().text)) c.fail("expected comparison operator");
      cc.op = *compare_op(c.take().text);
      const int rcol = c.peek().col;
      cc.rhs = parse_term(c);
      c.expect_end();
      if (std::holds_alternative<Wildcard>(cc.lhs) || std::holds_alternative<Wildcard>(cc.rhs))
        throw ParseError("wildcard in comparison", c.line, lcol);
      std::vector<VarUse> uses;
      collect(cc.lhs, lcol, uses);
      collect(cc.rhs, rcol, uses);
      deferred_.push_back({uses, c.line});
      current_.conditions.emplace_back(std::move(cc));
      return;
    }
    ParsedPattern p = parse_pattern(c);
    c.expect_end();
    check_pattern(p, c.line);
    std::vector<VarUse> uses;
    for (const auto& t : p.terms) collect(t, p.col, uses);
    if (negated) {
      deferred_.push_back({uses, c.line});
      negated_.insert(p.predicate);
    } else {
      for (const auto& u : uses) positive_vars_.insert(u.name);
    }
    current_.conditions.emplace_back(PatternCondition{negated, p.predicate, std::move(p.terms)});
  }

  void require_bound(const std::vector<VarUse>& uses, int line, const char* where) {
    for (const auto& u : uses)
      if (!positive_vars_.count(u.name))
        throw ParseError(std::string("unbound variable '?") + u.name + "' in " + where + " of rule '" +
                             current_.rule_id + "'",
                         line, u.col);
  }

  void action(Cursor& c) {
    bool has_positive = false;
    for (const auto& cond : current_.conditions)
      if (const auto* p = std::get_if<PatternCondition>(&cond); p && !p->negated) has_positive = true;
    if (!has_positive) c.fail("rule '" + current_.rule_id + "' needs at least one positive condition before 'then'");
    if (!deferred_.empty()) {
      for (const auto& [uses, line] : deferred_) require_bound(uses, line, "a condition");
      deferred_.clear();
    }
    const std::string kind = c.expect_ident("action kind (assert, advise, command)");
    if (kind == "assert") return assert_action(c);
    if (kind == "advise") return advise_action(c);
    if (kind == "command") return command_action(c);
    throw ParseError("unknown action '" + kind + "'", c.line, 6);
  }

  void assert_action(Cursor& c) {
    ParsedPattern p = parse_pattern(c);
    c.expect_end();
    check_pattern(p, c.line);
    std::vector<VarUse> uses;
    for (const auto& t : p.terms) {
      if (std::holds_alternative<Wildcard>(t)) throw ParseError("wildcard in asserted fact", c.line, p.col);
      collect(t, p.col, uses);
    }
    require_bound(uses, c.line, "an action");
    asserted_.insert(p.predicate);
    current_.actions.emplace_back(AssertAction{p.predicate, std::move(p.terms)});
  }

  void require_template(const std::string& text, int line, int col) {
    std::vector<VarUse> uses;
    for (const auto& v : template_vars(text)) uses.push_back({v, col});
    require_bound(uses, line, "a message");
  }

  Term bound_term(Cursor& c, const char* what) {
    const int col = c.peek().col;
    if (c.peek().kind == Tok::wildcard) c.fail(std::string("wildcard as ") + what);
    Term t = parse_term(c);
    std::vector<VarUse> uses;
    collect(t, col, uses);
    require_bound(uses, c.line, "an action");
    return t;
  }

  void advise_action(Cursor& c) {
    AdviseAction a;
    const std::string sev = c.expect_ident("severity");
    try {
      a.severity = severity_from(sev);
    } catch (const Error&) {
      c.fail("unknown severity '" + sev + "'");
    }
    a.site = bound_term(c, "site");
    a.category = c.expect_ident("advisory category");
    c.expect_punct("[");
    while (!c.is_punct("]")) {
      a.subject_vars.push_back(bound_term(c, "subject variable"));
      if (!c.is_punct("]")) c.expect_punct(",");
    }
    c.take();
    int col = c.peek().col;
    a.message = c.expect_string("message");
    require_template(a.message, c.line, col);
    while (!c.at_end()) {
      const std::string kw = c.expect_ident("'suggest'");
      if (kw != "suggest") c.fail("expected 'suggest'");
      SuggestionTemplate s;
      if (c.peek().kind == Tok::ident) {
        s.effect = c.take().text;
        if (c.is_punct(":")) {
          c.take();
          s.effect_arg = bound_term(c, "suggestion argument");
        }
      }
      col = c.peek().col;
      s.text = c.expect_string("suggestion text");
      require_template(s.text, c.line, col);
      a.suggestions.push_back(std::move(s));
    }
    if (a.severity == Severity::critical && a.suggestions.empty())
      throw ParseError("critical advice in rule '" + current_.rule_id + "' must carry a suggestion", c.line, 1);
    current_.actions.emplace_back(std::move(a));
  }

  void command_action(Cursor& c) {
    CommandAction a;
    a.kind = c.expect_ident("command kind");
    a.target = bound_term(c, "command target");
    while (!c.at_end()) {
      std::string key = c.expect_ident("parameter name");
      c.expect_punct("=");
      a.params.emplace_back(std::move(key), bound_term(c, "parameter value"));
    }
    current_.actions.emplace_back(std::move(a));
  }

  void end_rule(Cursor& c) {
    c.expect_end();
    if (current_.actions.empty()) c.fail("rule '" + current_.rule_id + "' has no actions");
    set_.rules.push_back(std::move(current_));
    current_ = Rule{};
    open_ = false;
  }

  void check_stratification() const {
    for (const auto& p : negated_) {
      if (!asserted_.count(p)) continue;
      for (const auto& r : set_.rules)
        for (const auto& cond : r.conditions)
          if (const auto* pc = std::get_if<PatternCondition>(&cond); pc && pc->negated && pc->predicate == p)
            throw ParseError("rule '" + r.rule_id + "' negates '" + p + "', which other rules assert", r.line, 1);
    }
  }

  RuleSet set_;
  Rule current_;
  bool open_ = false;
  std::set<std::string> ids_;
  std::set<std::string> positive_vars_;
  std::vector<std::pair<std::vector<VarUse>, int>> deferred_;
  std::set<std::string> negated_;
  std::set<std::string> asserted_;
};

}  // namespace

RuleSet load_rules(const std::string& text, const PredicateTable& predicates) {
  return Parser(predicates).run(text);
}

RuleSet load_rules_file(const std::string& path, const PredicateTable& predicates) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open rule file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return load_rules(ss.str(), predicates);
  } catch (const ParseError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace ccic::rbes
