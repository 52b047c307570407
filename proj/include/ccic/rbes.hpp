#pragma once

// Forward-chaining rule engine shared by the local and community layers.
//
// Working memory only grows during a run: no retraction, each (rule,
// binding) pair fires at most once, and negation may only test predicates
// that no rule asserts, so the fixed point does not depend on firing order.
// The rule file grammar is documented in docs/rule_format.md.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/common.hpp"

namespace ccic::rbes {

/// Fact argument: a number or a symbol (identifier / enum value).
using Atom = std::variant<double, std::string>;

std::string to_string(const Atom& a);
Atom atom_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Atom& a);

enum class FactSource { detector, peer, uplink, command, rule, config };

std::string to_string(FactSource s);
FactSource fact_source_from(const std::string& s);

struct Fact {
  std::string predicate;
  std::vector<Atom> args;
  SimTime sim_time = 0.0;
  FactSource source = FactSource::detector;

  /// Identity ignores time and source.
  bool same_as(const Fact& o) const { return predicate == o.predicate && args == o.args; }
  std::string key() const;
};

nlohmann::json to_json(const Fact& f);
Fact fact_from_json(const nlohmann::json& j);

Fact make_fact(std::string predicate, std::vector<Atom> args, FactSource source = FactSource::detector,
               SimTime t = 0.0);

// ---------------------------------------------------------------------------
// Rules

struct Variable {
  std::string name;  // without the leading '?'
  bool operator==(const Variable&) const = default;
};
struct Wildcard {
  bool operator==(const Wildcard&) const = default;
};
using Term = std::variant<Atom, Variable, Wildcard>;

struct PatternCondition {
  bool negated = false;
  std::string predicate;
  std::vector<Term> terms;
};

enum class CompareOp { lt, le, gt, ge, eq, ne };

struct CompareCondition {
  Term lhs;
  CompareOp op = CompareOp::eq;
  Term rhs;
};

using Condition = std::variant<PatternCondition, CompareCondition>;

enum class Severity { info, warning, critical };
std::string to_string(Severity s);
Severity severity_from(const std::string& s);

struct SuggestionTemplate {
  std::string text;
  std::string effect;  // empty, or an operator-action effect such as "manual"
  std::optional<Term> effect_arg;
};

struct AssertAction {
  std::string predicate;
  std::vector<Term> terms;
};

struct AdviseAction {
  Severity severity = Severity::info;
  Term site;
  std::string category;
  std::vector<Term> subject_vars;
  std::string message;
  std::vector<SuggestionTemplate> suggestions;
};

struct CommandAction {
  std::string kind;
  Term target;
  std::vector<std::pair<std::string, Term>> params;
};

using Action = std::variant<AssertAction, AdviseAction, CommandAction>;

struct Rule {
  std::string rule_id;
  int priority = 0;
  std::vector<Condition> conditions;
  std::vector<Action> actions;
  int line = 0;
};

using PredicateTable = std::map<std::string, std::size_t>;  // name -> arity

/// Vocabulary produced by the local and community nodes.
const PredicateTable& builtin_predicates();

struct RuleSet {
  std::vector<Rule> rules;
  PredicateTable predicates;
};

/// Parses and validates rule text. Errors: ParseError with line/column for
/// syntax, unbound variables, unknown predicates, arity mismatches, duplicate
/// ids, negation over derived predicates, critical advice with no suggestion.
RuleSet load_rules(const std::string& text, const PredicateTable& predicates = builtin_predicates());
RuleSet load_rules_file(const std::string& path, const PredicateTable& predicates = builtin_predicates());

// ---------------------------------------------------------------------------
// Inference

using Bindings = std::map<std::string, Atom>;

struct Suggestion {
  std::string text;
  std::string effect;
  std::string effect_arg;
};

enum class AckState { fresh, acknowledged, actioned };
std::string to_string(AckState s);

struct Advisory {
  std::string advisory_id;
  SiteId site_id;
  Severity severity = Severity::info;
  std::string category;
  std::vector<VarId> subject_vars;
  std::string message;
  std::vector<Suggestion> suggested_actions;
  std::vector<std::string> triggering_rules;
  SimTime sim_time = 0.0;
  AckState ack_state = AckState::fresh;
  bool remote_input = false;  // proof touches a peer or uplink fact
  std::string episode_key;     // rule id plus symbolic bindings; numbers excluded
  std::size_t firing = std::numeric_limits<std::size_t>::max();
};

nlohmann::json to_json(const Advisory& a);
Advisory advisory_from_json(const nlohmann::json& j);

struct CommunityAction {
  std::string kind;
  SiteId target_site;
  std::map<std::string, std::string> params;
  std::string rule_id;
  std::size_t firing = std::numeric_limits<std::size_t>::max();
};

struct Firing {
  std::string rule_id;
  Bindings bindings;
  std::vector<std::size_t> matched_facts;  // indices into InferenceResult::facts
};

struct InferenceOptions {
  std::size_t max_firings = 10000;
  bool trace = true;
  SimTime now = 0.0;
};

struct InferenceResult {
  std::vector<Fact> facts;  // canonical initial facts, then derived facts in assertion order
  std::size_t initial_count = 0;
  std::vector<Advisory> advisories;
  std::vector<CommunityAction> actions;
  std::vector<Firing> trace;  // every firing, in order (empty when tracing is off)
  std::vector<std::size_t> asserted_by;  // per fact: firing index, or npos for initial facts
  std::size_t firings = 0;
  bool traced = false;

  std::vector<Fact> derived() const {
    return {facts.begin() + static_cast<std::ptrdiff_t>(initial_count), facts.end()};
  }
};

/// Fires rules to a fixed point. Agenda order: priority descending, rule id
/// ascending, then the matched fact indices. Throws Error with a firing trace
/// when max_firings is exceeded.
InferenceResult infer(const RuleSet& rules, std::vector<Fact> facts, const InferenceOptions& options = {});

/// Proof chain for an advisory: the firings that led to it, in firing order.
std::vector<Firing> explain(const InferenceResult& result, const Advisory& advisory);

}  // namespace ccic::rbes
