#include "ccic/rbes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace ccic::rbes {

using nlohmann::json;

namespace {
constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
}

std::string to_string(const Atom& a) {
  if (const auto* s = std::get_if<std::string>(&a)) return *s;
  const double v = std::get<double>(a);
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Atom atom_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw ConfigError("fact argument must be a number or a string");
}

json to_json(const Atom& a) {
  if (const auto* s = std::get_if<std::string>(&a)) return *s;
  return std::get<double>(a);
}

std::string to_string(FactSource s) {
  switch (s) {
    case FactSource::detector: return "detector";
    case FactSource::peer: return "peer";
    case FactSource::uplink: return "uplink";
    case FactSource::command: return "command";
    case FactSource::rule: return "rule";
    case FactSource::config: return "config";
  }
  return "detector";
}

FactSource fact_source_from(const std::string& s) {
  for (auto v : {FactSource::detector, FactSource::peer, FactSource::uplink, FactSource::command, FactSource::rule,
                 FactSource::config})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown fact source '" + s + "'");
}

std::string Fact::key() const {
  std::string k = predicate + "(";
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (i) k += ",";
    k += std::holds_alternative<double>(args[i]) ? "#" : "";
    k += to_string(args[i]);
  }
  return k + ")";
}

json to_json(const Fact& f) {
  json args = json::array();
  for (const auto& a : f.args) args.push_back(to_json(a));
  return {{"predicate", f.predicate}, {"args", args}, {"sim_time", f.sim_time}, {"source", to_string(f.source)}};
}

Fact fact_from_json(const json& j) {
  Fact f;
  f.predicate = j.at("predicate").get<std::string>();
  for (const auto& a : j.at("args")) f.args.push_back(atom_from_json(a));
  f.sim_time = j.value("sim_time", 0.0);
  f.source = fact_source_from(j.value("source", std::string("detector")));
  return f;
}

Fact make_fact(std::string predicate, std::vector<Atom> args, FactSource source, SimTime t) {
  return Fact{std::move(predicate), std::move(args), t, source};
}

std::string to_string(Severity s) {
  switch (s) {
    case Severity::info: return "info";
    case Severity::warning: return "warning";
    case Severity::critical: return "critical";
  }
  return "info";
}

Severity severity_from(const std::string& s) {
  if (s == "info") return Severity::info;
  if (s == "warning") return Severity::warning;
  if (s == "critical") return Severity::critical;
  throw ConfigError("unknown severity '" + s + "'");
}

std::string to_string(AckState s) {
  switch (s) {
    case AckState::fresh: return "new";
    case AckState::acknowledged: return "acknowledged";
    case AckState::actioned: return "actioned";
  }
  return "new";
}

namespace {
AckState ack_state_from(const std::string& s) {
  if (s == "new") return AckState::fresh;
  if (s == "acknowledged") return AckState::acknowledged;
  if (s == "actioned") return AckState::actioned;
  throw ConfigError("unknown ack_state '" + s + "'");
}
}  // namespace

json to_json(const Advisory& a) {
  json texts = json::array();
  json detail = json::array();
  for (const auto& s : a.suggested_actions) {
    texts.push_back(s.text);
    detail.push_back({{"text", s.text}, {"effect", s.effect}, {"arg", s.effect_arg}});
  }
  return {{"advisory_id", a.advisory_id},
          {"site_id", a.site_id},
          {"severity", to_string(a.severity)},
          {"category", a.category},
          {"subject_vars", a.subject_vars},
          {"message", a.message},
          {"suggested_actions", texts},
          {"suggestions", detail},
          {"triggering_rules", a.triggering_rules},
          {"sim_time", a.sim_time},
          {"ack_state", to_string(a.ack_state)},
          {"remote_input", a.remote_input}};
}

Advisory advisory_from_json(const json& j) {
  Advisory a;
  a.advisory_id = j.at("advisory_id").get<std::string>();
  a.site_id = j.at("site_id").get<std::string>();
  a.severity = severity_from(j.at("severity").get<std::string>());
  a.category = j.value("category", std::string());
  a.subject_vars = j.value("subject_vars", std::vector<std::string>{});
  a.message = j.at("message").get<std::string>();
  if (j.contains("suggestions")) {
    for (const auto& s : j.at("suggestions"))
      a.suggested_actions.push_back({s.at("text").get<std::string>(), s.value("effect", std::string()),
                                     s.value("arg", std::string())});
  } else {
    for (const auto& s : j.value("suggested_actions", std::vector<std::string>{})) a.suggested_actions.push_back({s, "", ""});
  }
  a.triggering_rules = j.at("triggering_rules").get<std::vector<std::string>>();
  if (a.triggering_rules.empty()) throw ConfigError("advisory without triggering rules");
  a.sim_time = j.value("sim_time", 0.0);
  a.ack_state = ack_state_from(j.value("ack_state", std::string("new")));
  a.remote_input = j.value("remote_input", false);
  return a;
}

namespace {

struct Activation {
  std::size_t rule = 0;
  Bindings bindings;
  std::vector<std::size_t> tuple;
};

class Engine {
 public:
  Engine(const RuleSet& rules, std::vector<Fact> facts, const InferenceOptions& opt) : rules_(rules), opt_(opt) {
    for (const auto& f : facts) {
      for (const auto& a : f.args)
        if (const auto* d = std::get_if<double>(&a); d && !std::isfinite(*d))
          throw PreconditionError("fact " + f.predicate + " has a non-finite argument");
      if (auto it = rules.predicates.find(f.predicate); it != rules.predicates.end() && it->second != f.args.size())
        throw PreconditionError("fact " + f.key() + " does not match arity " + std::to_string(it->second));
    }
    // canonical order makes the outcome independent of insertion order
    std::sort(facts.begin(), facts.end(), [](const Fact& a, const Fact& b) {
      return std::tie(a.predicate, a.args, a.source, a.sim_time) < std::tie(b.predicate, b.args, b.source, b.sim_time);
    });
    for (auto& f : facts) add(std::move(f), npos, false);
    out_.initial_count = out_.facts.size();
    out_.traced = opt.trace;
  }

  InferenceResult run() {
    bool dirty = true;
    while (true) {
      if (dirty) {
        refresh_agenda();
        dirty = false;
      }
      if (agenda_.empty()) break;
      auto best = agenda_.begin();
      for (auto it = agenda_.begin(); it != agenda_.end(); ++it)
        if (before(it->second, best->second)) best = it;
      Activation act = std::move(best->second);
      fired_.insert(best->first);
      agenda_.erase(best);
      if (out_.firings >= opt_.max_firings) {
        std::string recent;
        const auto n = recent_.size();
        for (std::size_t i = n > 10 ? n - 10 : 0; i < n; ++i) recent += (recent.empty() ? "" : ", ") + recent_[i];
        throw Error("rule firing limit " + std::to_string(opt_.max_firings) + " exceeded; last firings: " + recent);
      }
      dirty = fire(act);
    }
    return std::move(out_);
  }

 private:
  bool before(const Activation& a, const Activation& b) const {
    const auto& ra = rules_.rules[a.rule];
    const auto& rb = rules_.rules[b.rule];
    if (ra.priority != rb.priority) return ra.priority > rb.priority;
    if (ra.rule_id != rb.rule_id) return ra.rule_id < rb.rule_id;
    return a.tuple < b.tuple;
  }

  bool add(Fact f, std::size_t firing, bool remote_from_proof) {
    const std::string k = f.key();
    if (keys_.count(k)) return false;
    keys_.insert(k);
    const bool remote = remote_from_proof || f.source == FactSource::peer || f.source == FactSource::uplink;
    by_pred_[f.predicate].push_back(out_.facts.size());
    out_.facts.push_back(std::move(f));
    out_.asserted_by.push_back(firing);
    remote_.push_back(remote);
    return true;
  }

  static std::string binding_key(std::size_t rule, const Bindings& b) {
    std::string k = std::to_string(rule) + "|";
    for (const auto& [name, v] : b) k += name + "=" + (std::holds_alternative<double>(v) ? "#" : "") + to_string(v) + ";";
    return k;
  }

  std::optional<Atom> resolve(const Term& t, const Bindings& b) const {
    if (const auto* a = std::get_if<Atom>(&t)) return *a;
    if (const auto* v = std::get_if<Variable>(&t)) {
      auto it = b.find(v->name);
      if (it != b.end()) return it->second;
    }
    return std::nullopt;
  }

  // Unifies pattern terms with a fact; extends `b` in place, returns false on mismatch.
  static bool unify(const std::vector<Term>& terms, const Fact& f, Bindings& b) {
    if (terms.size() != f.args.size()) return false;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const auto& t = terms[i];
      if (std::holds_alternative<Wildcard>(t)) continue;
      if (const auto* a = std::get_if<Atom>(&t)) {
        if (*a != f.args[i]) return false;
        continue;
      }
      const auto& name = std::get<Variable>(t).name;
      auto [it, inserted] = b.emplace(name, f.args[i]);
      if (!inserted && it->second != f.args[i]) return false;
    }
    return true;
  }

  static bool compare(const Atom& l, CompareOp op, const Atom& r) {
    if (op == CompareOp::eq) return l == r;
    if (op == CompareOp::ne) return l != r;
    const auto* a = std::get_if<double>(&l);
    const auto* b = std::get_if<double>(&r);
    if (!a || !b) return false;  // ordering is numeric only
    switch (op) {
      case CompareOp::lt: return *a < *b;
      case CompareOp::le: return *a <= *b;
      case CompareOp::gt: return *a > *b;
      case CompareOp::ge: return *a >= *b;
      default: return false;
    }
  }

  bool filters_pass(const Rule& r, const Bindings& b) const {
    for (const auto& cond : r.conditions) {
      if (const auto* cc = std::get_if<CompareCondition>(&cond)) {
        if (!compare(*resolve(cc->lhs, b), cc->op, *resolve(cc->rhs, b))) return false;
        continue;
      }
      const auto& pc = std::get<PatternCondition>(cond);
      if (!pc.negated) continue;
      auto it = by_pred_.find(pc.predicate);
      if (it == by_pred_.end()) continue;
      for (auto idx : it->second) {
        Bindings scratch = b;
        if (unify(pc.terms, out_.facts[idx], scratch)) return false;
      }
    }
    return true;
  }

  void join(std::size_t rule, const std::vector<const PatternCondition*>& pos, std::size_t k, Bindings& b,
            std::vector<std::size_t>& tuple) {
    if (k == pos.size()) {
      if (!filters_pass(rules_.rules[rule], b)) return;
      const auto key = binding_key(rule, b);
      if (fired_.count(key)) return;
      auto it = agenda_.find(key);
      if (it == agenda_.end()) agenda_.emplace(key, Activation{rule, b, tuple});
      else if (tuple < it->second.tuple) it->second.tuple = tuple;
      return;
    }
    auto it = by_pred_.find(pos[k]->predicate);
    if (it == by_pred_.end()) return;
    for (auto idx : it->second) {
      Bindings next = b;
      if (!unify(pos[k]->terms, out_.facts[idx], next)) continue;
      tuple.push_back(idx);
      join(rule, pos, k + 1, next, tuple);
      tuple.pop_back();
    }
  }

  void refresh_agenda() {
    for (std::size_t r = 0; r < rules_.rules.size(); ++r) {
      std::vector<const PatternCondition*> pos;
      for (const auto& cond : rules_.rules[r].conditions)
        if (const auto* pc = std::get_if<PatternCondition>(&cond); pc && !pc->negated) pos.push_back(pc);
      Bindings b;
      std::vector<std::size_t> tuple;
      join(r, pos, 0, b, tuple);
    }
  }

  std::string interpolate(const std::string& text, const Bindings& b) const {
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (text[i] != '?') {
        out += text[i];
        continue;
      }
      std::string name;
      std::size_t j = i + 1;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) name += text[j++];
      auto it = b.find(name);
      if (name.empty() || it == b.end()) {
        out += text[i];
        continue;
      }
      out += to_string(it->second);
      i = j - 1;
    }
    return out;
  }

  bool fire(const Activation& act) {
    const auto& rule = rules_.rules[act.rule];
    const std::size_t index = out_.firings++;
    bool remote = false;
    for (auto idx : act.tuple) remote = remote || remote_[idx];
    recent_.push_back(rule.rule_id);
    if (out_.traced) out_.trace.push_back(Firing{rule.rule_id, act.bindings, act.tuple});

    bool grew = false;
    const auto& b = act.bindings;
    for (const auto& action : rule.actions) {
      if (const auto* a = std::get_if<AssertAction>(&action)) {
        Fact f;
        f.predicate = a->predicate;
        for (const auto& t : a->terms) f.args.push_back(*resolve(t, b));
        f.sim_time = opt_.now;
        f.source = FactSource::rule;
        grew = add(std::move(f), index, remote) || grew;
      } else if (const auto* a = std::get_if<AdviseAction>(&action)) {
        Advisory adv;
        adv.site_id = to_string(*resolve(a->site, b));
        adv.severity = a->severity;
        adv.category = a->category;
        for (const auto& t : a->subject_vars) adv.subject_vars.push_back(to_string(*resolve(t, b)));
        adv.message = interpolate(a->message, b);
        for (const auto& s : a->suggestions)
          adv.suggested_actions.push_back(
              {interpolate(s.text, b), s.effect, s.effect_arg ? to_string(*resolve(*s.effect_arg, b)) : ""});
        adv.triggering_rules = {rule.rule_id};
        adv.sim_time = opt_.now;
        adv.remote_input = remote;
        adv.episode_key = rule.rule_id;
        for (const auto& [name, v] : b)
          if (const auto* sym = std::get_if<std::string>(&v)) adv.episode_key += "|" + name + "=" + *sym;
        adv.firing = index;
        out_.advisories.push_back(std::move(adv));
      } else {
        const auto& c = std::get<CommandAction>(action);
        CommunityAction ca;
        ca.kind = c.kind;
        ca.target_site = to_string(*resolve(c.target, b));
        for (const auto& [k, t] : c.params) ca.params[k] = to_string(*resolve(t, b));
        ca.rule_id = rule.rule_id;
        ca.firing = index;
        out_.actions.push_back(std::move(ca));
      }
    }
    return grew;
  }

  const RuleSet& rules_;
  const InferenceOptions& opt_;
  InferenceResult out_;
  std::unordered_set<std::string> keys_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_pred_;
  std::vector<bool> remote_;
  std::map<std::string, Activation> agenda_;
  std::unordered_set<std::string> fired_;
  std::vector<std::string> recent_;
};

}  // namespace

InferenceResult infer(const RuleSet& rules, std::vector<Fact> facts, const InferenceOptions& options) {
  return Engine(rules, std::move(facts), options).run();
}

std::vector<Firing> explain(const InferenceResult& result, const Advisory& advisory) {
  if (!result.traced) throw PreconditionError("explain: inference ran without tracing");
  if (advisory.firing >= result.trace.size()) throw PreconditionError("explain: advisory not produced by this run");
  std::set<std::size_t> chain;
  std::vector<std::size_t> todo{advisory.firing};
  while (!todo.empty()) {
    const auto f = todo.back();
    todo.pop_back();
    if (!chain.insert(f).second) continue;
    for (auto idx : result.trace[f].matched_facts)
      if (result.asserted_by[idx] != npos) todo.push_back(result.asserted_by[idx]);
  }
  std::vector<Firing> out;
  for (auto f : chain) out.push_back(result.trace[f]);
  return out;
}

}  // namespace ccic::rbes
