#pragma once

// Random small rule programs over a fixed vocabulary, emitted as rule text so
// the parser is exercised along with the engine.

#include <random>
#include <string>
#include <vector>

#include "ccic/rbes.hpp"

namespace rule_gen {

struct Instance {
  std::string text;
  std::vector<ccic::rbes::Fact> facts;
};

inline const ccic::rbes::PredicateTable& vocabulary() {
  static const ccic::rbes::PredicateTable t = {{"b1", 1}, {"b2", 2}, {"d1", 1}, {"d2", 2}, {"site", 1}};
  return t;
}

class Generator {
 public:
  explicit Generator(std::uint64_t seed, bool allow_negation = true) : rng_(seed), negation_(allow_negation) {}

  Instance next() {
    Instance in;
    const int n_rules = pick(1, 5);
    for (int r = 0; r < n_rules; ++r) in.text += rule(r);
    const int n_facts = pick(0, 6);
    for (int i = 0; i < n_facts; ++i) in.facts.push_back(fact());
    return in;
  }

  ccic::rbes::Fact fact() {
    static const char* preds[] = {"b1", "b2", "d1", "d2"};
    const std::string p = preds[pick(0, 3)];
    std::vector<ccic::rbes::Atom> args;
    const std::size_t arity = vocabulary().at(p);
    for (std::size_t i = 0; i < arity; ++i) args.push_back(constant());
    return ccic::rbes::make_fact(p, args);
  }

 private:
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }

  ccic::rbes::Atom constant() {
    switch (pick(0, 3)) {
      case 0: return std::string("a");
      case 1: return std::string("b");
      case 2: return 1.0;
      default: return 2.0;
    }
  }

  static std::string text(const ccic::rbes::Atom& a) { return ccic::rbes::to_string(a); }

  std::string term(std::vector<std::string>& bound, bool binding) {
    const double u = std::uniform_real_distribution<double>(0, 1)(rng_);
    if (u < 0.15) return "_";
    if (u < 0.4) return text(constant());
    static const char* names[] = {"x", "y", "z"};
    if (binding) {
      std::string v = names[pick(0, 2)];
      if (std::find(bound.begin(), bound.end(), v) == bound.end()) bound.push_back(v);
      return "?" + v;
    }
    if (bound.empty()) return text(constant());
    return "?" + bound[static_cast<std::size_t>(pick(0, static_cast<int>(bound.size()) - 1))];
  }

  std::string bound_or_constant(const std::vector<std::string>& bound) {
    if (bound.empty() || chance(0.3)) return text(constant());
    return "?" + bound[static_cast<std::size_t>(pick(0, static_cast<int>(bound.size()) - 1))];
  }

  std::string pattern(const char* pred, std::vector<std::string>& bound, bool binding) {
    const std::size_t arity = vocabulary().at(pred);
    std::string s = std::string(pred) + "(";
    for (std::size_t i = 0; i < arity; ++i) s += (i ? ", " : "") + term(bound, binding);
    return s + ")";
  }

  std::string rule(int r) {
    static const char* positive[] = {"b1", "b2", "d1", "d2"};
    static const char* derived[] = {"d1", "d2"};
    static const char* ops[] = {"<", "<=", ">", ">=", "==", "!="};
    std::vector<std::string> bound;
    std::string s = "rule r" + std::to_string(r) + " priority " + std::to_string(pick(0, 3)) + "\n";
    const int n_pos = pick(1, 2);
    for (int i = 0; i < n_pos; ++i) s += "  if " + pattern(positive[pick(0, 3)], bound, true) + "\n";
    if (negation_ && chance(0.35)) {
      std::vector<std::string> nb = bound;
      s += "  if not " + pattern(chance(0.5) ? "b1" : "b2", nb, false) + "\n";
    }
    if (!bound.empty() && chance(0.35))
      s += "  if ?" + bound[0] + " " + ops[pick(0, 5)] + " " + bound_or_constant(bound) + "\n";
    const int n_act = pick(1, 2);
    for (int i = 0; i < n_act; ++i) {
      const char* d = derived[pick(0, 1)];
      std::string a = std::string(d) + "(";
      for (std::size_t k = 0; k < vocabulary().at(d); ++k) a += (k ? ", " : "") + bound_or_constant(bound);
      s += "  then assert " + a + ")\n";
    }
    if (chance(0.3)) {
      const std::string site = bound_or_constant(bound);
      s += "  then advise warning " + site + " generic [] \"seen " + site + "\"\n";
    }
    if (chance(0.15)) s += "  then command alert_public " + bound_or_constant(bound) + "\n";
    return s + "end\n";
  }

  std::mt19937_64 rng_;
  bool negation_;
};

}  // namespace rule_gen
