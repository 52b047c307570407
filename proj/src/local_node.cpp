#include "ccic/local_node.hpp"

#include <algorithm>
#include <cmath>

#include "ccic/log.hpp"
#include "ccic/tap.hpp"

namespace ccic::node {

using nlohmann::json;
using rbes::Atom;
using rbes::Fact;
using rbes::FactSource;
using rbes::make_fact;

namespace {

double round_to(double v, double step) { return std::round(v / step) * step; }

const std::set<std::string>& link_policy_kinds() {
  static const std::set<std::string> kinds = {"precautionary_isolate", "deploy_countermeasures"};
  return kinds;
}

int health_rank(link::Health h) {
  switch (h) {
    case link::Health::up: return 0;
    case link::Health::degraded: return 1;
    case link::Health::down: return 2;
  }
  return 0;
}

json fact_json(const Fact& f) {
  json args = json::array();
  for (const auto& a : f.args) {
    if (std::holds_alternative<double>(a))
      args.push_back(std::get<double>(a));
    else
      args.push_back(std::get<std::string>(a));
  }
  return {{"predicate", f.predicate}, {"args", args}, {"source", rbes::to_string(f.source)}};
}

}  // namespace

std::vector<SiteId> edge_peers(const SiteId& site, const std::vector<plant::InterdependencyEdge>& edges,
                               const std::vector<SiteId>& sites) {
  std::set<SiteId> out;
  const std::set<SiteId> known(sites.begin(), sites.end());
  for (const auto& e : edges) {
    if (e.provider_site == site && known.count(e.consumer_site)) out.insert(e.consumer_site);
    if (e.consumer_site == site && known.count(e.provider_site)) out.insert(e.provider_site);
  }
  return {out.begin(), out.end()};
}

std::string LocalNode::fingerprint_of(const ClassifierSet& set) {
  Fnv1a h;
  for (const auto& [id, c] : set) {
    h.update(id);
    h.update(c.training_fingerprint);
    for (double w : c.mlp.flatten()) h.update(w);
  }
  return hex64(h.digest());
}

LocalNode::LocalNode(LocalNodeConfig config, link::Transport& transport, events::EventLog& log)
    : cfg_(std::move(config)), log_(log), endpoint_(cfg_.plant.site_id, transport, cfg_.link) {
  const auto& site = cfg_.plant.site_id;
  for (const auto& l : cfg_.plant.loops) {
    auto it = cfg_.classifiers.find(l.loop_id);
    if (it == cfg_.classifiers.end()) throw ConfigError(site + ": no classifier for loop '" + l.loop_id + "'");
    if (it->second.loop_id != l.loop_id)
      throw ConfigError(site + ": classifier for '" + l.loop_id + "' was trained for '" + it->second.loop_id + "'");
    for (const auto& v : it->second.input_vars)
      if (!cfg_.plant.has_var(v))
        throw ConfigError(site + ": classifier for '" + l.loop_id + "' reads unknown variable '" + v + "'");
  }
  for (const auto& [id, _] : cfg_.classifiers) {
    const bool known = std::any_of(cfg_.plant.loops.begin(), cfg_.plant.loops.end(),
                                   [&](const plant::ControlLoopSpec& l) { return l.loop_id == id; });
    if (!known) throw ConfigError(site + ": classifier '" + id + "' matches no plant loop");
  }
  for (const auto& k : cfg_.auto_apply)
    if (!link_policy_kinds().count(k))
      throw ConfigError(site + ": command kind '" + k + "' cannot be auto-applied (only link-policy kinds can)");
  if (cfg_.anomaly_debounce < 1) throw ConfigError(site + ": anomaly_debounce must be >= 1");
  if (cfg_.retrain.fraction < 0.0 || cfg_.retrain.fraction > 1.0)
    throw ConfigError(site + ": retrain fraction outside [0,1]");

  if (cfg_.uplink) endpoint_.add_peer(cfg_.community_id);
  for (const auto& p : cfg_.peers)
    if (p != site) endpoint_.add_peer(p);
  classifiers_ = std::make_shared<const ClassifierSet>(cfg_.classifiers);
  static_ = static_facts();
  status_.site_id = site;
  status_.infrastructure_kind = plant::to_string(cfg_.plant.infrastructure_kind);
}

std::vector<Fact> LocalNode::static_facts() const {
  const auto& p = cfg_.plant;
  const Atom s = p.site_id;
  auto f = [](std::string pred, std::vector<Atom> args) { return make_fact(std::move(pred), std::move(args), FactSource::config); };
  std::vector<Fact> out = {f("self", {s}), f("site", {s}), f("site_kind", {s, plant::to_string(p.infrastructure_kind)})};
  std::set<std::string> sections;
  for (const auto& l : p.loops) {
    out.push_back(f("measured_var", {s, l.loop_id, l.measured_var}));
    out.push_back(f("actuator_var", {s, l.loop_id, l.actuator_var}));
    for (const auto& v : l.input_vars) out.push_back(f("input_var", {s, l.loop_id, v}));
    if (!l.section.empty()) {
      out.push_back(f("loop_section", {s, l.loop_id, l.section}));
      sections.insert(l.section);
    }
    if (l.depends_on) out.push_back(f("loop_depends", {s, l.loop_id, plant::to_string(*l.depends_on)}));
  }
  for (const auto& sec : sections) out.push_back(f("section", {s, sec}));
  for (auto r : p.provided_resources()) out.push_back(f("produces", {s, plant::to_string(r)}));
  for (const auto& e : cfg_.edges)
    if (e.provider_site == p.site_id || e.consumer_site == p.site_id)
      out.push_back(f("dependency", {e.provider_site, e.consumer_site, plant::to_string(e.resource)}));
  return out;
}

void LocalNode::log(SimTime t, const std::string& kind, json payload) { log_.append(t, site(), kind, std::move(payload)); }

void LocalNode::send(const link::NodeId& dst, link::Kind kind, json payload, SimTime now) {
  const auto seq = endpoint_.send(dst, kind, std::move(payload), now);
  json rec = {{"dst", dst}, {"kind", link::to_string(kind)}, {"seq", seq ? json(*seq) : json(nullptr)}};
  log(now, dst == cfg_.community_id ? "uplink_send" : "peer_send", std::move(rec));
}

void LocalNode::set_isolated(bool on, SimTime now, const std::string& reason) {
  if (endpoint_.isolated() == on) return;
  endpoint_.set_isolated(on);
  log(now, "link_policy", {{"isolated", on}, {"reason", reason}});
}

void LocalNode::on_peer_alert(const link::Envelope& e, SimTime now) {
  log(now, "peer_receipt", {{"src", e.src}, {"seq", e.seq}, {"payload", e.payload}});
  try {
    const auto pred = e.payload.at("fact").get<std::string>();
    if (pred != "anomaly" && pred != "section_alarm") throw PreconditionError("peer alerts carry anomaly or section_alarm");
    std::vector<Atom> args;
    for (const auto& a : e.payload.at("args")) {
      if (a.is_number())
        args.emplace_back(a.get<double>());
      else
        args.emplace_back(a.get<std::string>());
    }
    if (args.size() != 2 || !std::holds_alternative<std::string>(args[0]) || std::get<std::string>(args[0]) != e.src)
      throw PreconditionError("peer alert must name its sender as the first argument");
    Fact f = make_fact(pred, std::move(args), FactSource::peer, e.sim_time);
    peer_facts_[f.key()] = {f, now + cfg_.peer_fact_ttl_s};
  } catch (const std::exception& ex) {
    logger()->warn("{}: ignoring peer alert from '{}': {}", site(), e.src, ex.what());
    log(now, "peer_rejected", {{"src", e.src}, {"seq", e.seq}, {"reason", ex.what()}});
  }
}

void LocalNode::on_command(const link::Envelope& e, SimTime now) {
  log(now, "downlink_receipt", {{"src", e.src}, {"seq", e.seq}, {"kind", link::to_string(e.kind)}, {"payload", e.payload}});
  CommunityCommand c;
  try {
    if (e.kind == link::Kind::POLICY_DOWN) {
      c.kind = e.payload.at("isolate").get<bool>() ? "precautionary_isolate" : "";
      c.target_site = site();
      c.command_id = e.payload.value("command_id", "policy-" + std::to_string(e.seq));
      if (c.kind.empty()) return;
    } else {
      c = command_from_json(e.payload);
    }
  } catch (const std::exception& ex) {
    log(now, "command_rejected", {{"seq", e.seq}, {"reason", std::string("malformed: ") + ex.what()}});
    return;
  }
  if (c.target_site != site()) {
    logger()->warn("{}: command {} addressed to '{}' rejected", site(), c.command_id, c.target_site);
    log(now, "command_rejected", {{"command_id", c.command_id}, {"reason", "addressed to " + c.target_site}});
    return;
  }
  if (commands_.count(c.command_id) || unknown_commands_.count(c.command_id)) {
    log(now, "command_duplicate", {{"command_id", c.command_id}});
    return;
  }
  pending_acks_.push_back(c.command_id);
  if (!is_command_kind(c.kind)) {
    logger()->warn("{}: unknown community command kind '{}'", site(), c.kind);
    unknown_commands_[c.command_id] = {make_fact("unknown_command", {site(), c.kind}, FactSource::uplink, now),
                                       now + cfg_.command_ttl_s};
    return;
  }
  commands_[c.command_id] = c;
  command_expiry_[c.command_id] = now + cfg_.command_ttl_s;
  if (cfg_.auto_apply.count(c.kind)) set_isolated(true, now, "auto-applied " + c.kind + " " + c.command_id);
}

void LocalNode::receive(SimTime now) {
  for (const auto& e : endpoint_.receive(now)) {
    switch (e.kind) {
      case link::Kind::PEER_ALERT:
        on_peer_alert(e, now);
        break;
      case link::Kind::COMMAND_DOWN:
      case link::Kind::POLICY_DOWN:
        on_command(e, now);
        break;
      default:
        log(now, "unexpected_message", {{"src", e.src}, {"kind", link::to_string(e.kind)}});
    }
  }
}

TickReport LocalNode::tick(const plant::PlantState& state) {
  const SimTime now = state.sim_time;
  now_ = now;
  const auto& p = cfg_.plant;
  const Atom s = p.site_id;
  const auto models = classifiers_;  // one classifier set for the whole tick

  TickReport rep;
  rep.sim_time = now;
  rep.model_fingerprint = fingerprint_of(*models);

  receive(now);
  for (auto it = peer_facts_.begin(); it != peer_facts_.end();)
    it = it->second.expires <= now ? peer_facts_.erase(it) : std::next(it);
  for (auto it = command_expiry_.begin(); it != command_expiry_.end();) {
    if (it->second <= now) {
      commands_.erase(it->first);
      it = command_expiry_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto it = unknown_commands_.begin(); it != unknown_commands_.end();)
    it = it->second.expires <= now ? unknown_commands_.erase(it) : std::next(it);

  // Observation: tap readings only.
  const auto readings = tap::snapshot(state, p);
  std::map<VarId, double> values;
  for (const auto& r : readings) values[r.var_id] = r.value;

  std::vector<Fact> facts = static_;
  auto det = [&](std::string pred, std::vector<Atom> args) {
    facts.push_back(make_fact(std::move(pred), std::move(args), FactSource::detector, now));
  };

  for (const auto& l : p.loops) {
    const auto& c = models->at(l.loop_id);
    auto cls = detector::classify(c, values, now);
    int& streak = anomalous_streak_[l.loop_id];
    streak = cls.anomalous ? streak + 1 : 0;
    const bool anomaly = streak >= cfg_.anomaly_debounce;
    det("loop_state", {s, l.loop_id, cls.predicted_state});
    if (cls.confidence < c.confidence_threshold) det("low_confidence", {s, l.loop_id, round_to(cls.confidence, 0.01)});
    if (anomaly) {
      rep.anomalous_loops.insert(l.loop_id);
      det("anomaly", {s, l.loop_id});
      for (const auto& o : cls.outliers)
        det("outlier", {s, l.loop_id, o.var_id, std::string(o.deviation_sigmas >= 0 ? "high" : "low"),
                        round_to(std::abs(o.deviation_sigmas), 0.1)});
    }
    if (!cls.anomalous) {
      auto& rec = recent_[l.loop_id];
      rec.x.push_back(detector::gather_inputs(c, values));
      rec.labels.push_back(cls.predicted_state);
      while (rec.x.size() > cfg_.retrain.max_recent) {
        rec.x.pop_front();
        rec.labels.pop_front();
      }
    }
    rep.classifications.push_back(std::move(cls));
  }
  for (const auto& r : readings)
    if (r.quality != tap::Quality::good) det("quality_suspect", {s, r.var_id});
  for (const auto& a : p.alarms) {
    if (values.at(a.id) >= 0.5) {
      det("alarm", {s, a.id});
      det("section_alarm", {s, a.section});
    }
  }
  for (const auto& cpl : p.couplings)
    det("resource_avail", {s, plant::to_string(cpl.resource), round_to(values.at(cpl.id), 0.01)});

  // Operator, link and remote state.
  auto op = [&](std::string pred, std::vector<Atom> args, FactSource src) {
    facts.push_back(make_fact(std::move(pred), std::move(args), src, now));
  };
  if (endpoint_.isolated()) op("isolated", {s}, FactSource::command);
  for (const auto& l : manual_) op("manual", {s, l}, FactSource::command);
  for (const auto& v : validated_) op("validated", {s, v}, FactSource::command);
  link::Health worst = link::Health::up;
  for (const auto& peer : endpoint_.peers()) {
    const auto h = endpoint_.health(peer);
    if (health_rank(h) > health_rank(worst)) worst = h;
    if (h != link::Health::up) op("link_health", {s, peer, link::to_string(h)}, FactSource::detector);
  }
  for (const auto& [id, c] : commands_) {
    op("command", {c.kind, s, id}, FactSource::uplink);
    for (const auto& [k, v] : c.params) op("command_param", {id, k, v}, FactSource::uplink);
  }
  for (const auto& [_, t] : unknown_commands_) facts.push_back(t.fact);
  for (const auto& [_, t] : peer_facts_) facts.push_back(t.fact);

  // Local anomaly facts offered to peers (rising edge, then periodic refresh).
  std::set<std::string> offered_now;
  for (const auto& f : facts) {
    if (f.source != FactSource::detector || (f.predicate != "anomaly" && f.predicate != "section_alarm")) continue;
    const auto key = f.key();
    offered_now.insert(key);
    auto it = peer_offered_.find(key);
    if (it != peer_offered_.end() && now - it->second < cfg_.peer_refresh_s) continue;
    peer_offered_[key] = now;
    const json payload = {{"fact", f.predicate}, {"args", fact_json(f).at("args")}};
    for (const auto& peer : endpoint_.peers())
      if (peer != cfg_.community_id) send(peer, link::Kind::PEER_ALERT, payload, now);
  }
  for (auto it = peer_offered_.begin(); it != peer_offered_.end();)
    it = offered_now.count(it->first) ? std::next(it) : peer_offered_.erase(it);

  rbes::InferenceOptions opt;
  opt.now = now;
  last_inference_ = rbes::infer(cfg_.rules, std::move(facts), opt);
  const auto& inf = last_inference_;

  std::set<std::string> derived_now;
  for (std::size_t i = inf.initial_count; i < inf.facts.size(); ++i) {
    const auto key = inf.facts[i].key();
    derived_now.insert(key);
    if (!prev_derived_.count(key)) {
      rep.new_facts.push_back(inf.facts[i]);
      log(now, "fact", fact_json(inf.facts[i]));
    }
  }
  prev_derived_ = std::move(derived_now);

  std::map<std::string, int> counts = {{"info", 0}, {"warning", 0}, {"critical", 0}};
  std::set<std::pair<std::string, std::string>> active;
  std::set<std::string> counted;
  for (auto a : inf.advisories) {
    if (counted.insert(a.episode_key).second) ++counts[rbes::to_string(a.severity)];
    active.insert({rbes::to_string(a.severity), a.category});
    rep.raised.push_back(a);
    auto last = episode_last_.find(a.episode_key);
    const bool fresh = last == episode_last_.end() || now - last->second > cfg_.advisory_window_s;
    episode_last_[a.episode_key] = now;
    if (!fresh) continue;
    a.advisory_id = site() + "-" + std::to_string(next_advisory_++);
    a.sim_time = now;
    advisory_index_[a.advisory_id] = advisories_.size();
    advisories_.push_back(a);
    log(now, "advisory", rbes::to_json(a));
    if (cfg_.uplink) send(cfg_.community_id, link::Kind::ADVISORY_UP, rbes::to_json(a), now);
    rep.new_advisories.push_back(std::move(a));
  }

  SiteStatus st;
  st.site_id = site();
  st.sim_time = now;
  st.seq = ++status_seq_;
  st.infrastructure_kind = status_.infrastructure_kind;
  for (const auto& c : rep.classifications)
    st.loops.push_back({c.loop_id, c.predicted_state, c.confidence, rep.anomalous_loops.count(c.loop_id) > 0});
  st.advisory_counts = counts;
  for (const auto& [sev, cat] : active) st.active_advisories.push_back({sev, cat});
  st.link_health = link::to_string(worst);
  for (const auto& [r, v] : tap::resource_availability(state, p)) st.availability[plant::to_string(r)] = v;
  st.isolated = endpoint_.isolated();
  st.command_acks = std::exchange(pending_acks_, {});
  st.operator_actions = std::exchange(pending_actions_, {});
  status_ = st;
  rep.status = st;
  if (cfg_.uplink) send(cfg_.community_id, link::Kind::STATUS_UP, to_json(st), now);

  maybe_retrain(now);

  endpoint_.service(now);
  for (const auto& ch : endpoint_.take_health_changes())
    log(now, "link_health", {{"peer", ch.peer}, {"from", link::to_string(ch.from)}, {"to", link::to_string(ch.to)}});
  return rep;
}

std::size_t LocalNode::recent_rows(const LoopId& loop) const {
  auto it = recent_.find(loop);
  return it == recent_.end() ? 0 : it->second.x.size();
}

bool LocalNode::maybe_retrain(SimTime now) {
  const auto& pol = cfg_.retrain;
  if (!pol.enabled || now - last_retrain_ < pol.period_s) return false;
  last_retrain_ = now;
  const auto current = classifiers_;
  auto next = std::make_shared<ClassifierSet>(*current);
  json loops = json::array();
  for (const auto& [id, c] : *current) {
    auto orig = cfg_.original_training.find(id);
    if (orig == cfg_.original_training.end()) {
      log(now, "retrain_skipped", {{"loop", id}, {"reason", "no original training data"}});
      continue;
    }
    detector::TrainingSet recent;
    recent.input_vars = c.input_vars;
    const auto& rec = recent_[id];
    for (std::size_t i = 0; i < rec.x.size(); ++i) {
      if (detector::classify(c, rec.x[i]).anomalous) continue;  // still clean under the current model
      recent.x.push_back(rec.x[i]);
      recent.labels.push_back(rec.labels[i]);
    }
    if (recent.size() < pol.min_rows) {
      log(now, "retrain_skipped",
          {{"loop", id}, {"reason", "insufficient clean data"}, {"rows", recent.size()}, {"needed", pol.min_rows}});
      continue;
    }
    try {
      auto updated = detector::partial_retrain(c, orig->second, recent, pol.fraction, pol.training);
      loops.push_back({{"loop", id},
                       {"old_fingerprint", c.training_fingerprint},
                       {"new_fingerprint", updated.training_fingerprint},
                       {"recent_rows", recent.size()}});
      (*next)[id] = std::move(updated);
    } catch (const PreconditionError& e) {
      log(now, "retrain_skipped", {{"loop", id}, {"reason", e.what()}});
    }
  }
  if (loops.empty()) return false;
  const auto before = fingerprint_of(*current);
  classifiers_ = std::move(next);  // single pointer swap; ticks hold their own copy
  log(now, "retrain", {{"loops", loops}, {"model_before", before}, {"model_after", fingerprint_of(*classifiers_)}});
  return true;
}

std::vector<rbes::Advisory> LocalNode::advisories() const { return advisories_; }

std::optional<rbes::Advisory> LocalNode::advisory(const std::string& id) const {
  auto it = advisory_index_.find(id);
  if (it == advisory_index_.end()) return std::nullopt;
  return advisories_[it->second];
}

ActionOutcome LocalNode::handle_operator_action(const OperatorAction& action) {
  OperatorAction a = action;
  if (a.site_id.empty()) a.site_id = site();
  if (a.site_id != site())
    throw PreconditionError("operator action for site '" + a.site_id + "' delivered to '" + site() + "'");
  const SimTime t = std::max(now_, a.sim_time);
  a.sim_time = t;
  const auto& p = cfg_.plant;

  rbes::Advisory* adv = nullptr;
  if (a.advisory_id) {
    auto it = advisory_index_.find(*a.advisory_id);
    if (it == advisory_index_.end()) throw NotFoundError("unknown advisory '" + *a.advisory_id + "'");
    adv = &advisories_[it->second];
  } else if (a.kind == OperatorActionKind::acknowledge || a.kind == OperatorActionKind::apply_suggestion) {
    throw PreconditionError(to_string(a.kind) + " requires an advisory_id");
  }

  auto str_param = [&](const char* key) -> std::string {
    if (!a.params.contains(key) || !a.params.at(key).is_string())
      throw PreconditionError(to_string(a.kind) + ": parameter '" + key + "' (string) is required");
    return a.params.at(key).get<std::string>();
  };
  auto require_loop = [&](const std::string& loop) {
    (void)p.loop(loop);  // throws on unknown loop
  };
  auto require_var = [&](const std::string& var) {
    if (!p.has_var(var)) throw PreconditionError("unknown variable '" + var + "'");
  };

  ActionOutcome out;
  json effects = json::array();
  auto set_manual = [&](const LoopId& loop) {
    require_loop(loop);
    out.plant_commands.push_back({plant::PlantCommandKind::set_manual, loop, 0.0});
    manual_.insert(loop);
    effects.push_back({{"effect", "manual"}, {"loop", loop}});
  };
  auto isolate = [&](bool on) {
    set_isolated(on, t, "operator " + a.issued_by);
    effects.push_back({{"effect", "isolate"}, {"on", on}});
  };
  auto validate = [&](const VarId& var) {
    require_var(var);
    validated_.insert(var);
    effects.push_back({{"effect", "validate"}, {"var", var}});
  };

  switch (a.kind) {
    case OperatorActionKind::acknowledge:
      if (adv->ack_state != rbes::AckState::fresh)
        throw ConflictError("advisory " + adv->advisory_id + " is already " + rbes::to_string(adv->ack_state));
      adv->ack_state = rbes::AckState::acknowledged;
      break;
    case OperatorActionKind::apply_suggestion: {
      if (!a.params.contains("suggestion") || !a.params.at("suggestion").is_number_integer())
        throw PreconditionError("apply_suggestion: parameter 'suggestion' (index) is required");
      const auto idx = a.params.at("suggestion").get<long long>();
      if (idx < 0 || idx >= static_cast<long long>(adv->suggested_actions.size()))
        throw PreconditionError("advisory " + adv->advisory_id + " has no suggestion " + std::to_string(idx));
      if (adv->ack_state == rbes::AckState::actioned)
        throw ConflictError("advisory " + adv->advisory_id + " has already been actioned");
      const auto& sug = adv->suggested_actions[static_cast<std::size_t>(idx)];
      if (sug.effect == "isolate")
        isolate(true);
      else if (sug.effect == "validate")
        validate(sug.effect_arg);
      else if (sug.effect == "manual")
        set_manual(sug.effect_arg);
      adv->ack_state = rbes::AckState::actioned;
      break;
    }
    case OperatorActionKind::manual_override: {
      const auto loop = str_param("loop");
      const auto mode = a.params.value("mode", std::string("manual"));
      if (mode == "manual") {
        set_manual(loop);
        if (a.params.contains("output")) {
          if (!a.params.at("output").is_number()) throw PreconditionError("manual_override: 'output' must be a number");
          const double v = a.params.at("output").get<double>();
          out.plant_commands.push_back({plant::PlantCommandKind::manual_output, loop, v});
          effects.push_back({{"effect", "manual_output"}, {"loop", loop}, {"value", v}});
        }
      } else if (mode == "auto") {
        require_loop(loop);
        out.plant_commands.push_back({plant::PlantCommandKind::set_auto, loop, 0.0});
        manual_.erase(loop);
        effects.push_back({{"effect", "auto"}, {"loop", loop}});
      } else {
        throw PreconditionError("manual_override: mode must be 'manual' or 'auto'");
      }
      break;
    }
    case OperatorActionKind::isolate_network: {
      bool on = true;
      if (a.params.contains("isolate")) {
        if (!a.params.at("isolate").is_boolean()) throw PreconditionError("isolate_network: 'isolate' must be a boolean");
        on = a.params.at("isolate").get<bool>();
      }
      isolate(on);
      break;
    }
    case OperatorActionKind::validate_sensor:
      validate(str_param("var"));
      break;
  }
  if (adv && a.kind != OperatorActionKind::acknowledge && a.kind != OperatorActionKind::apply_suggestion)
    adv->ack_state = rbes::AckState::actioned;

  out.event = {{"action", to_json(a)}, {"effects", effects}};
  if (adv) out.event["ack_state"] = rbes::to_string(adv->ack_state);
  log(t, "operator_action", out.event);
  pending_actions_.push_back({a.action_id, to_string(a.kind)});
  return out;
}

}  // namespace ccic::node
