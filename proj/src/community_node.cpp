#include "ccic/community_node.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ccic/log.hpp"

namespace ccic::community {

using nlohmann::json;
using rbes::Atom;
using rbes::Fact;
using rbes::FactSource;
using rbes::make_fact;

namespace {

double link_code(const std::string& health) {
  if (health == "down") return 1.0;
  if (health == "degraded") return 0.5;
  return 0.0;
}

// Directives the community itself sent are not evidence of a new incident.
bool counts_as_incident(const ActiveAdvisory& a) { return a.severity == "critical" && a.category != "community_directive"; }

}  // namespace

const std::vector<std::string>& site_features() {
  static const std::vector<std::string> f = {"anomaly_fraction", "min_confidence", "critical_count",
                                             "min_availability", "link",           "missing"};
  return f;
}

SiteFeatures features_of(const SiteStatus& s) {
  SiteFeatures f;
  if (!s.loops.empty()) {
    std::size_t anomalous = 0;
    for (const auto& l : s.loops) {
      anomalous += l.anomaly;
      f.min_confidence = std::min(f.min_confidence, l.confidence);
    }
    f.anomaly_fraction = static_cast<double>(anomalous) / static_cast<double>(s.loops.size());
  }
  f.critical_count = static_cast<double>(
      std::count_if(s.active_advisories.begin(), s.active_advisories.end(), counts_as_incident));
  for (const auto& [_, v] : s.availability) f.min_availability = std::min(f.min_availability, v);
  f.link = link_code(s.link_health);
  return f;
}

SiteFeatures missing_features() {
  SiteFeatures f;
  f.link = 1.0;
  f.missing = 1.0;
  return f;
}

std::vector<VarId> feature_names(const std::vector<SiteId>& sites) {
  std::vector<VarId> out;
  for (const auto& s : sites)
    for (const auto& f : site_features()) out.push_back(s + "." + f);
  return out;
}

std::vector<double> feature_vector(const std::vector<SiteId>& sites, const std::map<SiteId, SiteFeatures>& fs) {
  std::vector<double> out;
  for (const auto& s : sites) {
    auto it = fs.find(s);
    const SiteFeatures f = it == fs.end() ? missing_features() : it->second;
    out.insert(out.end(), {f.anomaly_fraction, f.min_confidence, f.critical_count, f.min_availability, f.link, f.missing});
  }
  return out;
}

detector::TrainingSet synthesize_training(const std::vector<SiteId>& sites, std::size_t per_state, std::uint64_t seed) {
  if (sites.size() < 2) throw PreconditionError("community classifier needs at least two sites");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };

  auto nominal = [&] {
    SiteFeatures f;
    f.anomaly_fraction = u(rng) < 0.9 ? 0.0 : uni(0.1, 0.2);
    f.min_confidence = uni(0.75, 1.0);
    f.min_availability = uni(0.97, 1.0);
    f.link = u(rng) < 0.97 ? 0.0 : 0.5;
    return f;
  };
  // Incidents always carry a critical advisory; the other signals may or may
  // not move, so the critical count alone must be enough to flag a site.
  auto incident = [&] {
    SiteFeatures f = nominal();
    f.critical_count = std::floor(uni(1.0, 4.0));
    if (u(rng) < 0.5) {
      f.anomaly_fraction = uni(0.0, 0.6);
      f.min_confidence = uni(0.3, 1.0);
    }
    if (u(rng) < 0.5) f.min_availability = uni(0.0, 0.9);
    return f;
  };

  detector::TrainingSet set;
  set.input_vars = feature_names(sites);
  for (std::size_t state = 0; state < 3; ++state) {
    for (std::size_t i = 0; i < per_state; ++i) {
      std::vector<std::size_t> order(sites.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::size_t hit = 0;
      if (state == 1) hit = 1;
      if (state == 2) hit = 2 + static_cast<std::size_t>(u(rng) * static_cast<double>(sites.size() - 1));
      hit = std::min(hit, sites.size());
      std::map<SiteId, SiteFeatures> fs;
      for (std::size_t k = 0; k < sites.size(); ++k) fs[sites[order[k]]] = k < hit ? incident() : nominal();
      set.x.push_back(feature_vector(sites, fs));
      set.labels.push_back(community_states()[state]);
    }
  }
  return set;
}

detector::LoopClassifier train_classifier(const std::vector<SiteId>& sites, std::size_t per_state, std::uint64_t seed) {
  detector::TrainingOptions opt;
  opt.seed = seed;
  opt.max_epochs = 300;
  opt.patience = 30;
  opt.max_inputs = 6 * static_cast<int>(sites.size());
  return detector::train(synthesize_training(sites, per_state, seed), "community", opt);
}

CommunityState classify_community(const detector::LoopClassifier& c, const std::vector<SiteId>& sites,
                                  const std::map<SiteId, SiteFeatures>& features) {
  const auto cls = detector::classify(c, feature_vector(sites, features));
  CommunityState out;
  out.label = cls.predicted_state;
  out.confidence = cls.confidence;
  std::set<SiteId> outliers;
  auto site_of = [](const VarId& v) { return v.substr(0, v.rfind('.')); };
  for (const auto& o : cls.outliers) outliers.insert(site_of(o.var_id));
  // Sites outside the clean-operation envelope are outliers whatever the label.
  const auto x = feature_vector(sites, features);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& env = c.envelope("nominal", c.input_vars[i]);
    if (x[i] < env.low || x[i] > env.high) outliers.insert(site_of(c.input_vars[i]));
  }
  for (const auto& s : sites) {
    auto it = features.find(s);
    if (it == features.end() || it->second.missing > 0.5) {
      out.missing_sites.push_back(s);
      outliers.insert(s);
    }
  }
  if (!out.missing_sites.empty() && out.label == "nominal") out.label = "localized_incident";
  out.outlier_sites.assign(outliers.begin(), outliers.end());
  return out;
}

// --- impact assessment -----------------------------------------------------------

std::vector<Impact> impact_assessment(const std::vector<plant::InterdependencyEdge>& edges,
                                      const std::set<std::string>& degraded) {
  std::map<std::string, std::vector<const plant::InterdependencyEdge*>> out_edges;
  for (const auto& e : edges) out_edges[e.provider_site].push_back(&e);

  std::map<std::pair<std::string, plant::Resource>, Impact> best;
  std::vector<std::string> path;
  std::set<std::string> on_path;

  auto visit = [&](auto&& self, const std::string& node, double severity) -> void {
    auto it = out_edges.find(node);
    if (it == out_edges.end()) return;
    for (const auto* e : it->second) {
      if (on_path.count(e->consumer_site)) continue;
      const double s = severity * e->criticality;
      if (s <= 0.0) continue;
      path.push_back(e->consumer_site);
      on_path.insert(e->consumer_site);
      auto& slot = best[{e->consumer_site, e->resource}];
      if (s > slot.severity || (s == slot.severity && path < slot.path)) slot = {e->consumer_site, e->resource, s, path};
      self(self, e->consumer_site, s);
      on_path.erase(e->consumer_site);
      path.pop_back();
    }
  };
  for (const auto& src : degraded) {
    path = {src};
    on_path = {src};
    visit(visit, src, 1.0);
  }
  std::vector<Impact> out;
  for (auto& [_, imp] : best) out.push_back(std::move(imp));
  return out;
}

json to_json(const Impact& i) {
  return {{"node", i.node}, {"resource", plant::to_string(i.resource)}, {"severity", i.severity}, {"path", i.path}};
}

json to_json(const CommunityPicture& p) {
  json statuses = json::object();
  for (const auto& [s, st] : p.statuses) statuses[s] = st ? to_json(*st) : json(nullptr);
  json edges = json::array();
  for (const auto& e : p.edges) {
    auto j = plant::to_json(e.edge);
    j["availability"] = e.availability;
    edges.push_back(std::move(j));
  }
  json advisories = json::array();
  for (const auto& a : p.advisories) advisories.push_back(rbes::to_json(a));
  json site_adv = json::object();
  for (const auto& [s, list] : p.site_advisories) {
    json arr = json::array();
    for (const auto& a : list) arr.push_back(rbes::to_json(a));
    site_adv[s] = std::move(arr);
  }
  json commands = json::array();
  for (const auto& c : p.commands) {
    auto j = to_json(c.command);
    j["downlinked"] = c.downlinked;
    j["acknowledged_at"] = c.acknowledged_at ? json(*c.acknowledged_at) : json(nullptr);
    commands.push_back(std::move(j));
  }
  json impact = json::array();
  for (const auto& i : p.impact) impact.push_back(to_json(i));
  return {{"sim_time", p.sim_time},
          {"sites", p.sites},
          {"statuses", statuses},
          {"link_health", p.link_health},
          {"edges", edges},
          {"advisories", advisories},
          {"site_advisories", site_adv},
          {"commands", commands},
          {"community_state",
           {{"label", p.state.label},
            {"confidence", p.state.confidence},
            {"outlier_sites", p.state.outlier_sites},
            {"missing_sites", p.state.missing_sites}}},
          {"impact", impact}};
}

// --- node ------------------------------------------------------------------------

CommunityNode::CommunityNode(CommunityConfig config, link::Transport& transport, events::EventLog& log)
    : cfg_(std::move(config)), log_(log), endpoint_(cfg_.id, transport, cfg_.link) {
  if (!cfg_.classifier) throw ConfigError("community node: no trained community classifier");
  if (cfg_.classifier->input_vars != feature_names(cfg_.sites))
    throw ConfigError("community node: classifier was trained for a different site list");
  std::set<SiteId> seen;
  for (const auto& s : cfg_.sites) {
    if (!seen.insert(s).second) throw ConfigError("community node: site '" + s + "' listed twice");
    endpoint_.add_peer(s);
    picture_.statuses[s] = std::nullopt;
    picture_.link_health[s] = "up";
  }
  for (const auto& k : cfg_.automation_allowlist)
    if (!is_command_kind(k)) throw ConfigError("community node: unknown command kind '" + k + "' in automation allowlist");
  picture_.sites = cfg_.sites;
  for (const auto& e : cfg_.edges) picture_.edges.push_back({e, 1.0});
  picture_.state.label = "nominal";
}

void CommunityNode::log(SimTime t, const std::string& kind, json payload) {
  log_.append(t, cfg_.id, kind, std::move(payload));
}

bool CommunityNode::ingest_status(const SiteStatus& st, SimTime now) {
  if (!picture_.statuses.count(st.site_id)) {
    logger()->warn("community: status from unknown site '{}'", st.site_id);
    log(now, "status_rejected", {{"site", st.site_id}, {"reason", "unknown site"}});
    return false;
  }
  auto& last = last_seq_[st.site_id];
  if (st.seq <= last) {
    ++stale_;
    log(now, "status_stale", {{"site", st.site_id}, {"seq", st.seq}, {"last_seq", last}});
    return false;
  }
  last = st.seq;
  last_status_at_[st.site_id] = now;
  picture_.statuses[st.site_id] = st;
  log(now, "status", to_json(st));
  for (const auto& id : st.command_acks) {
    auto it = command_index_.find(id);
    if (it == command_index_.end()) continue;
    auto& rec = picture_.commands[it->second];
    if (rec.acknowledged_at) continue;
    rec.acknowledged_at = now;
    log(now, "command_ack", {{"command_id", id}, {"site", st.site_id}});
  }
  return true;
}

CommunityCommand CommunityNode::issue_command(CommunityCommand c, SimTime now) {
  if (!picture_.statuses.count(c.target_site)) throw NotFoundError("unknown site '" + c.target_site + "'");
  if (!is_command_kind(c.kind)) throw PreconditionError("unknown command kind '" + c.kind + "'");
  if (c.mode == CommandMode::manual && c.issued_by.empty())
    throw PreconditionError("manual command requires an issuer actor id");
  if (c.mode == CommandMode::automated && !cfg_.automation_allowlist.count(c.kind))
    throw PreconditionError("command kind '" + c.kind + "' may not be issued automatically");
  if (c.command_id.empty()) c.command_id = "cmd-" + std::to_string(next_command_++);
  if (command_index_.count(c.command_id)) throw ConflictError("command id '" + c.command_id + "' already issued");
  c.sim_time = now;
  CommandRecord rec{c, false, std::nullopt};
  if (c.kind != "alert_public") {  // alert_public stays at the community layer
    endpoint_.send(c.target_site, link::Kind::COMMAND_DOWN, to_json(c), now);
    rec.downlinked = true;
  }
  command_index_[c.command_id] = picture_.commands.size();
  picture_.commands.push_back(rec);
  log(now, "command_issued", {{"command", to_json(c)}, {"downlinked", rec.downlinked}});
  return c;
}

void CommunityNode::receive(SimTime now) {
  for (const auto& e : endpoint_.receive(now)) {
    switch (e.kind) {
      case link::Kind::STATUS_UP:
        try {
          auto st = site_status_from_json(e.payload);
          if (st.site_id != e.src) throw PreconditionError("status names site '" + st.site_id + "'");
          ingest_status(st, now);
        } catch (const PreconditionError& ex) {
          log(now, "status_rejected", {{"site", e.src}, {"reason", ex.what()}});
        }
        break;
      case link::Kind::ADVISORY_UP:
        try {
          auto a = rbes::advisory_from_json(e.payload);
          picture_.site_advisories[e.src].push_back(a);
          log(now, "advisory_received", {{"site", e.src}, {"advisory", e.payload}});
        } catch (const std::exception& ex) {
          log(now, "advisory_rejected", {{"site", e.src}, {"reason", ex.what()}});
        }
        break;
      default:
        log(now, "unexpected_message", {{"src", e.src}, {"kind", link::to_string(e.kind)}});
    }
  }
}

bool CommunityNode::is_missing(const SiteId& s, SimTime now) const {
  auto it = last_status_at_.find(s);
  if (it == last_status_at_.end()) return now > cfg_.missing_after_s;
  return now - it->second > cfg_.missing_after_s;
}

std::set<std::string> CommunityNode::degraded_sites(SimTime now) const {
  std::set<std::string> out;
  for (const auto& s : cfg_.sites) {
    if (is_missing(s, now)) {
      out.insert(s);
      continue;
    }
    const auto& st = picture_.statuses.at(s);
    if (!st) continue;
    const auto f = features_of(*st);
    if (f.min_availability < cfg_.degraded_availability || f.critical_count > 0) out.insert(s);
  }
  return out;
}

std::vector<Fact> CommunityNode::facts(SimTime now) const {
  std::vector<Fact> out;
  auto add = [&](std::string pred, std::vector<Atom> args, FactSource src) {
    out.push_back(make_fact(std::move(pred), std::move(args), src, now));
  };
  for (const auto& s : cfg_.sites) {
    add("site", {s}, FactSource::config);
    if (auto it = cfg_.site_kinds.find(s); it != cfg_.site_kinds.end()) add("site_kind", {s, it->second}, FactSource::config);
  }
  for (const auto& e : cfg_.edges)
    add("dependency", {e.provider_site, e.consumer_site, plant::to_string(e.resource)}, FactSource::config);
  for (const auto& s : cfg_.sites) {
    if (is_missing(s, now)) {
      add("site_missing", {s}, FactSource::uplink);
      continue;
    }
    if (const auto& st = picture_.statuses.at(s))
      for (const auto& a : st->active_advisories) add("site_advisory", {s, a.severity, a.category}, FactSource::uplink);
    add("site_link", {s, picture_.link_health.at(s)}, FactSource::detector);
  }
  add("community_state", {picture_.state.label}, FactSource::detector);
  for (const auto& s : picture_.state.outlier_sites) add("outlier_site", {s}, FactSource::detector);
  for (const auto& i : picture_.impact)
    add("impacted", {i.node, plant::to_string(i.resource), std::round(i.severity * 100.0) / 100.0}, FactSource::detector);
  return out;
}

void CommunityNode::tick(SimTime now) {
  picture_.sim_time = now;
  receive(now);

  for (const auto& s : cfg_.sites) picture_.link_health[s] = link::to_string(endpoint_.health(s));
  for (auto& pe : picture_.edges) {
    pe.availability = 1.0;
    auto it = picture_.statuses.find(pe.edge.provider_site);
    if (it != picture_.statuses.end() && it->second) {
      auto a = it->second->availability.find(plant::to_string(pe.edge.resource));
      if (a != it->second->availability.end()) pe.availability = a->second;
    }
  }

  std::map<SiteId, SiteFeatures> features;
  for (const auto& s : cfg_.sites) {
    const auto& st = picture_.statuses.at(s);
    if (st && !is_missing(s, now)) features[s] = features_of(*st);
  }
  const auto previous = picture_.state.label;
  picture_.state = classify_community(*cfg_.classifier, cfg_.sites, features);
  if (picture_.state.label != previous)
    log(now, "community_state", {{"label", picture_.state.label},
                                 {"previous", previous},
                                 {"confidence", picture_.state.confidence},
                                 {"outlier_sites", picture_.state.outlier_sites}});

  const auto degraded = degraded_sites(now);
  const auto impact = impact_assessment(cfg_.edges, degraded);
  const bool impact_changed = impact != picture_.impact;
  picture_.impact = impact;

  rbes::InferenceOptions opt;
  opt.now = now;
  last_inference_ = rbes::infer(cfg_.rules, facts(now), opt);
  const auto& inf = last_inference_;

  std::set<std::string> derived_now;
  for (std::size_t i = inf.initial_count; i < inf.facts.size(); ++i) {
    const auto key = inf.facts[i].key();
    derived_now.insert(key);
    if (!prev_derived_.count(key)) log(now, "fact", rbes::to_json(inf.facts[i]));
  }
  prev_derived_ = std::move(derived_now);

  // Log order within a tick: directives, then advice, then the impact report.
  std::set<std::string> standing;
  for (const auto& act : inf.actions) {
    std::string key = act.kind + "|" + act.target_site;
    for (const auto& [k, v] : act.params) key += "|" + k + "=" + v;
    standing.insert(key);
    if (standing_actions_.count(key)) continue;
    CommunityCommand c;
    c.target_site = act.target_site;
    c.kind = act.kind;
    c.params = act.params;
    c.issued_by = "rule:" + act.rule_id;
    c.mode = CommandMode::automated;
    try {
      issue_command(c, now);
    } catch (const Error& e) {
      log(now, "automation_rejected", {{"kind", act.kind}, {"target_site", act.target_site}, {"rule", act.rule_id},
                                       {"reason", e.what()}});
    }
  }
  standing_actions_ = std::move(standing);

  for (auto a : inf.advisories) {
    auto last = episode_last_.find(a.episode_key);
    const bool fresh = last == episode_last_.end() || now - last->second > cfg_.advisory_window_s;
    episode_last_[a.episode_key] = now;
    if (!fresh) continue;
    a.advisory_id = cfg_.id + "-" + std::to_string(next_advisory_++);
    a.sim_time = now;
    log(now, "advisory", rbes::to_json(a));
    picture_.advisories.push_back(std::move(a));
  }

  if (impact_changed) {
    json report = json::array();
    for (const auto& i : impact) report.push_back(to_json(i));
    log(now, "impact_report", {{"impact", report}, {"degraded", degraded}});
  }

  endpoint_.service(now);
  for (const auto& ch : endpoint_.take_health_changes())
    log(now, "link_health", {{"peer", ch.peer}, {"from", link::to_string(ch.from)}, {"to", link::to_string(ch.to)}});
}

}  // namespace ccic::community
