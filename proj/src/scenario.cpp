#include "ccic/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ccic/log.hpp"
#include "ccic/tcp_transport.hpp"
#include "ccic/tap.hpp"

namespace ccic::scenario {

namespace fs = std::filesystem;
using events::EventRecord;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string(what) + " " + path + " not found");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + " " + path + " is not valid JSON: " + e.what());
  }
}

template <class F>
auto config_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  } catch (const PreconditionError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

void require_version(const json& j, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  if (j.value("v", 0) != 1) throw ConfigError(what + ": unsupported version (expected \"v\": 1)");
}

// Dotted path lookup; numeric segments index arrays.
const json* lookup(const json& root, const std::string& path) {
  const json* cur = &root;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (cur->is_object()) {
      auto it = cur->find(key);
      if (it == cur->end()) return nullptr;
      cur = &*it;
    } else if (cur->is_array() && !key.empty() && std::all_of(key.begin(), key.end(), ::isdigit)) {
      const auto idx = std::stoul(key);
      if (idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    } else {
      return nullptr;
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return cur;
}

bool value_equals(const json& actual, const json& expected) {
  if (actual.is_number() && expected.is_number())
    return std::abs(actual.get<double>() - expected.get<double>()) <= 1e-9 * (1.0 + std::abs(expected.get<double>()));
  return actual == expected;
}

// "$trigger.<path>" strings take their value from the triggering record's payload.
json substitute(const json& tmpl, const EventRecord& trigger) {
  if (tmpl.is_string()) {
    const auto s = tmpl.get<std::string>();
    const std::string prefix = "$trigger.";
    if (s.rfind(prefix, 0) == 0) {
      const json* v = lookup(trigger.payload, s.substr(prefix.size()));
      if (!v) throw PreconditionError("trigger record has no field '" + s.substr(prefix.size()) + "'");
      return *v;
    }
    return tmpl;
  }
  if (tmpl.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : tmpl.items()) out[k] = substitute(v, trigger);
    return out;
  }
  if (tmpl.is_array()) {
    json out = json::array();
    for (const auto& v : tmpl) out.push_back(substitute(v, trigger));
    return out;
  }
  return tmpl;
}

link::LinkConfig link_config_from_json(const json& j) {
  link::LinkConfig c;
  c.heartbeat_interval = j.value("heartbeat_interval", c.heartbeat_interval);
  c.miss_threshold = j.value("miss_threshold", c.miss_threshold);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.retransmit_after = j.value("retransmit_after", c.retransmit_after);
  c.token = j.value("token", c.token);
  if (!(c.heartbeat_interval > 0.0) || c.miss_threshold < 1 || c.buffer_capacity < 1 || !(c.retransmit_after > 0.0))
    throw ConfigError("link settings must be positive");
  return c;
}

std::set<std::string> advisory_categories(const rbes::RuleSet& rules) {
  std::set<std::string> out;
  for (const auto& r : rules.rules)
    for (const auto& a : r.actions)
      if (const auto* adv = std::get_if<rbes::AdviseAction>(&a)) out.insert(adv->category);
  return out;
}

bool detectable(plant::InjectionKind k) {
  using K = plant::InjectionKind;
  return k == K::sensor_spoof || k == K::sensor_drift || k == K::equipment_failure || k == K::grid_section_failure;
}

}  // namespace

// --- community manifest ----------------------------------------------------------

std::vector<SiteId> CommunityManifest::site_ids() const {
  std::vector<SiteId> out;
  for (const auto& s : sites) out.push_back(s.id);
  return out;
}

CommunityManifest community_manifest_from_json(const json& j) {
  require_version(j, "community manifest");
  return config_guard("community manifest", [&] {
    CommunityManifest m;
    m.community_id = j.value("community_id", m.community_id);
    std::set<std::string> nodes;
    for (const auto& s : j.at("sites")) {
      SiteEntry e{s.at("id").get<std::string>(), s.at("config").get<std::string>(), s.at("rules").get<std::string>()};
      if (!nodes.insert(e.id).second) throw ConfigError("community manifest: site '" + e.id + "' listed twice");
      m.sites.push_back(std::move(e));
    }
    if (m.sites.empty()) throw ConfigError("community manifest: no sites");
    if (nodes.count(m.community_id)) throw ConfigError("community manifest: community id clashes with a site");
    for (const auto& g : j.value("graph_nodes", json::array())) {
      m.graph_nodes.push_back(g.get<std::string>());
      if (!nodes.insert(m.graph_nodes.back()).second)
        throw ConfigError("community manifest: graph node '" + m.graph_nodes.back() + "' duplicates a site");
    }
    for (const auto& e : j.value("edges", json::array())) {
      m.edges.push_back(plant::edge_from_json(e));
      const auto& edge = m.edges.back();
      for (const auto& end : {edge.provider_site, edge.consumer_site})
        if (!nodes.count(end)) throw ConfigError("community manifest: edge names unknown node '" + end + "'");
    }
    m.community_rules_path = j.at("community_rules").get<std::string>();
    if (j.contains("automation_allowlist")) {
      m.automation_allowlist.clear();
      for (const auto& k : j.at("automation_allowlist")) {
        const auto kind = k.get<std::string>();
        if (!is_command_kind(kind)) throw ConfigError("community manifest: unknown command kind '" + kind + "'");
        m.automation_allowlist.insert(kind);
      }
    } else {
      m.automation_allowlist = community::CommunityConfig{}.automation_allowlist;
    }
    m.link = link_config_from_json(j.value("link", json::object()));
    return m;
  });
}

CommunityManifest load_community_manifest(const std::string& path) {
  return community_manifest_from_json(read_json_file(path, "community manifest"));
}

// --- matchers and scripts --------------------------------------------------------

Matcher matcher_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("matcher must be an object");
  Matcher m;
  if (j.contains("site")) m.site = j.at("site").get<std::string>();
  m.kind = j.at("kind").get<std::string>();
  m.where = j.value("where", json::object());
  if (!m.where.is_object()) throw ConfigError("matcher 'where' must be an object");
  return m;
}

json to_json(const Matcher& m) {
  json j = {{"kind", m.kind}, {"where", m.where}};
  if (m.site) j["site"] = *m.site;
  return j;
}

bool matches(const Matcher& m, const EventRecord& r) {
  if (r.kind != m.kind) return false;
  if (m.site && r.site != *m.site) return false;
  for (const auto& [path, expected] : m.where.items()) {
    const json* v = lookup(r.payload, path);
    if (!v) return false;
    if (v->is_array() && !expected.is_array()) {
      if (std::none_of(v->begin(), v->end(), [&](const json& x) { return value_equals(x, expected); })) return false;
    } else if (!value_equals(*v, expected)) {
      return false;
    }
  }
  return true;
}

plant::InjectionEvent injection_from_json(const json& j) {
  plant::InjectionEvent e;
  e.at_time = j.at("at_time").get<double>();
  e.site = j.at("site").get<std::string>();
  e.kind = plant::injection_kind_from(j.at("kind").get<std::string>());
  e.params = j.value("params", json::object());
  if (!e.params.is_object()) throw ConfigError("injection params must be an object");
  return e;
}

json to_json(const plant::InjectionEvent& e) {
  return {{"at_time", e.at_time}, {"site", e.site}, {"kind", plant::to_string(e.kind)}, {"params", e.params}};
}

namespace {

ScriptedActor actor_from_json(const json& j) {
  ScriptedActor a;
  a.id = j.at("id").get<std::string>();
  a.trigger = matcher_from_json(j.at("trigger"));
  a.delay_s = j.value("delay_s", 0.0);
  a.max_fires = j.value("max_fires", 1);
  if (a.delay_s < 0.0 || a.max_fires < 1) throw ConfigError("actor " + a.id + ": delay_s >= 0 and max_fires >= 1 required");
  const auto& act = j.at("action");
  const auto type = act.at("type").get<std::string>();
  a.kind = act.at("kind").get<std::string>();
  a.params = act.value("params", json::object());
  if (type == "operator_action") {
    a.type = ActionType::operator_action;
    a.site = act.at("site").get<std::string>();
    a.use_trigger_advisory = act.value("advisory", std::string{}) == "trigger";
    (void)operator_action_kind_from(a.kind);
  } else if (type == "community_command") {
    a.type = ActionType::community_command;
    a.target_site = act.at("target_site").get<std::string>();
    if (!is_command_kind(a.kind)) throw ConfigError("actor " + a.id + ": unknown command kind '" + a.kind + "'");
  } else {
    throw ConfigError("actor " + a.id + ": unknown action type '" + type + "'");
  }
  return a;
}

}  // namespace

ScenarioScript script_from_json(const json& j) {
  require_version(j, "scenario");
  return config_guard("scenario", [&] {
    ScenarioScript s;
    s.name = j.at("name").get<std::string>();
    s.duration_s = j.at("duration_s").get<double>();
    s.dt = j.value("dt", 1.0);
    s.seed = j.value("seed", std::uint64_t{1});
    s.community_path = j.value("community", s.community_path);
    s.community_enabled = j.value("community_enabled", true);
    if (!(s.duration_s >= 0.0) || !(s.dt > 0.0)) throw ConfigError("scenario: duration_s >= 0 and dt > 0 required");
    s.initial_modes = j.value("initial_modes", std::map<std::string, std::string>{});
    if (j.contains("network")) {
      const auto& n = j.at("network");
      s.network.drop_rate = n.value("drop_rate", 0.0);
      s.network.delay_min = n.value("delay_min", 0.0);
      s.network.delay_max = n.value("delay_max", s.network.delay_min);
    }
    if (j.contains("retrain")) {
      const auto& r = j.at("retrain");
      RetrainSettings rs;
      for (const auto& site : r.at("sites")) rs.sites.insert(site.get<std::string>());
      rs.period_s = r.value("period_s", rs.period_s);
      rs.fraction = r.value("fraction", rs.fraction);
      rs.min_rows = r.value("min_rows", rs.min_rows);
      if (!(rs.period_s > 0.0) || rs.fraction < 0.0 || rs.fraction > 1.0)
        throw ConfigError("scenario: retrain period must be positive and fraction in [0,1]");
      s.retrain = rs;
    }
    for (const auto& e : j.value("injections", json::array())) s.injections.push_back(injection_from_json(e));
    for (std::size_t i = 1; i < s.injections.size(); ++i)
      if (s.injections[i].at_time < s.injections[i - 1].at_time)
        throw ConfigError("scenario: injections must be sorted by at_time");
    for (const auto& a : j.value("actors", json::array())) s.actors.push_back(actor_from_json(a));
    std::set<std::string> names;
    for (const auto& e : j.value("expected_events", json::array())) {
      ExpectedEvent ev;
      ev.name = e.at("name").get<std::string>();
      ev.matcher = matcher_from_json(e.at("match"));
      ev.deadline = e.at("deadline").get<double>();
      if (ev.deadline > s.duration_s)
        throw ConfigError("scenario: expected event '" + ev.name + "' has a deadline past the duration");
      if (e.contains("after")) {
        ev.after = e.at("after").get<std::vector<std::string>>();
      } else if (!s.expected_events.empty()) {
        ev.after = {s.expected_events.back().name};
      }
      for (const auto& a : ev.after)
        if (!names.count(a)) throw ConfigError("scenario: expected event '" + ev.name + "' follows unknown event '" + a + "'");
      if (!names.insert(ev.name).second) throw ConfigError("scenario: duplicate expected event '" + ev.name + "'");
      s.expected_events.push_back(std::move(ev));
    }
    return s;
  });
}

ScenarioScript load_script(const std::string& path) { return script_from_json(read_json_file(path, "scenario")); }

ScenarioScript free_play(double duration_s, std::uint64_t seed) {
  ScenarioScript s;
  s.name = "free_play";
  s.duration_s = duration_s;
  s.seed = seed;
  return s;
}

// --- metrics ---------------------------------------------------------------------

bool RunMetrics::all_expected_passed() const {
  return std::all_of(expected.begin(), expected.end(), [](const ExpectedResult& r) { return r.passed; });
}

json to_json(const RunMetrics& m) {
  json detection = json::array();
  for (const auto& d : m.detection)
    detection.push_back({{"injection", d.injection},
                         {"site", d.site},
                         {"kind", d.kind},
                         {"target", d.target},
                         {"at_time", d.at_time},
                         {"latency_s", d.latency_s ? json(*d.latency_s) : json(nullptr)},
                         {"advisory_id", d.advisory_id}});
  json expected = json::array();
  for (const auto& e : m.expected)
    expected.push_back({{"name", e.name},
                        {"passed", e.passed},
                        {"matched_at", e.matched_at ? json(*e.matched_at) : json(nullptr)},
                        {"deadline", e.deadline},
                        {"reason", e.reason}});
  return {{"run_id", m.run_id},
          {"scenario", m.scenario},
          {"seed", m.seed},
          {"ticks", m.ticks},
          {"detection_latency", detection},
          {"advisory_counts", m.advisory_counts},
          {"false_anomaly_rate", m.false_anomaly_rate},
          {"clean_classifications", m.clean_classifications},
          {"expected_events", expected},
          {"all_expected_passed", m.all_expected_passed()},
          {"wall_clock_s", m.wall_clock_s}};
}

std::vector<ExpectedResult> evaluate_expected(const std::vector<ExpectedEvent>& expected,
                                              const std::vector<EventRecord>& timeline) {
  std::vector<ExpectedResult> out;
  std::map<std::string, const ExpectedResult*> by_name;
  out.reserve(expected.size());
  for (const auto& ev : expected) {
    ExpectedResult r;
    r.name = ev.name;
    r.deadline = ev.deadline;
    std::vector<std::size_t> priors;
    for (const auto& a : ev.after) {
      const auto* prior = by_name.at(a);
      if (!prior->passed) {
        r.reason = "depends on failed event '" + a + "'";
        break;
      }
      priors.push_back(*prior->record_index);
    }
    // Records of one tick from different nodes count as concurrent, so the
    // result does not depend on how per-node logs interleave within a tick.
    auto follows = [&](std::size_t i) {
      return std::all_of(priors.begin(), priors.end(), [&](std::size_t p) {
        const auto& a = timeline[i];
        const auto& b = timeline[p];
        if (a.sim_time != b.sim_time) return a.sim_time > b.sim_time;
        return i > p || (i != p && a.site != b.site);
      });
    };
    if (r.reason.empty()) {
      for (std::size_t i = 0; i < timeline.size(); ++i) {
        if (!matches(ev.matcher, timeline[i]) || !follows(i)) continue;
        r.matched_at = timeline[i].sim_time;
        r.record_index = i;
        break;
      }
      if (!r.matched_at)
        r.reason = "no matching record";
      else if (*r.matched_at > ev.deadline)
        r.reason = "matched at " + std::to_string(*r.matched_at) + " after deadline";
      else
        r.passed = true;
    }
    out.push_back(std::move(r));
    by_name[ev.name] = &out.back();
  }
  return out;
}

// --- runner ----------------------------------------------------------------------

namespace {

// One node's loopback socket; drops traffic on links the script has cut.
struct SeverableTcp : link::Transport {
  SeverableTcp(const link::NodeId& self, const Runner& runner) : tcp(self, {"127.0.0.1", 0}), runner(runner) {}
  void transmit(const link::Envelope& e, SimTime now) override {
    if (!runner.link_severed(e.src, e.dst)) tcp.transmit(e, now);
  }
  std::vector<link::Envelope> collect(const link::NodeId& node, SimTime now) override { return tcp.collect(node, now); }
  link::TcpTransport tcp;
  const Runner& runner;
};

}  // namespace

Runner::Runner(ScenarioScript script, CommunityManifest manifest, std::map<SiteId, SiteModels> models,
               std::optional<detector::LoopClassifier> community_classifier, RunOptions options)
    : script_(std::move(script)), manifest_(std::move(manifest)), opt_(std::move(options)), net_(script_.seed) {
  run_id_ = script_.name + "-s" + std::to_string(script_.seed);
  if (!opt_.out_dir.empty()) fs::create_directories(opt_.out_dir);
  auto make_log = [&](const std::string& node) {
    auto log = opt_.out_dir.empty() ? std::make_unique<events::EventLog>()
                                    : std::make_unique<events::EventLog>((fs::path(opt_.out_dir) / (node + ".log.jsonl")).string());
    log->subscribe([this](const EventRecord& r) { timeline_.append(r); });
    logs_[node] = std::move(log);
  };
  make_log("scenario");

  const auto ids = manifest_.site_ids();
  if (opt_.transport == TransportKind::tcp) {
    if (script_.network.drop_rate > 0.0 || script_.network.delay_max > 0.0)
      throw ConfigError("scenario network impairments need the in-process transport");
    std::vector<link::NodeId> nodes = ids;
    nodes.push_back(manifest_.community_id);
    std::map<link::NodeId, link::TcpTransport*> raw;
    for (const auto& n : nodes) {
      auto t = std::make_unique<SeverableTcp>(n, *this);
      raw[n] = &t->tcp;
      sockets_[n] = std::move(t);
    }
    for (const auto& [a, ta] : raw)
      for (const auto& [b, tb] : raw)
        if (a != b) ta->add_route(b, {"127.0.0.1", tb->port()});
  }
  std::set<std::string> categories;
  std::uint64_t salt = 0;
  for (const auto& entry : manifest_.sites) {
    Site s;
    s.entry = entry;
    s.spec = plant::load_plant_spec(entry.config_path);
    if (s.spec.site_id != entry.id)
      throw ConfigError("site '" + entry.id + "': config " + entry.config_path + " describes '" + s.spec.site_id + "'");
    s.spec.seed = s.spec.seed * 1000003ULL + script_.seed * 7919ULL + ++salt;
    auto mode = script_.initial_modes.count(entry.id) ? script_.initial_modes.at(entry.id) : std::string{};
    s.state = plant::initial_state(s.spec, mode);
    if (opt_.attach_ccic) {
      auto it = models.find(entry.id);
      if (it == models.end()) throw ConfigError("no trained models for site '" + entry.id + "'");
      node::LocalNodeConfig c;
      c.plant = s.spec;
      c.classifiers = std::move(it->second.classifiers);
      c.original_training = std::move(it->second.original_training);
      c.rules = rbes::load_rules_file(entry.rules_path);
      for (const auto& cat : advisory_categories(c.rules)) categories.insert(cat);
      c.edges = manifest_.edges;
      c.community_id = manifest_.community_id;
      c.uplink = script_.community_enabled;
      c.peers = node::edge_peers(entry.id, manifest_.edges, ids);
      c.link = manifest_.link;
      if (script_.retrain && script_.retrain->sites.count(entry.id)) {
        c.retrain.enabled = true;
        c.retrain.period_s = script_.retrain->period_s;
        c.retrain.fraction = script_.retrain->fraction;
        c.retrain.min_rows = script_.retrain->min_rows;
        if (c.original_training.empty())
          throw ConfigError("site '" + entry.id + "': retraining needs the original training history");
      }
      make_log(entry.id);
      s.node = std::make_unique<node::LocalNode>(std::move(c), transport_for(entry.id), *logs_.at(entry.id));
    }
    site_index_[entry.id] = sites_.size();
    sites_.push_back(std::move(s));
  }

  if (opt_.attach_ccic && script_.community_enabled) {
    community::CommunityConfig c;
    c.id = manifest_.community_id;
    c.sites = ids;
    for (const auto& s : sites_) c.site_kinds[s.entry.id] = plant::to_string(s.spec.infrastructure_kind);
    c.edges = manifest_.edges;
    c.rules = rbes::load_rules_file(manifest_.community_rules_path);
    for (const auto& cat : advisory_categories(c.rules)) categories.insert(cat);
    c.classifier = community_classifier ? std::move(*community_classifier) : community::train_classifier(ids);
    c.automation_allowlist = manifest_.automation_allowlist;
    c.link = manifest_.link;
    make_log(c.id);
    community_ = std::make_unique<community::CommunityNode>(std::move(c), transport_for(manifest_.community_id),
                                                           *logs_.at(manifest_.community_id));
  }

  // Network: the same impairment on every directed pair.
  std::vector<std::string> nodes = ids;
  nodes.push_back(manifest_.community_id);
  for (const auto& a : nodes)
    for (const auto& b : nodes)
      if (a != b) net_.set_impairment(a, b, script_.network);

  for (const auto& inj : script_.injections) {
    if (!has_site(inj.site)) throw ConfigError("injection names unknown site '" + inj.site + "'");
    if (inj.at_time > script_.duration_s) throw ConfigError("injection after the end of the scenario");
  }
  for (const auto& a : script_.actors) {
    if (a.type == ActionType::operator_action && !has_site(a.site))
      throw ConfigError("actor " + a.id + " acts at unknown site '" + a.site + "'");
    if (a.type == ActionType::community_command && !has_site(a.target_site))
      throw ConfigError("actor " + a.id + " targets unknown site '" + a.target_site + "'");
    if (opt_.attach_ccic && a.trigger.kind == "advisory" && a.trigger.where.contains("category")) {
      const auto& cat = a.trigger.where.at("category");
      if (!cat.is_string() || !categories.count(cat.get<std::string>()))
        throw ConfigError("actor " + a.id + " triggers on unknown advisory category " + cat.dump());
    }
  }
  fired_.assign(script_.actors.size(), 0);
  started_ = std::chrono::steady_clock::now();
  start_logs();
}

Runner::~Runner() = default;

void Runner::start_logs() {
  for (auto& [node, log] : logs_)
    log->append(0.0, node, "run_start",
                {{"run_id", run_id_}, {"scenario", script_.name}, {"seed", script_.seed}, {"node", node}});
}

bool Runner::has_site(const SiteId& s) const { return site_index_.count(s) > 0; }

node::LocalNode& Runner::local_node(const SiteId& s) {
  auto it = site_index_.find(s);
  if (it == site_index_.end()) throw NotFoundError("unknown site '" + s + "'");
  if (!sites_[it->second].node) throw PreconditionError("CCIC layers are detached");
  return *sites_[it->second].node;
}

const node::LocalNode& Runner::local_node(const SiteId& s) const {
  return const_cast<Runner*>(this)->local_node(s);
}

const plant::PlantState& Runner::plant_state(const SiteId& s) const {
  auto it = site_index_.find(s);
  if (it == site_index_.end()) throw NotFoundError("unknown site '" + s + "'");
  return sites_[it->second].state;
}

const node::TickReport& Runner::last_report(const SiteId& s) const {
  auto it = site_index_.find(s);
  if (it == site_index_.end()) throw NotFoundError("unknown site '" + s + "'");
  return sites_[it->second].last;
}

const plant::PlantSpec& Runner::plant_spec(const SiteId& s) const {
  auto it = site_index_.find(s);
  if (it == site_index_.end()) throw NotFoundError("unknown site '" + s + "'");
  return sites_[it->second].spec;
}

events::EventLog& Runner::node_log(const std::string& node) {
  auto it = logs_.find(node);
  if (it == logs_.end()) throw NotFoundError("no log for node '" + node + "'");
  return *it->second;
}

plant::ExternalInputs Runner::inputs_for(const SiteId& consumer) const {
  plant::ExternalInputs in;
  for (const auto& e : manifest_.edges) {
    if (e.consumer_site != consumer || !has_site(e.provider_site)) continue;
    const auto& p = sites_[site_index_.at(e.provider_site)];
    const double a = plant::availability(p.spec, p.state, e.resource);
    auto [it, fresh] = in.emplace(e.resource, a);
    if (!fresh) it->second = std::min(it->second, a);
  }
  return in;
}

void Runner::apply_injection(const plant::InjectionEvent& e) {
  using K = plant::InjectionKind;
  if (e.kind == K::link_loss || e.kind == K::link_restore) {
    const bool sever = e.kind == K::link_loss;
    std::vector<std::pair<std::string, std::string>> pairs;
    if (e.params.contains("peer")) {
      pairs.emplace_back(e.site, e.params.at("peer").get<std::string>());
    } else {
      for (const auto& s : sites_)
        if (s.entry.id != e.site) pairs.emplace_back(e.site, s.entry.id);
      pairs.emplace_back(e.site, manifest_.community_id);
    }
    for (const auto& [a, b] : pairs) set_severed(a, b, sever);
  } else {
    auto& s = sites_[site_index_.at(e.site)];
    s.state = plant::apply_injection(s.spec, s.state, e);
  }
  logs_.at("scenario")->append(now_, e.site, "injection", to_json(e));
}

void Runner::set_severed(const link::NodeId& a, const link::NodeId& b, bool severed) {
  auto imp = script_.network;
  imp.severed = severed;
  net_.set_impairment_both(a, b, imp);
  for (const auto& p : {std::pair{a, b}, std::pair{b, a}}) {
    if (severed)
      severed_.insert(p);
    else
      severed_.erase(p);
  }
}

bool Runner::link_severed(const link::NodeId& a, const link::NodeId& b) const { return severed_.count({a, b}) > 0; }

link::Transport& Runner::transport_for(const link::NodeId& node) {
  if (opt_.transport == TransportKind::in_process) return net_;
  return *sockets_.at(node);
}

void Runner::inject(plant::InjectionEvent e) {
  if (!has_site(e.site)) throw NotFoundError("unknown site '" + e.site + "'");
  live_injections_.push_back(std::move(e));
}

void Runner::step() {
  ++ticks_;
  now_ = static_cast<double>(ticks_) * script_.dt;

  std::vector<plant::ExternalInputs> inputs;
  for (const auto& s : sites_) inputs.push_back(inputs_for(s.entry.id));
  for (std::size_t i = 0; i < sites_.size(); ++i)
    sites_[i].state = plant::step(sites_[i].spec, sites_[i].state, script_.dt, inputs[i]);

  while (next_injection_ < script_.injections.size() && script_.injections[next_injection_].at_time <= now_ + 1e-9)
    apply_injection(script_.injections[next_injection_++]);
  for (const auto& e : live_injections_) apply_injection(e);
  live_injections_.clear();

  if (opt_.record_trajectories)
    for (const auto& s : sites_) trajectories_[s.entry.id].push_back(s.state);

  if (opt_.attach_ccic) {
    const bool clean = script_.injections.empty() || now_ < script_.injections.front().at_time;
    for (auto& s : sites_) {
      s.last = s.node->tick(s.state);
      if (!clean) continue;
      for (const auto& c : s.last.classifications) {
        ++clean_total_;
        clean_anomalous_ += c.anomalous;
      }
    }
    if (community_) community_->tick(now_);
  }
  scan_triggers();
  elapsed_s_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
}

void Runner::scan_triggers() {
  if (!opt_.scripted_actors) return;
  for (;;) {
    const auto fresh = timeline_.since(scanned_);
    scanned_ += fresh.size();
    for (const auto& r : fresh)
      for (std::size_t i = 0; i < script_.actors.size(); ++i) {
        const auto& a = script_.actors[i];
        if (fired_[i] >= a.max_fires || !matches(a.trigger, r)) continue;
        ++fired_[i];
        pending_.push_back({r.sim_time + a.delay_s, i, r});
      }
    auto due = std::stable_partition(pending_.begin(), pending_.end(),
                                     [&](const Pending& p) { return p.due > now_ + 1e-9; });
    if (due == pending_.end()) return;
    std::vector<Pending> run(std::make_move_iterator(due), std::make_move_iterator(pending_.end()));
    pending_.erase(due, pending_.end());
    std::stable_sort(run.begin(), run.end(), [](const Pending& a, const Pending& b) { return a.due < b.due; });
    for (const auto& p : run) fire(p);
  }
}

void Runner::fire(const Pending& p) {
  const auto& a = script_.actors[p.actor];
  try {
    const json params = substitute(a.params, p.trigger);
    if (a.type == ActionType::operator_action) {
      OperatorAction act;
      act.action_id = "act-" + std::to_string(next_action_++);
      act.site_id = a.site;
      act.kind = operator_action_kind_from(a.kind);
      act.params = params;
      act.issued_by = a.id;
      act.sim_time = now_;
      if (a.use_trigger_advisory) act.advisory_id = p.trigger.payload.at("advisory_id").get<std::string>();
      operator_action(act);
    } else {
      CommunityCommand c;
      c.target_site = a.target_site;
      c.kind = a.kind;
      for (const auto& [k, v] : params.items()) c.params[k] = v.is_string() ? v.get<std::string>() : v.dump();
      c.issued_by = a.id;
      c.mode = CommandMode::manual;
      community_command(c);
    }
  } catch (const std::exception& e) {
    logger()->warn("actor {} failed: {}", a.id, e.what());
    logs_.at("scenario")->append(now_, a.site.empty() ? a.target_site : a.site, "actor_error",
                                 {{"actor", a.id}, {"reason", e.what()}});
  }
}

node::ActionOutcome Runner::operator_action(OperatorAction action) {
  auto it = site_index_.find(action.site_id);
  if (it == site_index_.end()) throw NotFoundError("unknown site '" + action.site_id + "'");
  auto& site = sites_[it->second];
  if (!site.node) throw PreconditionError("CCIC layers are detached");
  if (action.action_id.empty()) action.action_id = "act-" + std::to_string(next_action_++);
  action.sim_time = now_;
  auto out = site.node->handle_operator_action(action);
  for (const auto& c : out.plant_commands) site.state = plant::apply_operator_command(site.spec, site.state, c);
  return out;
}

CommunityCommand Runner::community_command(CommunityCommand command) {
  if (!community_) throw PreconditionError("the community layer is not running");
  return community_->issue_command(std::move(command), now_);
}

bool Runner::finished() const { return now_ >= script_.duration_s - 1e-9; }

RunMetrics Runner::run() {
  while (!finished()) step();
  auto m = metrics();
  write_metrics(m);
  return m;
}

RunMetrics Runner::metrics() const {
  RunMetrics m;
  m.run_id = run_id_;
  m.scenario = script_.name;
  m.seed = script_.seed;
  m.ticks = ticks_;
  const auto timeline = timeline_.records();
  for (std::size_t i = 0; i < script_.injections.size(); ++i) {
    const auto& inj = script_.injections[i];
    if (!detectable(inj.kind) || inj.params.value("clear", false)) continue;
    InjectionLatency d;
    d.injection = i;
    d.site = inj.site;
    d.kind = plant::to_string(inj.kind);
    d.target = inj.params.value("target", std::string{});
    d.at_time = inj.at_time;
    for (const auto& r : timeline) {
      if (r.kind != "advisory" || r.site != inj.site || r.sim_time < inj.at_time) continue;
      const auto category = r.payload.value("category", std::string{});
      if (category == "community_directive" || category == "link_status") continue;
      if (!d.target.empty()) {
        const auto vars = r.payload.value("subject_vars", std::vector<std::string>{});
        if (std::find(vars.begin(), vars.end(), d.target) == vars.end()) continue;
      }
      d.latency_s = r.sim_time - inj.at_time;
      d.advisory_id = r.payload.value("advisory_id", std::string{});
      break;
    }
    m.detection.push_back(std::move(d));
  }
  for (const auto& r : timeline)
    if (r.kind == "advisory") ++m.advisory_counts[r.payload.value("severity", std::string("info"))];
  m.clean_classifications = clean_total_;
  m.false_anomaly_rate = clean_total_ ? static_cast<double>(clean_anomalous_) / static_cast<double>(clean_total_) : 0.0;
  m.expected = evaluate_expected(script_.expected_events, merged_timeline());
  m.wall_clock_s = elapsed_s_;
  return m;
}

std::vector<EventRecord> Runner::merged_timeline() const {
  std::vector<std::vector<EventRecord>> per_node;
  for (const auto& [name, log] : logs_) per_node.push_back(log->records());
  return events::merge_timelines(per_node);
}

void Runner::write_metrics(const RunMetrics& m) const {
  if (opt_.out_dir.empty()) return;
  std::ofstream out(fs::path(opt_.out_dir) / "metrics.json");
  out << to_json(m).dump(2) << "\n";
}

json Runner::picture() const {
  // Each site's own link policy, as logged by that site; the community copy
  // goes stale while a site is isolated.
  json policies = json::object();
  for (const auto& s : sites_)
    if (s.node) policies[s.entry.id] = {{"isolated", s.node->isolated()}};
  if (community_) {
    auto j = community::to_json(community_->picture());
    j["community_enabled"] = true;
    j["run_id"] = run_id_;
    j["link_policy"] = policies;
    return j;
  }
  json statuses = json::object();
  for (const auto& s : sites_)
    statuses[s.entry.id] = s.node ? to_json(s.node->last_status()) : json(nullptr);
  return {{"sim_time", now_},
          {"sites", manifest_.site_ids()},
          {"statuses", statuses},
          {"community_enabled", false},
          {"run_id", run_id_},
          {"link_policy", policies}};
}

// --- model loading ---------------------------------------------------------------

std::map<SiteId, SiteModels> load_models(const CommunityManifest& manifest, const std::string& models_dir,
                                         const std::string& history_dir, bool allow_stale) {
  std::map<SiteId, SiteModels> out;
  for (const auto& entry : manifest.sites) {
    const auto spec = plant::load_plant_spec(entry.config_path);
    SiteModels m;
    m.classifiers = models::load_site_models(models_dir, spec, allow_stale);
    if (!history_dir.empty()) {
      const auto archive = tap::load_archive((fs::path(history_dir) / entry.id).string(), spec);
      for (const auto& l : spec.loops) m.original_training[l.loop_id] = detector::extract_training_set(archive, l.input_vars);
    }
    out.emplace(entry.id, std::move(m));
  }
  return out;
}

std::optional<detector::LoopClassifier> load_community_model(const std::string& models_dir) {
  const auto path = models::community_model_path(models_dir);
  if (!fs::exists(path)) return std::nullopt;
  return models::load_classifier(path);
}

// --- replay ----------------------------------------------------------------------

std::vector<EventRecord> replay(const std::vector<std::string>& log_paths) {
  std::vector<std::vector<EventRecord>> logs;
  for (const auto& p : log_paths) logs.push_back(events::read_log(p));
  return events::merge_timelines(logs);
}

std::vector<EventRecord> replay(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("log directory " + dir + " not found");
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    const std::string suffix = ".log.jsonl";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  return replay(paths);
}

}  // namespace ccic::scenario
