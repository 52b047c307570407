#include <catch_amalgamated.hpp>

#include <algorithm>

#include "ccic/local_node.hpp"
#include "node_support.hpp"

using namespace ccic;
using namespace ccic::testing;
using node::LocalNode;
using node::LocalNodeConfig;

namespace {

plant::InjectionEvent spoof(const std::string& site, const std::string& var, double offset, double at) {
  return {at, site, plant::InjectionKind::sensor_spoof, {{"target", var}, {"offset", offset}}};
}

bool names_var(const rbes::Advisory& a, const std::string& var) {
  return std::find(a.subject_vars.begin(), a.subject_vars.end(), var) != a.subject_vars.end();
}

std::size_t count_kind(const events::EventLog& log, const std::string& kind) {
  const auto recs = log.records();
  return static_cast<std::size_t>(
      std::count_if(recs.begin(), recs.end(), [&](const events::EventRecord& r) { return r.kind == kind; }));
}

// Drives one site with a node attached.
struct Harness {
  link::InProcessNetwork net;
  events::EventLog log;
  LocalNode node;
  plant::PlantState state;
  link::Endpoint community{"community", net};  // acknowledges the uplink
  std::vector<node::TickReport> reports;
  std::vector<link::Envelope> uplinked;

  explicit Harness(LocalNodeConfig cfg) : node(std::move(cfg), net, log), state(plant::initial_state(node.config().plant)) {
    community.add_peer(node.site());
  }

  void run_until(SimTime end, const std::vector<plant::InjectionEvent>& injections = {}) {
    const auto& p = node.config().plant;
    while (state.sim_time < end) {
      state = plant::step(p, state, 1.0);
      for (const auto& inj : injections)
        if (inj.at_time == state.sim_time) state = plant::apply_injection(p, state, inj);
      reports.push_back(node.tick(state));
      for (auto& e : community.receive(state.sim_time)) uplinked.push_back(std::move(e));
      community.service(state.sim_time);
    }
  }

  void apply(const node::ActionOutcome& out) {
    for (const auto& c : out.plant_commands) state = plant::apply_operator_command(node.config().plant, state, c);
  }
};

}  // namespace

TEST_CASE("configuration mismatches fail at startup") {
  link::InProcessNetwork net;
  events::EventLog log;
  auto cfg = node_config("water_plant", "water_local");
  SECTION("missing classifier") {
    cfg.classifiers.erase("chlorine");
    CHECK_THROWS_WITH(LocalNode(cfg, net, log), Catch::Matchers::ContainsSubstring("no classifier for loop 'chlorine'"));
  }
  SECTION("classifier for another loop") {
    cfg.classifiers["chlorine"] = cfg.classifiers.at("filter");
    CHECK_THROWS_AS(LocalNode(cfg, net, log), ConfigError);
  }
  SECTION("auto-apply of a plant-affecting kind") {
    cfg.auto_apply = {"ration_resource"};
    CHECK_THROWS_AS(LocalNode(cfg, net, log), ConfigError);
  }
}

TEST_CASE("clean steady state raises nothing") {
  Harness h(node_config("water_plant", "water_local"));
  h.run_until(300);
  CHECK(h.node.advisories().empty());
  for (const auto& l : h.node.last_status().loops) CHECK_FALSE(l.anomaly);
  CHECK(h.node.last_status().seq == 300);
  CHECK(h.node.last_status().availability.at("treated_water") == Catch::Approx(1.0));
  CHECK(count_kind(h.log, "uplink_send") == 300);
  CHECK(h.uplinked.size() == 300);
  CHECK(h.uplinked.back().kind == link::Kind::STATUS_UP);
}

TEST_CASE("flow spoof is surfaced within five ticks") {
  Harness h(node_config("water_plant", "water_local"));
  h.run_until(120);
  REQUIRE(h.node.advisories().empty());
  h.run_until(200, {spoof("water", "dist_flow", 25.0, 121.0)});
  const auto advisories = h.node.advisories();
  REQUIRE_FALSE(advisories.empty());
  const auto first = std::find_if(advisories.begin(), advisories.end(), [](const rbes::Advisory& a) {
    return names_var(a, "dist_flow") && a.severity != rbes::Severity::info;
  });
  REQUIRE(first != advisories.end());
  CHECK(first->sim_time - 121.0 <= 5.0);
  CHECK(first->category == "sensor_inconsistency");
  CHECK(first->severity == rbes::Severity::critical);
  CHECK_FALSE(first->remote_input);
  // One episode, one advisory.
  const auto n = std::count_if(advisories.begin(), advisories.end(),
                               [](const rbes::Advisory& a) { return a.category == "sensor_inconsistency"; });
  CHECK(n == 1);
  CHECK(count_kind(h.log, "advisory") == advisories.size());
  CHECK(h.node.last_status().advisory_counts.at("critical") >= 1);
}

TEST_CASE("operator actions") {
  Harness h(node_config("water_plant", "water_local"));
  h.run_until(60, {spoof("water", "dist_flow", 25.0, 30.0)});
  const auto advisories = h.node.advisories();
  const auto spoofed = std::find_if(advisories.begin(), advisories.end(),
                                    [](const rbes::Advisory& a) { return a.category == "sensor_inconsistency"; });
  REQUIRE(spoofed != advisories.end());
  const auto id = spoofed->advisory_id;

  OperatorAction ack{"a1", "water", id, OperatorActionKind::acknowledge, {}, "operator", 60};
  auto out = h.node.handle_operator_action(ack);
  CHECK(out.plant_commands.empty());
  CHECK(h.node.advisory(id)->ack_state == rbes::AckState::acknowledged);
  CHECK_THROWS_AS(h.node.handle_operator_action(ack), ConflictError);

  OperatorAction unknown{"a2", "water", std::string("water-999"), OperatorActionKind::acknowledge, {}, "operator", 60};
  CHECK_THROWS_AS(h.node.handle_operator_action(unknown), NotFoundError);

  OperatorAction bad{"a3", "water", id, OperatorActionKind::apply_suggestion, {{"suggestion", 7}}, "operator", 60};
  CHECK_THROWS_AS(h.node.handle_operator_action(bad), PreconditionError);

  SECTION("isolate suggestion flips link policy only") {
    OperatorAction iso{"a4", "water", id, OperatorActionKind::apply_suggestion, {{"suggestion", 0}}, "operator", 60};
    out = h.node.handle_operator_action(iso);
    CHECK(out.plant_commands.empty());
    CHECK(h.node.isolated());
    CHECK(h.node.advisory(id)->ack_state == rbes::AckState::actioned);
    CHECK_THROWS_AS(h.node.handle_operator_action(iso), ConflictError);
    h.run_until(61);
    CHECK(h.node.last_status().isolated);
    REQUIRE(h.node.last_status().operator_actions.size() == 2);
    CHECK(h.node.last_status().operator_actions[1].kind == "apply_suggestion");
  }

  SECTION("manual-control suggestion reaches the plant on the next tick") {
    OperatorAction manual{"a5", "water", id, OperatorActionKind::apply_suggestion, {{"suggestion", 2}}, "operator", 60};
    out = h.node.handle_operator_action(manual);
    REQUIRE(out.plant_commands.size() == 1);
    CHECK(out.plant_commands[0].kind == plant::PlantCommandKind::set_manual);
    CHECK(out.plant_commands[0].loop == "dist_flow");
    h.apply(out);
    h.run_until(61);
    CHECK(h.state.loops.at("dist_flow").manual);
    CHECK(h.node.manual_loops().count("dist_flow"));
  }

  SECTION("sensor validation becomes a fact") {
    OperatorAction val{"a6", "water", std::nullopt, OperatorActionKind::validate_sensor, {{"var", "dist_flow"}}, "operator", 60};
    h.node.handle_operator_action(val);
    h.run_until(62);
    const auto& facts = h.node.last_inference().facts;
    CHECK(std::any_of(facts.begin(), facts.end(), [](const rbes::Fact& f) { return f.predicate == "validated"; }));
    OperatorAction nosuch{"a7", "water", std::nullopt, OperatorActionKind::validate_sensor, {{"var", "nope"}}, "operator", 62};
    CHECK_THROWS_AS(h.node.handle_operator_action(nosuch), PreconditionError);
  }

  CHECK(count_kind(h.log, "operator_action") >= 2);
}

TEST_CASE("community commands become advice, never actuation") {
  auto cfg = node_config("water_plant", "water_local");
  Harness h(cfg);
  auto& community = h.community;
  auto command = [](std::string id, std::string target, std::string kind) {
    CommunityCommand c;
    c.command_id = std::move(id);
    c.target_site = std::move(target);
    c.kind = std::move(kind);
    c.issued_by = "council";
    return to_json(c);
  };
  h.run_until(10);
  community.send("water", link::Kind::COMMAND_DOWN, command("c1", "water", "precautionary_isolate"), 10);
  community.send("water", link::Kind::COMMAND_DOWN, command("c1", "water", "precautionary_isolate"), 10);
  community.send("water", link::Kind::COMMAND_DOWN, command("c2", "power", "prepare_for_outage"), 10);
  community.send("water", link::Kind::COMMAND_DOWN, command("c3", "water", "paint_it_black"), 10);
  const auto before = h.state;
  h.run_until(12);

  const auto advisories = h.node.advisories();
  const auto directives = std::count_if(advisories.begin(), advisories.end(), [](const rbes::Advisory& a) {
    return a.category == "community_directive" && a.severity == rbes::Severity::critical;
  });
  CHECK(directives == 1);
  CHECK(std::any_of(advisories.begin(), advisories.end(), [](const rbes::Advisory& a) {
    return a.message.find("paint_it_black") != std::string::npos;
  }));
  for (const auto& a : advisories) CHECK(a.remote_input);
  CHECK_FALSE(h.node.isolated());  // advice only
  CHECK(count_kind(h.log, "downlink_receipt") == 4);
  CHECK(count_kind(h.log, "command_rejected") == 1);
  CHECK(count_kind(h.log, "command_duplicate") == 1);
  CHECK(h.node.last_status().command_acks.empty());
  CHECK(h.reports.at(10).status.command_acks == std::vector<std::string>{"c1", "c3"});
  (void)before;
}

TEST_CASE("auto-apply allowlist isolates without an operator") {
  auto cfg = node_config("water_plant", "water_local");
  cfg.auto_apply = {"precautionary_isolate"};
  Harness h(cfg);
  auto& community = h.community;
  CommunityCommand c{"c9", "water", "precautionary_isolate", {}, "rules", CommandMode::automated, 5};
  h.run_until(5);
  community.send("water", link::Kind::COMMAND_DOWN, to_json(c), 5);
  h.run_until(7);
  CHECK(h.node.isolated());
  CHECK(count_kind(h.log, "link_policy") == 1);
}

TEST_CASE("plant trajectory is identical with or without the node") {
  const auto& site = trained_site("water_plant");
  const std::vector<plant::InjectionEvent> injections = {spoof("water", "dist_flow", 25.0, 40.0),
                                                         spoof("water", "chlorine_residual", 0.5, 80.0)};
  auto run = [&](bool attach) {
    std::optional<Harness> h;
    if (attach) h.emplace(node_config("water_plant", "water_local"));
    auto state = plant::initial_state(site.plant);
    std::vector<plant::PlantState> traj;
    for (int t = 0; t < 150; ++t) {
      state = plant::step(site.plant, state, 1.0);
      for (const auto& inj : injections)
        if (inj.at_time == state.sim_time) state = plant::apply_injection(site.plant, state, inj);
      if (h) h->node.tick(state);
      traj.push_back(state);
    }
    return traj;
  };
  const auto with = run(true);
  const auto without = run(false);
  REQUIRE(with.size() == without.size());
  for (std::size_t i = 0; i < with.size(); ++i) REQUIRE(with[i] == without[i]);
}

TEST_CASE("local advice survives losing every link") {
  const std::vector<plant::InjectionEvent> injections = {spoof("water", "dist_flow", 25.0, 50.0),
                                                         spoof("water", "intake_pump_speed", 20.0, 400.0)};
  auto run = [&](bool severed) {
    auto cfg = node_config("water_plant", "water_local");
    cfg.peers = {"power", "telecom"};
    Harness h(cfg);
    if (severed)
      for (const auto* peer : {"community", "power", "telecom"})
        h.net.set_impairment_both("water", peer, {0.0, 0.0, 0.0, true});
    h.run_until(700, injections);
    std::vector<std::vector<std::string>> per_tick;
    for (const auto& r : h.reports) {
      std::vector<std::string> keys;
      for (const auto& a : r.new_advisories)
        if (!a.remote_input && a.category != "link_status") keys.push_back(a.episode_key + "|" + a.message);
      per_tick.push_back(keys);
    }
    return std::make_pair(per_tick, h.node.link().buffered("community"));
  };
  const auto [connected, buffered_connected] = run(false);
  const auto [severed, buffered_severed] = run(true);
  CHECK(connected == severed);
  std::size_t total = 0;
  for (const auto& t : connected) total += t.size();
  CHECK(total >= 2);
  CHECK(buffered_connected <= 1);  // only the latest status awaits its ack
  CHECK(buffered_severed >= 700);  // statuses held for replay
}

TEST_CASE("peer alert from a power anomaly reaches the water operator") {
  link::InProcessNetwork net;
  events::EventLog power_log, water_log;
  auto pcfg = node_config("power_grid", "power_local");
  pcfg.uplink = false;
  pcfg.peers = {"water"};
  auto wcfg = node_config("water_plant", "water_local");
  wcfg.uplink = false;
  wcfg.peers = {"power"};
  LocalNode power(pcfg, net, power_log), water(wcfg, net, water_log);
  auto ps = plant::initial_state(pcfg.plant);
  auto ws = plant::initial_state(wcfg.plant);
  for (int t = 1; t <= 60; ++t) {
    ps = plant::step(pcfg.plant, ps, 1.0);
    ws = plant::step(wcfg.plant, ws, 1.0);
    if (t == 20) ps = plant::apply_injection(pcfg.plant, ps, spoof("power", "feeder_3_voltage_kv", 3.0, 20));
    power.tick(ps);
    water.tick(ws);
  }
  const auto advisories = water.advisories();
  const auto it = std::find_if(advisories.begin(), advisories.end(),
                               [](const rbes::Advisory& a) { return a.category == "pump_supply_risk"; });
  REQUIRE(it != advisories.end());
  CHECK(it->remote_input);
  CHECK(it->message.find("power") != std::string::npos);
  CHECK(count_kind(water_log, "peer_receipt") >= 1);
}

TEST_CASE("retraining swaps the whole classifier set at once") {
  auto cfg = node_config("water_plant", "water_local");
  cfg.retrain.enabled = true;
  cfg.retrain.period_s = 100;
  cfg.retrain.min_rows = 50;
  cfg.retrain.training.max_epochs = 5;
  Harness h(cfg);
  const auto initial = LocalNode::fingerprint_of(*h.node.classifiers());
  h.run_until(250);
  std::set<std::string> after;
  for (const auto& r : h.log.records())
    if (r.kind == "retrain") after.insert(r.payload.at("model_after").get<std::string>());
  REQUIRE(after.size() == 2);  // at t=100 and t=200
  for (const auto& r : h.reports) {
    const bool known = r.model_fingerprint == initial || after.count(r.model_fingerprint);
    CHECK(known);
  }
  CHECK(h.reports.at(99).model_fingerprint == initial);
  CHECK(h.reports.at(100).model_fingerprint != initial);
}

TEST_CASE("retraining with fraction zero keeps the fingerprints") {
  auto cfg = node_config("water_plant", "water_local");
  cfg.retrain.enabled = true;
  cfg.retrain.period_s = 60;
  cfg.retrain.min_rows = 50;
  cfg.retrain.fraction = 0.0;
  Harness h(cfg);
  const auto initial = LocalNode::fingerprint_of(*h.node.classifiers());
  h.run_until(130);
  CHECK(LocalNode::fingerprint_of(*h.node.classifiers()) == initial);
}

TEST_CASE("retraining is skipped without enough clean data") {
  auto cfg = node_config("water_plant", "water_local");
  cfg.retrain.enabled = true;
  cfg.retrain.period_s = 30;
  cfg.retrain.min_rows = 1000;
  Harness h(cfg);
  h.run_until(40);
  CHECK(count_kind(h.log, "retrain") == 0);
  CHECK(count_kind(h.log, "retrain_skipped") == cfg.plant.loops.size());
}

TEST_CASE("edge peers follow interdependency edges") {
  const auto edges = reference_edges();
  const std::vector<SiteId> sites = {"power", "water", "telecom"};
  CHECK(node::edge_peers("water", edges, sites) == std::vector<SiteId>{"power", "telecom"});
  CHECK(node::edge_peers("power", edges, sites) == std::vector<SiteId>{"telecom", "water"});
}
