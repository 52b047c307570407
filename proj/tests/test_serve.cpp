#include <catch_amalgamated.hpp>

#include <httplib.h>

#include <atomic>
#include <thread>

#include "ccic/serve.hpp"
#include "node_support.hpp"

using namespace ccic;
using nlohmann::json;

namespace {

std::unique_ptr<scenario::Runner> make_runner(scenario::ScenarioScript script) {
  scenario::RunOptions opt;
  opt.scripted_actors = false;  // the API stands in for the operators
  return std::make_unique<scenario::Runner>(std::move(script),
                                            scenario::load_community_manifest("configs/community.json"),
                                            testing::reference_models(), testing::reference_community_classifier(),
                                            opt);
}

void step_to(serve::Session& s, double t) {
  while (s.with([](scenario::Runner& r) { return r.now(); }) < t && s.step()) {
  }
}

std::string first_critical(serve::Session& s, const std::string& site) {
  const auto list = serve::get_advisories(s, site).body;
  for (const auto& a : list)
    if (a.at("severity") == "critical") return a.at("advisory_id").get<std::string>();
  return {};
}

}  // namespace

TEST_CASE("fresh clean run shows every site nominal", "[serve]") {
  serve::Session s(make_runner(scenario::free_play(1000)));
  step_to(s, 60);
  const auto r = serve::get_picture(s);
  REQUIRE(r.status == 200);
  CHECK(r.body.at("community_state").at("label") == "nominal");
  for (const auto& site : {"power", "water", "telecom"}) {
    const auto& st = r.body.at("statuses").at(site);
    REQUIRE_FALSE(st.is_null());
    for (const auto& loop : st.at("loops")) CHECK(loop.at("anomaly") == false);
    CHECK(r.body.at("link_policy").at(site).at("isolated") == false);
  }
}

TEST_CASE("API errors map to status codes", "[serve]") {
  serve::Session s(make_runner(scenario::free_play(1000)));
  step_to(s, 5);
  CHECK(serve::get_advisories(s, "gas").status == 404);
  CHECK(serve::post_action(s, "water", R"({"kind": "acknowledge", "advisory_id": "nope"})").status == 404);
  CHECK(serve::post_action(s, "gas", R"({"kind": "acknowledge", "advisory_id": "x"})").status == 404);
  CHECK(serve::post_action(s, "water", "{not json").status == 400);
  CHECK(serve::post_action(s, "water", R"({"kind": "dance"})").status == 400);
  CHECK(serve::post_action(s, "water", R"({"kind": "acknowledge", "site_id": "power", "advisory_id": "x"})").status ==
        400);
  CHECK(serve::post_command(s, R"({"target_site": "gas", "kind": "reroute_resource", "issued_by": "council"})")
            .status == 404);
  CHECK(serve::post_command(s, R"({"target_site": "water", "kind": "nope", "issued_by": "council"})").status == 400);
  CHECK(serve::post_command(s, R"({"target_site": "water", "kind": "reroute_resource"})").status == 400);
  CHECK(serve::get_log(s, "abc").status == 400);
  CHECK(serve::get_log(s, "-1").status == 400);
}

TEST_CASE("acknowledging twice is a conflict", "[serve]") {
  auto script = scenario::load_script("scenarios/scenario1_water_attack.json");
  serve::Session s(make_runner(script));
  step_to(s, 135);
  const auto id = first_critical(s, "water");
  REQUIRE_FALSE(id.empty());
  const json body = {{"kind", "acknowledge"}, {"advisory_id", id}, {"issued_by", "op"}};
  CHECK(serve::post_action(s, "water", body.dump()).status == 200);
  CHECK(serve::post_action(s, "water", body.dump()).status == 409);
}

TEST_CASE("isolation posted through the API shows in the picture and the log", "[serve]") {
  auto script = scenario::load_script("scenarios/scenario1_water_attack.json");
  serve::Session s(make_runner(script));
  step_to(s, 135);
  const auto id = first_critical(s, "water");
  REQUIRE_FALSE(id.empty());
  const auto before = serve::get_log(s, "").body.at("next").get<std::size_t>();
  const json body = {{"kind", "isolate_network"}, {"advisory_id", id}, {"issued_by", "water-operator"}};
  const auto r = serve::post_action(s, "water", body.dump());
  REQUIRE(r.status == 200);
  step_to(s, 137);
  CHECK(serve::get_picture(s).body.at("link_policy").at("water").at("isolated") == true);

  const auto log = serve::get_log(s, std::to_string(before)).body;
  bool saw_policy = false, saw_action = false;
  for (const auto& rec : log.at("records")) {
    saw_policy |= rec.at("kind") == "link_policy" && rec.at("payload").at("isolated") == true;
    saw_action |= rec.at("kind") == "operator_action";
  }
  CHECK(saw_policy);
  CHECK(saw_action);
}

TEST_CASE("community commands posted through the API reach the site", "[serve]") {
  serve::Session s(make_runner(scenario::free_play(1000)));
  step_to(s, 10);
  const auto r = serve::post_command(
      s, R"({"target_site": "water", "kind": "deploy_countermeasures", "issued_by": "council"})");
  REQUIRE(r.status == 200);
  const auto id = r.body.at("command_id").get<std::string>();
  step_to(s, 20);
  bool received = false;
  const auto log = serve::get_log(s, "0").body;
  for (const auto& rec : log.at("records"))
    received |= rec.at("site") == "water" && rec.at("kind") == "downlink_receipt";
  CHECK(received);
  CHECK(serve::post_command(s, json{{"command_id", id},
                                    {"target_site", "water"},
                                    {"kind", "deploy_countermeasures"},
                                    {"issued_by", "council"}}
                                   .dump())
            .status == 409);
}

TEST_CASE("HTTP server serves the API and streams the log", "[serve][http]") {
  serve::Session s(make_runner(scenario::free_play(100000)));
  serve::ApiServer server(s);
  server.start("127.0.0.1", 0);
  REQUIRE(server.port() > 0);
  std::atomic<bool> stop{false};
  std::thread runner([&] { s.run_paced(200.0, stop); });

  httplib::Client cli("127.0.0.1", server.port());
  cli.set_read_timeout(5, 0);
  auto pic = cli.Get("/api/v1/picture");
  REQUIRE(pic);
  CHECK(pic->status == 200);
  CHECK(json::parse(pic->body).contains("community_state"));

  auto adv = cli.Get("/api/v1/sites/gas/advisories");
  REQUIRE(adv);
  CHECK(adv->status == 404);
  auto bad = cli.Post("/api/v1/sites/water/actions", "{oops", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto missing = cli.Post("/api/v1/sites/water/actions", R"({"kind": "acknowledge", "advisory_id": "nope"})",
                          "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  auto log = cli.Get("/api/v1/log?since=0");
  REQUIRE(log);
  CHECK(log->status == 200);
  CHECK(json::parse(log->body).at("records").size() > 0);

  // The stream delivers records from the start, each as one SSE frame.
  std::string received;
  std::size_t frames = 0;
  auto st = cli.Get("/api/v1/stream?since=0", [&](const char* data, std::size_t n) {
    received.append(data, n);
    std::size_t pos;
    while ((pos = received.find("\n\n")) != std::string::npos) {
      const auto frame = received.substr(0, pos);
      received.erase(0, pos + 2);
      const auto data_at = frame.find("data: ");
      if (data_at == std::string::npos) continue;
      const auto rec = json::parse(frame.substr(data_at + 6));
      if (frames == 0) CHECK(rec.at("kind") == "run_start");
      ++frames;
    }
    return frames < 20;
  });
  CHECK(frames >= 20);

  stop = true;
  runner.join();
  server.stop();
}
