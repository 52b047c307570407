#include <catch_amalgamated.hpp>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "ccic/event_log.hpp"

using namespace ccic;
using namespace ccic::events;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "ccic_test_event_log";
  fs::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("records round-trip through NDJSON") {
  EventRecord r{1, 12.25, "water", "advisory", {{"advisory_id", "w-1"}, {"x", 0.1}}};
  CHECK(parse_line(to_line(r)) == r);
  CHECK(to_line(r) == R"({"kind":"advisory","payload":{"advisory_id":"w-1","x":0.1},"sim_time":12.25,"site":"water","v":1})");
}

TEST_CASE("malformed lines carry their line number") {
  try {
    parse_line("{not json", 7);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 7);
  }
  CHECK_THROWS_AS(parse_line(R"({"v":2,"sim_time":0,"site":"a","kind":"k","payload":{}})"), ParseError);
  CHECK_THROWS_AS(parse_line(R"({"v":1,"site":"a","kind":"k","payload":{}})"), ParseError);
}

TEST_CASE("log file mirrors appends and rejects time regression") {
  const auto path = temp_file("mirror.ndjson");
  {
    EventLog log(path.string());
    log.append(0.0, "water", "run_start", {{"run_id", "r1"}});
    log.append(1.0, "water", "advisory", {{"n", 1}});
    log.append(1.0, "water", "advisory", {{"n", 2}});
    CHECK_THROWS_AS(log.append(0.5, "water", "advisory", {}), PreconditionError);
    CHECK(log.size() == 3);
    CHECK(log.since(1).size() == 2);
    CHECK(log.since(9).empty());
  }
  const auto back = read_log(path.string());
  REQUIRE(back.size() == 3);
  CHECK(back[2].payload.at("n") == 2);
  CHECK_THROWS_AS(read_log((fs::temp_directory_path() / "no_such_ccic.ndjson").string()), ConfigError);
}

TEST_CASE("read_log rejects regressions and mixed runs") {
  const auto path = temp_file("bad.ndjson");
  {
    std::ofstream out(path);
    out << to_line({1, 2.0, "a", "k", {}}) << "\n" << to_line({1, 1.0, "a", "k", {}}) << "\n";
  }
  CHECK_THROWS_AS(read_log(path.string()), ParseError);
  {
    std::ofstream out(path);
    out << to_line({1, 0.0, "a", "run_start", {{"run_id", "x"}}}) << "\n"
        << to_line({1, 0.0, "a", "run_start", {{"run_id", "y"}}}) << "\n";
  }
  CHECK_THROWS_AS(read_log(path.string()), ParseError);
}

TEST_CASE("merged timeline is ordered by time with stable ties") {
  std::vector<EventRecord> a = {{1, 0.0, "a", "run_start", {{"run_id", "r"}}}, {1, 2.0, "a", "x", {}}, {1, 5.0, "a", "y", {}}};
  std::vector<EventRecord> b = {{1, 0.0, "b", "run_start", {{"run_id", "r"}}}, {1, 2.0, "b", "x", {}}, {1, 3.0, "b", "z", {}}};
  const auto m = merge_timelines({a, b});
  REQUIRE(m.size() == 6);
  std::vector<std::string> order;
  for (const auto& r : m) order.push_back(r.site + ":" + r.kind);
  CHECK(order == std::vector<std::string>{"a:run_start", "b:run_start", "a:x", "b:x", "b:z", "a:y"});
  b[0].payload["run_id"] = "other";
  CHECK_THROWS_AS(merge_timelines({a, b}), ParseError);
}

TEST_CASE("concurrent readers see a consistent prefix") {
  EventLog log;
  std::atomic<bool> done{false};
  std::size_t observed = 0;
  log.subscribe([&](const EventRecord&) { ++observed; });
  std::thread reader([&] {
    while (!done) {
      const auto recs = log.records();
      for (std::size_t i = 1; i < recs.size(); ++i) REQUIRE(recs[i - 1].sim_time <= recs[i].sim_time);
    }
  });
  for (int i = 0; i < 2000; ++i) log.append(i * 0.5, "s", "tick", {});
  done = true;
  reader.join();
  CHECK(log.size() == 2000);
  CHECK(observed == 2000);
}
