#include <catch_amalgamated.hpp>
#include <random>

#include "ccic/link.hpp"

using namespace ccic;
using namespace ccic::link;

namespace {

struct Pair {
  InProcessNetwork net;
  Endpoint a;
  Endpoint b;
  std::vector<Envelope> at_a, at_b;

  explicit Pair(std::uint64_t seed = 1, LinkConfig cfg = {}) : net(seed), a("a", net, cfg), b("b", net, cfg) {
    a.add_peer("b");
    b.add_peer("a");
  }

  void tick(SimTime t) {
    a.service(t);
    b.service(t);
    for (auto& e : b.receive(t)) at_b.push_back(std::move(e));
    for (auto& e : a.receive(t)) at_a.push_back(std::move(e));
  }
};

std::vector<std::uint64_t> seqs(const std::vector<Envelope>& v) {
  std::vector<std::uint64_t> out;
  for (const auto& e : v) out.push_back(e.seq);
  return out;
}

std::vector<std::uint64_t> iota(std::uint64_t from, std::uint64_t to) {
  std::vector<std::uint64_t> out;
  for (auto i = from; i <= to; ++i) out.push_back(i);
  return out;
}

}  // namespace

TEST_CASE("frame encoding is a big-endian length prefix plus JSON") {
  Envelope e;
  e.seq = 7;
  e.sim_time = 12.5;
  e.src = "water";
  e.dst = "community";
  e.kind = Kind::STATUS_UP;
  e.payload = {{"x", 1}};
  const auto frame = encode_frame(e);
  const std::string body = frame.substr(4);
  REQUIRE(frame.size() == body.size() + 4);
  CHECK(static_cast<unsigned char>(frame[0]) == 0);
  CHECK(static_cast<unsigned char>(frame[1]) == 0);
  CHECK(static_cast<unsigned char>(frame[2]) == ((body.size() >> 8) & 0xff));
  CHECK(static_cast<unsigned char>(frame[3]) == (body.size() & 0xff));
  CHECK(body ==
        R"({"dst":"community","kind":"STATUS_UP","payload":{"x":1},"seq":7,"sim_time":12.5,"src":"water","v":1})");

  FrameDecoder dec;
  const std::string two = frame + frame;
  for (char c : two.substr(0, 10)) dec.feed(&c, 1);
  CHECK_FALSE(dec.next().has_value());
  dec.feed(two.substr(10));
  auto first = dec.next();
  auto second = dec.next();
  REQUIRE(first);
  REQUIRE(second);
  CHECK(*first == e);
  CHECK(*second == e);
  CHECK_FALSE(dec.next());
  CHECK(dec.pending_bytes() == 0);
}

TEST_CASE("malformed frames are protocol errors") {
  FrameDecoder small(16);
  small.feed(std::string("\x00\x00\x01\x00", 4));
  CHECK_THROWS_AS(small.next(), ProtocolError);

  FrameDecoder dec;
  dec.feed(std::string("\x00\x00\x00\x03", 4) + "{x}");
  CHECK_THROWS_AS(dec.next(), ProtocolError);

  auto j = to_json(Envelope{});
  j["v"] = 2;
  CHECK_THROWS_AS(envelope_from_json(j), ProtocolError);
  j["v"] = 1;
  j["kind"] = "BOGUS";
  CHECK_THROWS_AS(envelope_from_json(j), ProtocolError);
  j.erase("kind");
  CHECK_THROWS_AS(envelope_from_json(j), ProtocolError);
}

TEST_CASE("healthy link delivers in the same tick") {
  Pair p;
  p.a.send("b", Kind::STATUS_UP, {{"n", 1}}, 0.0);
  p.tick(0.0);
  REQUIRE(p.at_b.size() == 1);
  CHECK(p.at_b[0].payload.at("n") == 1);
  CHECK(p.a.health("b") == Health::up);
  p.tick(1.0);
  CHECK(p.a.buffered("b") == 0);  // acknowledged
}

TEST_CASE("down link buffers and replays in order on restore") {
  Pair p;
  p.net.set_impairment_both("a", "b", {0.0, 0.0, 0.0, true});
  for (int t = 0; t < 40; ++t) {
    p.a.send("b", Kind::PEER_ALERT, {{"t", t}}, t);
    p.tick(t);
  }
  CHECK(p.at_b.empty());
  CHECK(p.a.health("b") == Health::down);
  CHECK(p.a.buffered("b") == 40);
  p.net.set_impairment_both("a", "b", {});
  for (int t = 40; t < 60; ++t) p.tick(t);
  CHECK(seqs(p.at_b) == iota(1, 40));
  CHECK(p.a.health("b") == Health::up);
  CHECK(p.b.stats("a").delivered == 40);
}

TEST_CASE("total loss marks the link down after three missed heartbeats") {
  Pair p;
  SimTime last_delivery = 0.0;
  for (int t = 0; t < 20; ++t) p.tick(t);
  last_delivery = p.b.last_heard("a");
  p.net.set_impairment("a", "b", {1.0, 0.0, 0.0, false});
  SimTime marked = -1.0;
  for (int t = 20; t < 60 && marked < 0; ++t) {
    p.tick(t);
    if (p.b.health("a") == Health::down) marked = t;
  }
  REQUIRE(marked > 0);
  const double bound = 3 * 5.0;
  CHECK(marked - last_delivery >= bound);
  CHECK(marked - last_delivery <= bound + 1.0);
  auto changes = p.b.take_health_changes();
  REQUIRE_FALSE(changes.empty());
  CHECK(changes.back().to == Health::down);
}

TEST_CASE("random loss and delay without partition: exactly once, in order") {
  std::mt19937_64 rng(424242);
  for (int trial = 0; trial < 40; ++trial) {
    Pair p(1000 + trial);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double drop = 0.6 * u(rng);
    const double delay = 4.0 * u(rng);
    p.net.set_impairment_both("a", "b", {drop, 0.0, delay, false});
    int sent_ab = 0, sent_ba = 0;
    const int outage_start = 50 + static_cast<int>(100 * u(rng));
    const int outage_len = static_cast<int>(60 * u(rng));
    for (int t = 0; t < 300; ++t) {
      if (t == outage_start) p.net.set_impairment_both("a", "b", {1.0, 0.0, 0.0, true});
      if (t == outage_start + outage_len) p.net.set_impairment_both("a", "b", {drop, 0.0, delay, false});
      const int burst = static_cast<int>(4 * u(rng));
      for (int k = 0; k < burst; ++k) {
        p.a.send("b", Kind::STATUS_UP, {{"k", ++sent_ab}}, t);
        if (u(rng) < 0.5) p.b.send("a", Kind::COMMAND_DOWN, {{"k", ++sent_ba}}, t);
      }
      p.tick(t);
    }
    p.net.set_impairment_both("a", "b", {});
    for (int t = 300; t < 400; ++t) p.tick(t);
    INFO("trial " << trial << " drop " << drop << " delay " << delay);
    CHECK(seqs(p.at_b) == iota(1, static_cast<std::uint64_t>(sent_ab)));
    CHECK(seqs(p.at_a) == iota(1, static_cast<std::uint64_t>(sent_ba)));
    for (std::size_t i = 0; i < p.at_b.size(); ++i) CHECK(p.at_b[i].payload.at("k") == static_cast<int>(i) + 1);
  }
}

TEST_CASE("isolation suppresses everything but heartbeats, then replays") {
  Pair p;
  for (int t = 0; t < 5; ++t) p.tick(t);
  p.a.set_isolated(true);
  const auto mark = p.a.audit().size();
  for (int t = 5; t < 50; ++t) {
    p.a.send("b", Kind::ADVISORY_UP, {{"t", t}}, t);
    p.b.send("a", Kind::COMMAND_DOWN, {{"t", t}}, t);
    p.tick(t);
  }
  std::size_t heartbeats = 0;
  for (std::size_t i = mark; i < p.a.audit().size(); ++i) {
    CHECK(p.a.audit()[i].kind == Kind::HEARTBEAT);
    ++heartbeats;
  }
  CHECK(heartbeats >= 8);
  CHECK(p.at_b.empty());
  CHECK(p.at_a.empty());
  CHECK(p.b.health("a") == Health::up);  // heartbeats keep the link alive
  p.a.set_isolated(false);
  for (int t = 50; t < 60; ++t) p.tick(t);
  CHECK(seqs(p.at_b) == iota(1, 45));
  CHECK(seqs(p.at_a) == iota(1, 45));
}

TEST_CASE("buffer overflow drops the oldest and the receiver skips the gap") {
  LinkConfig cfg;
  cfg.buffer_capacity = 10;
  Pair p(3, cfg);
  p.net.set_impairment_both("a", "b", {0.0, 0.0, 0.0, true});
  for (int t = 0; t < 25; ++t) {
    p.a.send("b", Kind::STATUS_UP, {{"t", t}}, t);
    p.tick(t);
  }
  CHECK(p.a.stats("b").overflow_dropped == 15);
  CHECK(p.a.buffered("b") == 10);
  p.net.set_impairment_both("a", "b", {});
  for (int t = 25; t < 40; ++t) p.tick(t);
  CHECK(seqs(p.at_b) == iota(16, 25));
  CHECK(p.b.stats("a").gap_skipped == 15);
  CHECK(p.a.health("b") == Health::up);
}

TEST_CASE("overflow on a live link reports degraded health") {
  LinkConfig cfg;
  cfg.buffer_capacity = 3;
  Pair p(4, cfg);
  p.net.set_impairment("b", "a", {1.0, 0.0, 0.0, false});  // acks never return
  for (int i = 0; i < 5; ++i) p.a.send("b", Kind::STATUS_UP, {}, 0.0);
  CHECK(p.a.health("b") == Health::degraded);
  auto ch = p.a.take_health_changes();
  REQUIRE(ch.size() == 1);
  CHECK(ch[0].to == Health::degraded);
}

namespace {
// Delivers every transmission twice.
class Doubling : public Transport {
 public:
  void transmit(const Envelope& e, SimTime) override {
    q_.push_back(e);
    q_.push_back(e);
  }
  std::vector<Envelope> collect(const NodeId& node, SimTime) override {
    std::vector<Envelope> out, keep;
    for (auto& e : q_) (e.dst == node ? out : keep).push_back(e);
    q_ = keep;
    return out;
  }

 private:
  std::vector<Envelope> q_;
};
}  // namespace

TEST_CASE("duplicate envelopes are delivered once") {
  Doubling t;
  Endpoint a("a", t), b("b", t);
  a.add_peer("b");
  b.add_peer("a");
  a.send("b", Kind::PEER_ALERT, {{"fact", "anomaly"}}, 0.0);
  a.send("b", Kind::PEER_ALERT, {{"fact", "anomaly"}}, 0.0);
  auto got = b.receive(0.0);
  CHECK(seqs(got) == iota(1, 2));
  CHECK(b.stats("a").duplicates == 2);
}

TEST_CASE("misconfigured sends and foreign traffic") {
  InProcessNetwork net;
  LinkConfig cfg;
  cfg.token = "secret";
  Endpoint a("a", net, cfg), b("b", net);
  a.add_peer("b");
  b.add_peer("a");
  CHECK_FALSE(a.send("nobody", Kind::PEER_ALERT, {}, 0.0).has_value());
  CHECK_THROWS_AS(a.send("b", Kind::ACK, {}, 0.0), PreconditionError);
  CHECK_THROWS_AS(a.add_peer("a"), ConfigError);
  b.send("a", Kind::COMMAND_DOWN, {}, 0.0);  // no token
  CHECK(a.receive(0.0).empty());
  CHECK_THROWS_AS(Endpoint("x", net, LinkConfig{0.0}), ConfigError);
}

TEST_CASE("documented heartbeat frame is byte-exact") {
  Envelope hb;
  hb.seq = 4;
  hb.sim_time = 15.0;
  hb.src = "water";
  hb.dst = "community";
  hb.kind = Kind::HEARTBEAT;
  const auto f = encode_frame(hb);
  REQUIRE(f.size() == 4 + 95);
  CHECK(f.substr(0, 4) == std::string("\x00\x00\x00\x5f", 4));
  CHECK(f.substr(4) == R"({"dst":"community","kind":"HEARTBEAT","payload":{},"seq":4,"sim_time":15.0,"src":"water","v":1})");
}
