#include "ccic/link.hpp"

#include <algorithm>

#include "ccic/log.hpp"

namespace ccic::link {

using nlohmann::json;

namespace {
constexpr Kind kAllKinds[] = {Kind::STATUS_UP,    Kind::ADVISORY_UP, Kind::PEER_ALERT, Kind::COMMAND_DOWN,
                              Kind::POLICY_DOWN,  Kind::HEARTBEAT,   Kind::ACK};
}

std::string to_string(Kind k) {
  switch (k) {
    case Kind::STATUS_UP: return "STATUS_UP";
    case Kind::ADVISORY_UP: return "ADVISORY_UP";
    case Kind::PEER_ALERT: return "PEER_ALERT";
    case Kind::COMMAND_DOWN: return "COMMAND_DOWN";
    case Kind::POLICY_DOWN: return "POLICY_DOWN";
    case Kind::HEARTBEAT: return "HEARTBEAT";
    case Kind::ACK: return "ACK";
  }
  return "HEARTBEAT";
}

Kind kind_from(const std::string& s) {
  for (auto k : kAllKinds)
    if (to_string(k) == s) return k;
  throw ProtocolError("unknown envelope kind '" + s + "'");
}

bool is_data(Kind k) { return k != Kind::HEARTBEAT && k != Kind::ACK; }

std::string to_string(Health h) {
  switch (h) {
    case Health::up: return "up";
    case Health::degraded: return "degraded";
    case Health::down: return "down";
  }
  return "up";
}

json to_json(const Envelope& e) {
  json j = {{"v", e.v},     {"seq", e.seq},   {"sim_time", e.sim_time},    {"src", e.src},
            {"dst", e.dst}, {"kind", to_string(e.kind)}, {"payload", e.payload}};
  if (!e.token.empty()) j["token"] = e.token;
  return j;
}

Envelope envelope_from_json(const json& j) {
  try {
    Envelope e;
    e.v = j.at("v").get<int>();
    if (e.v != 1) throw ProtocolError("unsupported protocol version " + std::to_string(e.v));
    e.seq = j.at("seq").get<std::uint64_t>();
    e.sim_time = j.at("sim_time").get<double>();
    e.src = j.at("src").get<std::string>();
    e.dst = j.at("dst").get<std::string>();
    e.kind = kind_from(j.at("kind").get<std::string>());
    e.payload = j.at("payload");
    if (!e.payload.is_object()) throw ProtocolError("payload must be an object");
    e.token = j.value("token", std::string());
    return e;
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("malformed envelope: ") + ex.what());
  }
}

std::string encode_frame(const Envelope& e) {
  const std::string body = to_json(e).dump();
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  return out + body;
}

void FrameDecoder::feed(const char* data, std::size_t n) { buf_.append(data, n); }

std::optional<Envelope> FrameDecoder::next() {
  if (buf_.size() < 4) return std::nullopt;
  const auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[i])); };
  const std::uint32_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
  if (n > max_frame_) throw ProtocolError("frame of " + std::to_string(n) + " bytes exceeds limit");
  if (buf_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  const std::string body = buf_.substr(4, n);
  buf_.erase(0, 4 + static_cast<std::size_t>(n));
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("frame is not JSON: ") + ex.what());
  }
  return envelope_from_json(j);
}

// ---------------------------------------------------------------------------

void InProcessNetwork::set_impairment(const NodeId& src, const NodeId& dst, Impairment imp) {
  imp_[{src, dst}] = imp;
}

void InProcessNetwork::set_impairment_both(const NodeId& a, const NodeId& b, Impairment imp) {
  set_impairment(a, b, imp);
  set_impairment(b, a, imp);
}

Impairment InProcessNetwork::impairment(const NodeId& src, const NodeId& dst) const {
  auto it = imp_.find({src, dst});
  return it == imp_.end() ? Impairment{} : it->second;
}

void InProcessNetwork::transmit(const Envelope& e, SimTime now) {
  const auto imp = impairment(e.src, e.dst);
  if (imp.severed) {
    ++dropped_;
    return;
  }
  if (imp.drop_rate > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < imp.drop_rate) {
    ++dropped_;
    return;
  }
  double delay = imp.delay_min;
  if (imp.delay_max > imp.delay_min) delay = std::uniform_real_distribution<double>(imp.delay_min, imp.delay_max)(rng_);
  flight_.push_back({now + delay, order_++, e});
}

std::vector<Envelope> InProcessNetwork::collect(const NodeId& node, SimTime now) {
  std::vector<InFlight> ready;
  std::vector<InFlight> keep;
  for (auto& f : flight_) {
    if (f.env.dst == node && f.deliver_at <= now) ready.push_back(std::move(f));
    else keep.push_back(std::move(f));
  }
  flight_ = std::move(keep);
  std::sort(ready.begin(), ready.end(), [](const InFlight& a, const InFlight& b) {
    return a.deliver_at != b.deliver_at ? a.deliver_at < b.deliver_at : a.order < b.order;
  });
  std::vector<Envelope> out;
  out.reserve(ready.size());
  for (auto& f : ready) out.push_back(std::move(f.env));
  return out;
}

// ---------------------------------------------------------------------------

Endpoint::Endpoint(NodeId id, Transport& transport, LinkConfig config)
    : id_(std::move(id)), transport_(transport), cfg_(std::move(config)) {
  if (!(cfg_.heartbeat_interval > 0.0) || cfg_.miss_threshold < 1 || cfg_.buffer_capacity == 0 ||
      !(cfg_.retransmit_after > 0.0))
    throw ConfigError("link config: interval, threshold, capacity and retransmit delay must be positive");
}

void Endpoint::add_peer(const NodeId& peer, SimTime now) {
  if (peer == id_) throw ConfigError("link: node '" + id_ + "' cannot peer with itself");
  auto [it, inserted] = peers_.emplace(peer, Peer{});
  if (inserted) it->second.last_heard = now;
}

std::vector<NodeId> Endpoint::peers() const {
  std::vector<NodeId> out;
  for (const auto& [k, v] : peers_) out.push_back(k);
  return out;
}

bool Endpoint::may_transmit(Kind k) const { return !isolated_ || cfg_.isolation_allows.count(k) > 0; }

void Endpoint::transmit(Peer& p, const NodeId& dst, Envelope e, SimTime now) {
  ++p.stats.transmissions;
  audit_.push_back({now, dst, e.kind, e.seq});
  transport_.transmit(e, now);
}

std::optional<std::uint64_t> Endpoint::send(const NodeId& dst, Kind kind, json payload, SimTime now) {
  if (!is_data(kind)) throw PreconditionError("send: " + to_string(kind) + " is link control traffic");
  auto it = peers_.find(dst);
  if (it == peers_.end()) {
    logger()->warn("link {}: no link to '{}', {} dropped", id_, dst, to_string(kind));
    return std::nullopt;
  }
  Peer& p = it->second;
  Envelope e;
  e.seq = p.next_seq++;
  e.sim_time = now;
  e.src = id_;
  e.dst = dst;
  e.kind = kind;
  e.payload = std::move(payload);
  e.token = cfg_.token;
  if (!p.out.empty() && p.out.back().env.seq + 1 != e.seq)
    throw ProtocolError("link " + id_ + "->" + dst + ": sequence gap at sender");
  p.out.push_back({e});
  ++p.stats.sent;
  if (p.out.size() > cfg_.buffer_capacity) {
    p.out.pop_front();
    ++p.stats.overflow_dropped;
    if (!p.overflowed && !p.down) changes_.push_back({dst, Health::up, Health::degraded, now});
    p.overflowed = true;
  }
  if (!p.down && may_transmit(kind)) {
    auto& o = p.out.back();
    o.last_tx = now;
    o.transmitted = true;
    transmit(p, dst, e, now);
  }
  return e.seq;
}

Health Endpoint::health_of(const Peer& p) const {
  if (p.down) return Health::down;
  if (p.overflowed) return Health::degraded;
  return Health::up;
}

void Endpoint::set_down(const NodeId& peer, Peer& p, bool down, SimTime now) {
  if (p.down == down) return;
  const Health before = health_of(p);
  p.down = down;
  if (!down)
    for (auto& o : p.out) o.last_tx = -1e300;  // replay everything held while down
  changes_.push_back({peer, before, health_of(p), now});
}

void Endpoint::drain(Peer& p, std::vector<Envelope>& out) {
  for (auto it = p.stash.find(p.expected); it != p.stash.end(); it = p.stash.find(p.expected)) {
    out.push_back(std::move(it->second));
    p.stash.erase(it);
    ++p.expected;
    ++p.stats.delivered;
  }
}

std::vector<Envelope> Endpoint::receive(SimTime now) {
  std::vector<Envelope> out;
  for (auto& e : transport_.collect(id_, now)) {
    if (e.v != 1 || e.dst != id_) {
      logger()->warn("link {}: discarding misaddressed envelope from '{}'", id_, e.src);
      continue;
    }
    if (!cfg_.token.empty() && e.token != cfg_.token) {
      logger()->warn("link {}: bad token from '{}'", id_, e.src);
      continue;
    }
    auto it = peers_.find(e.src);
    if (it == peers_.end()) {
      logger()->warn("link {}: envelope from unknown node '{}'", id_, e.src);
      continue;
    }
    Peer& p = it->second;
    p.last_heard = now;
    set_down(e.src, p, false, now);
    if (!may_transmit(e.kind)) continue;  // isolated: inbound traffic is held off too

    switch (e.kind) {
      case Kind::HEARTBEAT: {
        // Sender no longer holds anything below e.seq: deliver what we have, skip the rest.
        while (p.expected < e.seq) {
          auto s = p.stash.find(p.expected);
          if (s != p.stash.end()) {
            out.push_back(std::move(s->second));
            p.stash.erase(s);
            ++p.stats.delivered;
          } else {
            ++p.stats.gap_skipped;
          }
          ++p.expected;
        }
        drain(p, out);
        break;
      }
      case Kind::ACK: {
        const auto ack = e.payload.value("ack", std::uint64_t{0});
        while (!p.out.empty() && p.out.front().env.seq <= ack) p.out.pop_front();
        if (p.out.empty()) p.overflowed = false;
        break;
      }
      default: {
        p.ack_due = true;
        if (e.seq < p.expected || p.stash.count(e.seq)) {
          ++p.stats.duplicates;
          break;
        }
        const auto seq = e.seq;
        p.stash.emplace(seq, std::move(e));
        drain(p, out);
        break;
      }
    }
  }
  for (auto& [peer, p] : peers_) {
    if (!p.ack_due) continue;
    p.ack_due = false;
    if (!may_transmit(Kind::ACK)) continue;
    Envelope ack;
    ack.seq = 0;
    ack.sim_time = now;
    ack.src = id_;
    ack.dst = peer;
    ack.kind = Kind::ACK;
    ack.payload = {{"ack", p.expected - 1}};
    ack.token = cfg_.token;
    transmit(p, peer, ack, now);
  }
  return out;
}

void Endpoint::service(SimTime now) {
  const double timeout = cfg_.heartbeat_interval * cfg_.miss_threshold;
  for (auto& [peer, p] : peers_) {
    if (!p.down && now - p.last_heard > timeout) set_down(peer, p, true, now);
    if (now - p.last_heartbeat >= cfg_.heartbeat_interval && may_transmit(Kind::HEARTBEAT)) {
      p.last_heartbeat = now;
      Envelope hb;
      hb.seq = p.out.empty() ? p.next_seq : p.out.front().env.seq;
      hb.sim_time = now;
      hb.src = id_;
      hb.dst = peer;
      hb.kind = Kind::HEARTBEAT;
      hb.token = cfg_.token;
      transmit(p, peer, hb, now);
    }
    if (p.down) continue;
    for (auto& o : p.out) {
      if (!may_transmit(o.env.kind)) continue;
      if (o.transmitted && now - o.last_tx < cfg_.retransmit_after) continue;
      o.last_tx = now;
      o.transmitted = true;
      transmit(p, peer, o.env, now);
    }
  }
}

Health Endpoint::health(const NodeId& peer) const {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw PreconditionError("link " + id_ + ": no peer '" + peer + "'");
  return health_of(it->second);
}

SimTime Endpoint::last_heard(const NodeId& peer) const {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw PreconditionError("link " + id_ + ": no peer '" + peer + "'");
  return it->second.last_heard;
}

std::size_t Endpoint::buffered(const NodeId& peer) const {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw PreconditionError("link " + id_ + ": no peer '" + peer + "'");
  return it->second.out.size();
}

const LinkStats& Endpoint::stats(const NodeId& peer) const {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw PreconditionError("link " + id_ + ": no peer '" + peer + "'");
  return it->second.stats;
}

std::vector<HealthChange> Endpoint::take_health_changes() {
  std::vector<HealthChange> out;
  out.swap(changes_);
  return out;
}

}  // namespace ccic::link
