#pragma once

// Reliable, ordered messaging between nodes over a lossy transport.
//
// Each (src, dst) pair carries its own data sequence starting at 1. The
// sender keeps every unacknowledged envelope and retransmits it; the
// receiver delivers strictly in sequence, drops duplicates and acknowledges
// cumulatively. Heartbeats drive link-health detection; while a link is down
// the sender only buffers. Buffers are bounded: the oldest envelope is
// dropped and counted, and the heartbeat tells the receiver to skip the gap.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/common.hpp"

namespace ccic::link {

using NodeId = std::string;

enum class Kind { STATUS_UP, ADVISORY_UP, PEER_ALERT, COMMAND_DOWN, POLICY_DOWN, HEARTBEAT, ACK };

std::string to_string(Kind k);
Kind kind_from(const std::string& s);

/// Data kinds travel in the reliable sequence; HEARTBEAT and ACK are control
/// traffic and carry the sender's buffer floor / zero instead.
bool is_data(Kind k);

struct Envelope {
  int v = 1;
  std::uint64_t seq = 0;
  SimTime sim_time = 0.0;
  NodeId src;
  NodeId dst;
  Kind kind = Kind::HEARTBEAT;
  nlohmann::json payload = nlohmann::json::object();
  std::string token;  // shared-token header; empty when unused

  bool operator==(const Envelope&) const = default;
};

nlohmann::json to_json(const Envelope& e);
/// Throws ProtocolError on a wrong version or missing / mistyped field.
Envelope envelope_from_json(const nlohmann::json& j);

/// 4-byte big-endian length followed by the UTF-8 JSON envelope.
std::string encode_frame(const Envelope& e);

/// Incremental frame decoder for a byte stream.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::size_t max_frame = 1 << 20) : max_frame_(max_frame) {}
  void feed(const char* data, std::size_t n);
  void feed(const std::string& bytes) { feed(bytes.data(), bytes.size()); }
  /// Next complete envelope, if any. Throws ProtocolError on oversize or bad JSON.
  std::optional<Envelope> next();
  std::size_t pending_bytes() const { return buf_.size(); }

 private:
  std::string buf_;
  std::size_t max_frame_;
};

enum class Health { up, degraded, down };
std::string to_string(Health h);

struct LinkConfig {
  double heartbeat_interval = 5.0;
  int miss_threshold = 3;
  std::size_t buffer_capacity = 4096;
  double retransmit_after = 2.0;
  std::set<Kind> isolation_allows = {Kind::HEARTBEAT};
  std::string token;
};

/// Transport contract shared by the in-process network and TCP.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void transmit(const Envelope& e, SimTime now) = 0;
  /// Envelopes that have arrived for `node` by `now`, in arrival order.
  virtual std::vector<Envelope> collect(const NodeId& node, SimTime now) = 0;
};

/// Per-direction fault injection for the in-process network.
struct Impairment {
  double drop_rate = 0.0;
  double delay_min = 0.0;
  double delay_max = 0.0;
  bool severed = false;
};

/// Simulated network: seeded drops and delays per directed pair.
class InProcessNetwork : public Transport {
 public:
  explicit InProcessNetwork(std::uint64_t seed = 1) : rng_(seed) {}

  void transmit(const Envelope& e, SimTime now) override;
  std::vector<Envelope> collect(const NodeId& node, SimTime now) override;

  void set_impairment(const NodeId& src, const NodeId& dst, Impairment imp);
  /// Both directions between a and b.
  void set_impairment_both(const NodeId& a, const NodeId& b, Impairment imp);
  Impairment impairment(const NodeId& src, const NodeId& dst) const;

  std::size_t in_flight() const { return flight_.size(); }
  std::uint64_t dropped() const { return dropped_; }

 private:
  struct InFlight {
    SimTime deliver_at;
    std::uint64_t order;
    Envelope env;
  };
  std::map<std::pair<NodeId, NodeId>, Impairment> imp_;
  std::vector<InFlight> flight_;
  std::mt19937_64 rng_;
  std::uint64_t order_ = 0;
  std::uint64_t dropped_ = 0;
};

struct LinkStats {
  std::uint64_t sent = 0;           // distinct data envelopes accepted by send()
  std::uint64_t transmissions = 0;  // including retransmissions and control traffic
  std::uint64_t delivered = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t overflow_dropped = 0;
  std::uint64_t gap_skipped = 0;
};

/// One transmission attempt, recorded for audits (e.g. isolation checks).
struct TransmitRecord {
  SimTime sim_time;
  NodeId dst;
  Kind kind;
  std::uint64_t seq;
};

/// Health change, returned from service() and receive() so the owner can log it.
struct HealthChange {
  NodeId peer;
  Health from;
  Health to;
  SimTime sim_time;
};

class Endpoint {
 public:
  Endpoint(NodeId id, Transport& transport, LinkConfig config = {});

  const NodeId& id() const { return id_; }
  void add_peer(const NodeId& peer, SimTime now = 0.0);
  bool has_peer(const NodeId& peer) const { return peers_.count(peer) > 0; }
  std::vector<NodeId> peers() const;

  /// Queues a data envelope; returns its seq, or nullopt (and logs) when no
  /// link to `dst` is configured. Throws PreconditionError for control kinds.
  std::optional<std::uint64_t> send(const NodeId& dst, Kind kind, nlohmann::json payload, SimTime now);

  /// Processes arrivals; returns data envelopes now deliverable, in per-pair
  /// seq order, each exactly once.
  std::vector<Envelope> receive(SimTime now);

  /// Heartbeats, retransmissions and health timeouts.
  void service(SimTime now);

  Health health(const NodeId& peer) const;
  SimTime last_heard(const NodeId& peer) const;
  std::size_t buffered(const NodeId& peer) const;
  const LinkStats& stats(const NodeId& peer) const;

  void set_isolated(bool on) { isolated_ = on; }
  bool isolated() const { return isolated_; }

  const std::vector<TransmitRecord>& audit() const { return audit_; }
  std::vector<HealthChange> take_health_changes();
  const LinkConfig& config() const { return cfg_; }

 private:
  struct Outgoing {
    Envelope env;
    SimTime last_tx = -1e300;
    bool transmitted = false;
  };
  struct Peer {
    // sending side
    std::uint64_t next_seq = 1;
    std::deque<Outgoing> out;
    bool overflowed = false;
    SimTime last_heartbeat = -1e300;
    // receiving side
    std::uint64_t expected = 1;
    std::map<std::uint64_t, Envelope> stash;
    SimTime last_heard = 0.0;
    bool down = false;
    bool ack_due = false;
    LinkStats stats;
  };

  bool may_transmit(Kind k) const;
  void transmit(Peer& p, const NodeId& dst, Envelope e, SimTime now);
  void set_down(const NodeId& peer, Peer& p, bool down, SimTime now);
  void drain(Peer& p, std::vector<Envelope>& out);
  Health health_of(const Peer& p) const;

  NodeId id_;
  Transport& transport_;
  LinkConfig cfg_;
  std::map<NodeId, Peer> peers_;
  bool isolated_ = false;
  std::vector<TransmitRecord> audit_;
  std::vector<HealthChange> changes_;
};

}  // namespace ccic::link
