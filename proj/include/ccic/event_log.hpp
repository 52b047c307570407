#pragma once

// Append-only event log: one JSON object per line,
// {"v":1,"sim_time":..,"site":..,"kind":..,"payload":{..}}.

#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/common.hpp"

namespace ccic::events {

struct EventRecord {
  int v = 1;
  SimTime sim_time = 0.0;
  std::string site;
  std::string kind;
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const EventRecord&) const = default;
};

nlohmann::json to_json(const EventRecord& r);
EventRecord record_from_json(const nlohmann::json& j);
std::string to_line(const EventRecord& r);
EventRecord parse_line(const std::string& line, int lineno = 1);

/// Thread-safe append-only log. Records must arrive in non-decreasing
/// sim_time order. Optionally mirrored to a file and to observers.
class EventLog {
 public:
  using Observer = std::function<void(const EventRecord&)>;

  EventLog() = default;
  explicit EventLog(const std::string& path);  // truncates; throws Error if unwritable

  void append(EventRecord r);
  void append(SimTime t, const std::string& site, const std::string& kind, nlohmann::json payload);

  std::size_t size() const;
  std::vector<EventRecord> since(std::size_t index) const;
  std::vector<EventRecord> records() const { return since(0); }

  /// Observers run synchronously inside append, outside the log's lock.
  void subscribe(Observer obs);

  const std::string& path() const { return path_; }

 private:
  mutable std::mutex mu_;
  std::vector<EventRecord> records_;
  std::vector<Observer> observers_;
  std::unique_ptr<std::ofstream> file_;
  std::string path_;
};

/// Reads one NDJSON log. Throws ParseError on malformed lines, time
/// regression, or records from more than one run.
std::vector<EventRecord> read_log(const std::string& path);

/// Merges logs from one run into a single timeline ordered by sim_time;
/// ties keep file order, then line order. Rejects logs of different runs.
std::vector<EventRecord> merge_timelines(const std::vector<std::vector<EventRecord>>& logs);

}  // namespace ccic::events
