#include "ccic/event_log.hpp"

#include <algorithm>
#include <cmath>

namespace ccic::events {

using nlohmann::json;

json to_json(const EventRecord& r) {
  return {{"v", r.v}, {"sim_time", r.sim_time}, {"site", r.site}, {"kind", r.kind}, {"payload", r.payload}};
}

EventRecord record_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("event record must be an object");
  EventRecord r;
  r.v = j.at("v").get<int>();
  if (r.v != 1) throw ConfigError("unsupported event record version " + std::to_string(r.v));
  r.sim_time = j.at("sim_time").get<double>();
  if (!std::isfinite(r.sim_time)) throw ConfigError("event record sim_time is not finite");
  r.site = j.at("site").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.payload = j.at("payload");
  return r;
}

std::string to_line(const EventRecord& r) { return to_json(r).dump(); }

EventRecord parse_line(const std::string& line, int lineno) {
  try {
    return record_from_json(json::parse(line));
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad event record: ") + e.what(), lineno, 1);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), lineno, 1);
  }
}

EventLog::EventLog(const std::string& path) : path_(path) {
  file_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
  if (!*file_) throw Error("cannot write event log '" + path + "'");
}

void EventLog::append(EventRecord r) {
  std::vector<Observer> obs;
  {
    std::lock_guard lock(mu_);
    if (!records_.empty() && r.sim_time < records_.back().sim_time)
      throw PreconditionError("event log: sim_time " + format_exact(r.sim_time) + " precedes " +
                              format_exact(records_.back().sim_time));
    if (file_) {
      *file_ << to_line(r) << '\n';
      file_->flush();
    }
    records_.push_back(r);
    obs = observers_;
  }
  for (const auto& o : obs) o(r);
}

void EventLog::append(SimTime t, const std::string& site, const std::string& kind, json payload) {
  append(EventRecord{1, t, site, kind, std::move(payload)});
}

std::size_t EventLog::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::vector<EventRecord> EventLog::since(std::size_t index) const {
  std::lock_guard lock(mu_);
  if (index >= records_.size()) return {};
  return {records_.begin() + static_cast<std::ptrdiff_t>(index), records_.end()};
}

void EventLog::subscribe(Observer obs) {
  std::lock_guard lock(mu_);
  observers_.push_back(std::move(obs));
}

namespace {

std::string run_id_of(const EventRecord& r) {
  if (r.kind == "run_start" && r.payload.contains("run_id")) return r.payload.at("run_id").get<std::string>();
  return {};
}

}  // namespace

std::vector<EventRecord> read_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open event log '" + path + "'");
  std::vector<EventRecord> out;
  std::string line;
  std::string run;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto r = parse_line(line, lineno);
    if (!out.empty() && r.sim_time < out.back().sim_time)
      throw ParseError("time regression in '" + path + "'", lineno, 1);
    if (const auto id = run_id_of(r); !id.empty()) {
      if (!run.empty() && id != run) throw ParseError("records from two runs in '" + path + "'", lineno, 1);
      run = id;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EventRecord> merge_timelines(const std::vector<std::vector<EventRecord>>& logs) {
  std::string run;
  struct Item {
    const EventRecord* r;
    std::size_t file;
    std::size_t line;
  };
  std::vector<Item> items;
  for (std::size_t f = 0; f < logs.size(); ++f) {
    for (std::size_t i = 0; i < logs[f].size(); ++i) {
      const auto& r = logs[f][i];
      if (i > 0 && r.sim_time < logs[f][i - 1].sim_time)
        throw ParseError("time regression in log " + std::to_string(f), static_cast<int>(i) + 1, 1);
      if (const auto id = run_id_of(r); !id.empty()) {
        if (!run.empty() && id != run) throw ParseError("logs come from different runs", static_cast<int>(i) + 1, 1);
        run = id;
      }
      items.push_back({&r, f, i});
    }
  }
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.r->sim_time != b.r->sim_time) return a.r->sim_time < b.r->sim_time;
    return a.file < b.file;
  });
  std::vector<EventRecord> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(*it.r);
  return out;
}

}  // namespace ccic::events
