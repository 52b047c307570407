#include "ccic/tap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ccic::tap {

using nlohmann::json;

std::string to_string(Quality q) {
  switch (q) {
    case Quality::good: return "good";
    case Quality::suspect: return "suspect";
    case Quality::bad: return "bad";
  }
  return "good";
}

std::vector<Reading> snapshot(const plant::PlantState& state, const plant::PlantSpec& plant) {
  std::vector<Reading> out;
  out.reserve(plant.variables().size());
  for (const auto& var : plant.variables()) {
    Reading r;
    r.site_id = plant.site_id;
    r.var_id = var;
    r.value = plant::reported_value(plant, state, var);
    r.sim_time = state.sim_time;
    const auto& info = plant.var(var);
    if (!std::isfinite(r.value)) r.quality = Quality::bad;
    else if (!info.loop_id.empty() && plant::loop_impaired(plant, state, info.loop_id)) r.quality = Quality::suspect;
    out.push_back(std::move(r));
  }
  return out;
}

std::map<plant::Resource, double> resource_availability(const plant::PlantState& state,
                                                       const plant::PlantSpec& plant) {
  std::map<plant::Resource, double> out;
  for (auto r : plant.provided_resources()) out[r] = plant::availability(plant, state, r);
  return out;
}

std::size_t HistoryArchive::column(const VarId& var) const {
  for (std::size_t i = 0; i < var_ids.size(); ++i)
    if (var_ids[i] == var) return i;
  throw PreconditionError("archive for '" + site_id + "' has no column '" + var + "'");
}

HistoryArchive make_archive(const plant::PlantSpec& plant) {
  HistoryArchive a;
  a.site_id = plant.site_id;
  a.var_ids = plant.variables();
  a.metadata.seed = plant.seed;
  a.metadata.config_hash = plant.config_hash;
  return a;
}

void record(HistoryArchive& archive, const std::vector<Reading>& readings, const std::string& mode_label) {
  if (readings.empty()) throw PreconditionError("record: no readings");
  const SimTime t = readings.front().sim_time;
  for (const auto& r : readings)
    if (r.sim_time != t) throw PreconditionError("record: readings do not share one sim_time");
  if (!archive.rows.empty() && t < archive.rows.back().sim_time)
    throw PreconditionError("record: time regression (" + format_exact(t) + " < " +
                            format_exact(archive.rows.back().sim_time) + ")");
  ArchiveRow row;
  row.sim_time = t;
  row.mode = mode_label;
  row.values.assign(archive.var_ids.size(), std::nan(""));
  std::vector<bool> filled(archive.var_ids.size(), false);
  for (const auto& r : readings) {
    const auto col = archive.column(r.var_id);
    row.values[col] = r.value;
    filled[col] = true;
  }
  for (std::size_t i = 0; i < filled.size(); ++i)
    if (!filled[i]) throw PreconditionError("record: no reading for '" + archive.var_ids[i] + "'");
  archive.rows.push_back(std::move(row));
  if (archive.rows.size() > 1) archive.metadata.duration_s = t - archive.rows.front().sim_time;
}

void write_csv(const HistoryArchive& archive, std::ostream& out) {
  out << "sim_time";
  for (const auto& v : archive.var_ids) out << ',' << v;
  out << ",mode\n";
  for (const auto& row : archive.rows) {
    out << format_exact(row.sim_time);
    for (double v : row.values) out << ',' << format_exact(v);
    out << ',' << row.mode << '\n';
  }
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& s, int line, int col) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError("malformed number '" + s + "'", line, col);
  }
  if (used != s.size()) throw ParseError("malformed number '" + s + "'", line, col);
  return v;
}

}  // namespace

HistoryArchive read_csv(std::istream& in, const plant::PlantSpec& plant) {
  HistoryArchive a;
  a.site_id = plant.site_id;
  a.metadata.seed = plant.seed;
  a.metadata.config_hash = plant.config_hash;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header row", 1, 1);
  auto header = split(line);
  if (header.size() < 2 || header.front() != "sim_time" || header.back() != "mode")
    throw ParseError("header must be sim_time,<vars...>,mode", 1, 1);
  a.var_ids.assign(header.begin() + 1, header.end() - 1);
  for (const auto& v : a.var_ids)
    if (!plant.has_var(v)) throw ConfigError("archive header names variable '" + v + "' unknown to site " + plant.site_id);
  for (const auto& v : plant.variables())
    if (std::find(a.var_ids.begin(), a.var_ids.end(), v) == a.var_ids.end())
      throw ConfigError("archive header lacks variable '" + v + "' of site " + plant.site_id);

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()),
                       lineno, 1);
    ArchiveRow row;
    row.sim_time = parse_number(cells[0], lineno, 1);
    for (std::size_t i = 1; i + 1 < cells.size(); ++i)
      row.values.push_back(parse_number(cells[i], lineno, static_cast<int>(i) + 1));
    row.mode = cells.back();
    if (!a.rows.empty() && row.sim_time < a.rows.back().sim_time)
      throw ParseError("time regression", lineno, 1);
    a.rows.push_back(std::move(row));
  }
  if (a.rows.size() > 1) a.metadata.duration_s = a.rows.back().sim_time - a.rows.front().sim_time;
  return a;
}

json metadata_to_json(const ArchiveMetadata& m) {
  return {{"v", 1}, {"seed", m.seed}, {"config_hash", m.config_hash}, {"duration_s", m.duration_s}};
}

ArchiveMetadata metadata_from_json(const json& j) {
  if (j.value("v", 0) != 1) throw ConfigError("archive metadata: unsupported schema version");
  ArchiveMetadata m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.duration_s = j.at("duration_s").get<double>();
  return m;
}

void save_archive(const HistoryArchive& archive, const std::string& stem) {
  std::ofstream csv(stem + ".csv");
  if (!csv) throw Error("cannot write '" + stem + ".csv'");
  write_csv(archive, csv);
  std::ofstream meta(stem + ".meta.json");
  meta << metadata_to_json(archive.metadata).dump(2) << '\n';
}

HistoryArchive load_archive(const std::string& stem, const plant::PlantSpec& plant) {
  std::ifstream csv(stem + ".csv");
  if (!csv) throw ConfigError("cannot open archive '" + stem + ".csv'");
  HistoryArchive a = read_csv(csv, plant);
  std::ifstream meta(stem + ".meta.json");
  if (meta) {
    try {
      a.metadata = metadata_from_json(json::parse(meta));
    } catch (const json::exception& e) {
      throw ConfigError(stem + ".meta.json: " + e.what());
    }
  }
  return a;
}

HistoryArchive generate_history(const plant::PlantSpec& plant, double hours, double sample_dt) {
  if (hours < 0.0 || !(sample_dt > 0.0)) throw PreconditionError("generate_history: bad duration or sample rate");
  HistoryArchive a = make_archive(plant);
  const auto samples = static_cast<long long>(std::llround(hours * 3600.0 / sample_dt));
  const auto n_modes = plant.operating_modes.size();
  auto state = plant::initial_state(plant);
  for (long long k = 1; k <= samples; ++k) {
    const double t_next = static_cast<double>(k) * sample_dt;
    const auto mode_index =
        static_cast<std::size_t>(std::floor((t_next - sample_dt) / plant.mode_dwell_s)) % n_modes;
    const auto& label = plant.operating_modes[mode_index].label;
    if (state.mode != label) state = plant::set_mode(plant, state, label);
    state = plant::step(plant, state, sample_dt);
    record(a, snapshot(state, plant), state.mode);
  }
  a.metadata.duration_s = hours * 3600.0;
  return a;
}

}  // namespace ccic::tap
