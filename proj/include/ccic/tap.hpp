#pragma once

// Read-only data path out of the plant and the historical archive built
// from it. Every entry point takes the plant state by const reference; there
// is no handle here through which a PlantState could be modified.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/common.hpp"
#include "ccic/plant.hpp"

namespace ccic::tap {

enum class Quality { good, suspect, bad };

std::string to_string(Quality q);

struct Reading {
  SiteId site_id;
  VarId var_id;
  double value = 0.0;
  SimTime sim_time = 0.0;
  Quality quality = Quality::good;
  bool operator==(const Reading&) const = default;
};

/// One Reading per visible variable (sensors and actuator outputs alike),
/// as the PCS would report it, spoofs and drifts included.
std::vector<Reading> snapshot(const plant::PlantState& state, const plant::PlantSpec& plant);

/// Delivery level of each resource the site provides, as the PCS meters it.
std::map<plant::Resource, double> resource_availability(const plant::PlantState& state, const plant::PlantSpec& plant);

struct ArchiveMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
  double duration_s = 0.0;
};

struct ArchiveRow {
  SimTime sim_time = 0.0;
  std::vector<double> values;  // aligned with HistoryArchive::var_ids
  std::string mode;
  bool operator==(const ArchiveRow&) const = default;
};

struct HistoryArchive {
  SiteId site_id;
  std::vector<VarId> var_ids;
  std::vector<ArchiveRow> rows;
  ArchiveMetadata metadata;

  std::size_t column(const VarId& var) const;  // throws PreconditionError
  bool operator==(const HistoryArchive& o) const {
    return site_id == o.site_id && var_ids == o.var_ids && rows == o.rows;
  }
};

/// Empty archive with the plant's visible variables as columns.
HistoryArchive make_archive(const plant::PlantSpec& plant);

/// Appends one row; readings must share one sim_time that does not regress.
void record(HistoryArchive& archive, const std::vector<Reading>& readings, const std::string& mode_label);

/// CSV: header "sim_time,<var_ids...>,mode", values at 17 significant digits.
void write_csv(const HistoryArchive& archive, std::ostream& out);
/// Throws ParseError (line number) on malformed rows or time regression and
/// ConfigError naming the variable when the header disagrees with `plant`.
HistoryArchive read_csv(std::istream& in, const plant::PlantSpec& plant);

nlohmann::json metadata_to_json(const ArchiveMetadata& m);
ArchiveMetadata metadata_from_json(const nlohmann::json& j);

/// Writes <stem>.csv and <stem>.meta.json.
void save_archive(const HistoryArchive& archive, const std::string& stem);
HistoryArchive load_archive(const std::string& stem, const plant::PlantSpec& plant);

/// Simulates the plant through its operating modes (cycled every
/// mode_dwell_s) and records a snapshot every `sample_dt` seconds.
HistoryArchive generate_history(const plant::PlantSpec& plant, double hours, double sample_dt = 1.0);

}  // namespace ccic::tap
