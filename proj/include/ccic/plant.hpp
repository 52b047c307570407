#pragma once

// Discrete-time process simulation for one infrastructure site: PID loops
// over first-order plants, cross-site resource coupling, and fault/attack
// injection hooks.

#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/common.hpp"

namespace ccic::plant {

enum class InfrastructureKind { water, power, telecom, other };
enum class Resource { electric_power, treated_water, communications };

std::string to_string(InfrastructureKind k);
std::string to_string(Resource r);
InfrastructureKind infrastructure_kind_from(const std::string& s);
Resource resource_from(const std::string& s);

struct PidGains {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
};

struct ControlLoopSpec {
  LoopId loop_id;
  VarId measured_var;            // process value sensor
  VarId actuator_var;            // controller output, 0..100 %
  std::vector<VarId> input_vars;  // classifier inputs, 1..9 entries
  double setpoint = 0.0;
  PidGains pid_gains;
  double process_gain = 1.0;
  double time_constant = 1.0;  // seconds
  double noise_sigma = 0.0;    // fraction of span
  double span = 100.0;         // engineering span of the measured variable
  double output_min = 0.0;
  double output_max = 100.0;
  std::string section;  // grid section tag, empty when not sectioned
  std::optional<Resource> produces;
  double weight = 1.0;  // share of the produced resource
  std::optional<Resource> depends_on;
};

struct LinearTerm {
  VarId var;
  double coef = 0.0;
};

// value = offset + sum(coef * var); may reference earlier derived vars.
struct DerivedVar {
  VarId id;
  std::vector<LinearTerm> terms;
  double offset = 0.0;
  double span = 100.0;
};

struct AlarmVar {
  VarId id;
  std::string section;
};

// Sensor mirroring the availability of an externally provided resource.
struct CouplingVar {
  VarId id;
  Resource resource;
};

struct OperatingMode {
  std::string label;
  std::map<LoopId, double> setpoints;
};

enum class VarKind { sensor, actuator, derived, alarm, coupling };

struct VarInfo {
  VarKind kind = VarKind::sensor;
  double span = 1.0;
  LoopId loop_id;  // empty for site-level variables
};

struct PlantSpec {
  SiteId site_id;
  InfrastructureKind infrastructure_kind = InfrastructureKind::other;
  std::uint64_t seed = 0;
  std::vector<ControlLoopSpec> loops;
  std::vector<DerivedVar> derived_vars;
  std::vector<AlarmVar> alarms;
  std::vector<CouplingVar> couplings;
  std::vector<OperatingMode> operating_modes;
  double mode_dwell_s = 1800.0;  // history generator cycles modes at this period
  int total_var_count = 0;
  std::string config_hash;

  /// Builds the variable index and checks every structural invariant.
  /// Must be called after the fields are populated; throws ConfigError.
  void finalize();

  const VarInfo& var(const VarId& id) const;
  bool has_var(const VarId& id) const { return var_index_.count(id) != 0; }
  /// Visible variables in stable column order.
  const std::vector<VarId>& variables() const { return var_order_; }
  const ControlLoopSpec& loop(const LoopId& id) const;
  const OperatingMode& mode(const std::string& label) const;
  std::vector<Resource> provided_resources() const;
  double setpoint_for(const ControlLoopSpec& loop, const std::string& mode_label) const;

 private:
  std::map<VarId, VarInfo> var_index_;
  std::vector<VarId> var_order_;
};

struct InterdependencyEdge {
  SiteId provider_site;
  SiteId consumer_site;
  Resource resource = Resource::electric_power;
  VarId coupling_var;
  double criticality = 0.0;
};

enum class OverrideKind { spoof, drift };

struct Override {
  OverrideKind kind = OverrideKind::spoof;
  double offset = 0.0;         // spoof: engineering units
  double rate_per_hour = 0.0;  // drift: fraction of span per simulated hour
  SimTime started_at = 0.0;
  bool operator==(const Override&) const = default;
};

struct LoopRuntime {
  double process_value = 0.0;
  double integral = 0.0;
  double prev_error = 0.0;
  double output = 0.0;
  double capability = 1.0;
  bool failed = false;  // equipment-failure flag
  bool manual = false;
  bool operator==(const LoopRuntime&) const = default;
};

struct PlantState {
  SimTime sim_time = 0.0;
  std::map<VarId, double> true_values;
  std::map<VarId, Override> injected_overrides;
  std::string mode;
  std::map<LoopId, LoopRuntime> loops;
  std::set<std::string> failed_sections;
  std::mt19937_64 rng;
  std::normal_distribution<double> normal{0.0, 1.0};

  bool operator==(const PlantState&) const = default;
};

enum class InjectionKind {
  sensor_spoof,
  sensor_drift,
  equipment_failure,
  grid_section_failure,
  link_loss,
  link_restore
};

std::string to_string(InjectionKind k);
InjectionKind injection_kind_from(const std::string& s);

struct InjectionEvent {
  SimTime at_time = 0.0;
  SiteId site;
  InjectionKind kind = InjectionKind::sensor_spoof;
  nlohmann::json params = nlohmann::json::object();
};

/// Throws PreconditionError when kind-specific params are missing.
void validate_injection(const InjectionEvent& event);

using ExternalInputs = std::map<Resource, double>;

/// Every loop at its steady-state fixed point for `mode` (first mode if empty).
PlantState initial_state(const PlantSpec& plant, const std::string& mode = {});

PlantState step(const PlantSpec& plant, const PlantState& state, double dt,
                const ExternalInputs& external_inputs = {});

PlantState apply_injection(const PlantSpec& plant, const PlantState& state,
                           const InjectionEvent& event);

/// Fraction of nominal delivery of `resource`: weighted mean over producing
/// loops of capability x upstream availability, zero for failed sections.
double availability(const PlantSpec& plant, const PlantState& state, Resource resource);

/// Value the sensor reports: true value plus any active spoof/drift offset.
double reported_value(const PlantSpec& plant, const PlantState& state, const VarId& var);

/// True when an equipment failure or section failure touches the loop.
bool loop_impaired(const PlantSpec& plant, const PlantState& state, const LoopId& loop);

/// Operating-mode change (process demand schedule); not a CCIC path.
PlantState set_mode(const PlantSpec& plant, const PlantState& state, const std::string& mode);

// Operator command path. This is the pre-existing HMI control channel; the
// CCIC layers never hold it, only human-issued actions are routed through it.
enum class PlantCommandKind { set_manual, set_auto, manual_output };

struct PlantCommand {
  PlantCommandKind kind = PlantCommandKind::set_manual;
  LoopId loop;
  double value = 0.0;
};

PlantState apply_operator_command(const PlantSpec& plant, const PlantState& state,
                                  const PlantCommand& command);

// Configuration files ("v":1).
PlantSpec plant_spec_from_json(const nlohmann::json& j);
PlantSpec load_plant_spec(const std::string& path);
InterdependencyEdge edge_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InterdependencyEdge& e);

}  // namespace ccic::plant
