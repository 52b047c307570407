#include "ccic/plant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ccic/log.hpp"

namespace ccic::plant {

using nlohmann::json;

std::string to_string(InfrastructureKind k) {
  switch (k) {
    case InfrastructureKind::water: return "water";
    case InfrastructureKind::power: return "power";
    case InfrastructureKind::telecom: return "telecom";
    case InfrastructureKind::other: return "other";
  }
  return "other";
}

std::string to_string(Resource r) {
  switch (r) {
    case Resource::electric_power: return "electric_power";
    case Resource::treated_water: return "treated_water";
    case Resource::communications: return "communications";
  }
  return "electric_power";
}

InfrastructureKind infrastructure_kind_from(const std::string& s) {
  if (s == "water") return InfrastructureKind::water;
  if (s == "power") return InfrastructureKind::power;
  if (s == "telecom") return InfrastructureKind::telecom;
  if (s == "other") return InfrastructureKind::other;
  throw ConfigError("unknown infrastructure kind '" + s + "'");
}

Resource resource_from(const std::string& s) {
  if (s == "electric_power") return Resource::electric_power;
  if (s == "treated_water") return Resource::treated_water;
  if (s == "communications") return Resource::communications;
  throw ConfigError("unknown resource '" + s + "'");
}

std::string to_string(InjectionKind k) {
  switch (k) {
    case InjectionKind::sensor_spoof: return "sensor_spoof";
    case InjectionKind::sensor_drift: return "sensor_drift";
    case InjectionKind::equipment_failure: return "equipment_failure";
    case InjectionKind::grid_section_failure: return "grid_section_failure";
    case InjectionKind::link_loss: return "link_loss";
    case InjectionKind::link_restore: return "link_restore";
  }
  return "sensor_spoof";
}

InjectionKind injection_kind_from(const std::string& s) {
  if (s == "sensor_spoof") return InjectionKind::sensor_spoof;
  if (s == "sensor_drift") return InjectionKind::sensor_drift;
  if (s == "equipment_failure") return InjectionKind::equipment_failure;
  if (s == "grid_section_failure") return InjectionKind::grid_section_failure;
  if (s == "link_loss") return InjectionKind::link_loss;
  if (s == "link_restore") return InjectionKind::link_restore;
  throw ConfigError("unknown injection kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// PlantSpec

void PlantSpec::finalize() {
  var_index_.clear();
  var_order_.clear();
  auto add = [&](const VarId& id, VarInfo info) {
    if (id.empty()) throw ConfigError(site_id + ": empty variable identifier");
    if (!var_index_.emplace(id, std::move(info)).second)
      throw ConfigError(site_id + ": duplicate variable identifier '" + id + "'");
    var_order_.push_back(id);
  };

  std::set<LoopId> loop_ids;
  for (const auto& l : loops) {
    if (!loop_ids.insert(l.loop_id).second)
      throw ConfigError(site_id + ": duplicate loop '" + l.loop_id + "'");
    if (!(l.time_constant > 0.0))
      throw ConfigError(site_id + "/" + l.loop_id + ": time_constant must be > 0");
    if (!(l.noise_sigma >= 0.0))
      throw ConfigError(site_id + "/" + l.loop_id + ": noise_sigma must be >= 0");
    if (!(l.span > 0.0)) throw ConfigError(site_id + "/" + l.loop_id + ": span must be > 0");
    if (l.input_vars.empty() || l.input_vars.size() >= 10)
      throw ConfigError(site_id + "/" + l.loop_id + ": input_vars must hold 1..9 identifiers");
    if (!(l.output_max > l.output_min))
      throw ConfigError(site_id + "/" + l.loop_id + ": output range is empty");
    add(l.measured_var, {VarKind::sensor, l.span, l.loop_id});
    add(l.actuator_var, {VarKind::actuator, l.output_max - l.output_min, l.loop_id});
  }
  for (const auto& d : derived_vars) {
    for (const auto& t : d.terms)
      if (!var_index_.count(t.var))
        throw ConfigError(site_id + ": derived var '" + d.id + "' references unknown '" + t.var + "'");
    LoopId owner;
    if (!d.terms.empty()) owner = var_index_.at(d.terms.front().var).loop_id;
    add(d.id, {VarKind::derived, d.span, owner});
  }
  for (const auto& a : alarms) add(a.id, {VarKind::alarm, 1.0, {}});
  for (const auto& c : couplings) add(c.id, {VarKind::coupling, 1.0, {}});

  for (const auto& l : loops) {
    std::set<VarId> seen;
    for (const auto& v : l.input_vars) {
      if (!var_index_.count(v))
        throw ConfigError(site_id + "/" + l.loop_id + ": unknown input var '" + v + "'");
      if (!seen.insert(v).second)
        throw ConfigError(site_id + "/" + l.loop_id + ": repeated input var '" + v + "'");
    }
  }
  if (operating_modes.empty()) throw ConfigError(site_id + ": at least one operating mode required");
  std::set<std::string> labels;
  for (const auto& m : operating_modes) {
    if (!labels.insert(m.label).second)
      throw ConfigError(site_id + ": duplicate operating mode '" + m.label + "'");
    for (const auto& [lid, sp] : m.setpoints)
      if (!loop_ids.count(lid))
        throw ConfigError(site_id + ": mode '" + m.label + "' names unknown loop '" + lid + "'");
  }
  const int counted = static_cast<int>(var_order_.size());
  if (total_var_count != counted)
    throw ConfigError(site_id + ": total_var_count " + std::to_string(total_var_count) +
                      " does not match " + std::to_string(counted) + " declared variables");
}

const VarInfo& PlantSpec::var(const VarId& id) const {
  auto it = var_index_.find(id);
  if (it == var_index_.end()) throw PreconditionError(site_id + ": unknown variable '" + id + "'");
  return it->second;
}

const ControlLoopSpec& PlantSpec::loop(const LoopId& id) const {
  for (const auto& l : loops)
    if (l.loop_id == id) return l;
  throw PreconditionError(site_id + ": unknown loop '" + id + "'");
}

const OperatingMode& PlantSpec::mode(const std::string& label) const {
  for (const auto& m : operating_modes)
    if (m.label == label) return m;
  throw PreconditionError(site_id + ": unknown operating mode '" + label + "'");
}

std::vector<Resource> PlantSpec::provided_resources() const {
  std::vector<Resource> out;
  for (const auto& l : loops)
    if (l.produces && std::find(out.begin(), out.end(), *l.produces) == out.end())
      out.push_back(*l.produces);
  return out;
}

double PlantSpec::setpoint_for(const ControlLoopSpec& l, const std::string& mode_label) const {
  const auto& m = mode(mode_label);
  auto it = m.setpoints.find(l.loop_id);
  return it == m.setpoints.end() ? l.setpoint : it->second;
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

double coupling_value(const PlantSpec& plant, const PlantState& state, Resource r) {
  for (const auto& c : plant.couplings)
    if (c.resource == r) return state.true_values.at(c.id);
  return 1.0;
}

void update_site_vars(const PlantSpec& plant, PlantState& s, const ExternalInputs* external) {
  for (const auto& d : plant.derived_vars) {
    double v = d.offset;
    for (const auto& t : d.terms) v += t.coef * s.true_values.at(t.var);
    s.true_values[d.id] = v;
  }
  for (const auto& a : plant.alarms) s.true_values[a.id] = s.failed_sections.count(a.section) ? 1.0 : 0.0;
  for (const auto& c : plant.couplings) {
    double v = 1.0;
    if (external) {
      auto it = external->find(c.resource);
      if (it != external->end()) v = std::clamp(it->second, 0.0, 1.0);
    } else if (auto it = s.true_values.find(c.id); it != s.true_values.end()) {
      v = it->second;
    }
    s.true_values[c.id] = v;
  }
}

bool section_failed(const PlantState& s, const ControlLoopSpec& l) {
  return !l.section.empty() && s.failed_sections.count(l.section) != 0;
}

}  // namespace

PlantState initial_state(const PlantSpec& plant, const std::string& mode) {
  PlantState s;
  s.mode = mode.empty() ? plant.operating_modes.front().label : mode;
  plant.mode(s.mode);
  s.rng.seed(plant.seed);
  for (const auto& l : plant.loops) {
    LoopRuntime rt;
    const double sp = plant.setpoint_for(l, s.mode);
    rt.process_value = sp;
    rt.output = std::clamp(sp / l.process_gain, l.output_min, l.output_max);
    rt.integral = l.pid_gains.ki != 0.0 ? rt.output / l.pid_gains.ki : 0.0;
    s.loops[l.loop_id] = rt;
    s.true_values[l.measured_var] = sp;
    s.true_values[l.actuator_var] = rt.output;
  }
  update_site_vars(plant, s, nullptr);
  return s;
}

PlantState step(const PlantSpec& plant, const PlantState& state, double dt,
                const ExternalInputs& external_inputs) {
  if (!(dt > 0.0)) throw PreconditionError("step: dt must be > 0");
  for (const auto& [var, ov] : state.injected_overrides)
    if (!plant.has_var(var)) throw PreconditionError("step: override on unknown variable '" + var + "'");

  PlantState s = state;
  for (const auto& l : plant.loops) {
    auto& rt = s.loops.at(l.loop_id);
    if (section_failed(s, l)) {
      rt.process_value = 0.0;
      rt.output = 0.0;
      rt.integral = 0.0;
      rt.prev_error = 0.0;
      s.true_values[l.measured_var] = 0.0;
      s.true_values[l.actuator_var] = 0.0;
      continue;
    }
    const double measured = s.true_values.at(l.measured_var);
    double u = rt.output;
    if (!rt.manual) {
      const double sp = plant.setpoint_for(l, s.mode);
      const double e = sp - measured;
      const double integral = rt.integral + e * dt;
      const double derivative = (e - rt.prev_error) / dt;
      const double raw = l.pid_gains.kp * e + l.pid_gains.ki * integral + l.pid_gains.kd * derivative;
      u = std::clamp(raw, l.output_min, l.output_max);
      if (u == raw) rt.integral = integral;  // conditional integration (anti-windup)
      rt.prev_error = e;
    }
    rt.output = u;

    double upstream = 1.0;
    if (l.depends_on) {
      auto it = external_inputs.find(*l.depends_on);
      if (it != external_inputs.end()) upstream = std::clamp(it->second, 0.0, 1.0);
    }
    const double effective = u * rt.capability * upstream;
    const double a = std::exp(-dt / l.time_constant);
    rt.process_value = a * rt.process_value + (1.0 - a) * l.process_gain * effective;

    double noise = 0.0;
    if (l.noise_sigma > 0.0) noise = l.noise_sigma * l.span * s.normal(s.rng);
    s.true_values[l.measured_var] = rt.process_value + noise;
    s.true_values[l.actuator_var] = u;
  }
  update_site_vars(plant, s, &external_inputs);
  s.sim_time += dt;
  return s;
}

void validate_injection(const InjectionEvent& e) {
  auto need = [&](const char* key) {
    if (!e.params.is_object() || !e.params.contains(key))
      throw PreconditionError(to_string(e.kind) + " injection requires param '" + key + "'");
  };
  const bool clearing = e.params.is_object() && e.params.value("clear", false);
  switch (e.kind) {
    case InjectionKind::sensor_spoof:
      need("target");
      if (!clearing) need("offset");
      break;
    case InjectionKind::sensor_drift:
      need("target");
      if (!clearing) need("rate");
      break;
    case InjectionKind::equipment_failure:
      if (!e.params.is_object() || (!e.params.contains("loop") && !e.params.contains("target")))
        throw PreconditionError("equipment_failure injection requires param 'loop' or 'target'");
      break;
    case InjectionKind::grid_section_failure:
      need("section");
      break;
    case InjectionKind::link_loss:
    case InjectionKind::link_restore:
      break;
  }
}

PlantState apply_injection(const PlantSpec& plant, const PlantState& state, const InjectionEvent& event) {
  if (event.site != plant.site_id)
    throw PreconditionError("injection for site '" + event.site + "' applied to '" + plant.site_id + "'");
  validate_injection(event);
  PlantState s = state;
  const bool clearing = event.params.is_object() && event.params.value("clear", false);

  switch (event.kind) {
    case InjectionKind::sensor_spoof:
    case InjectionKind::sensor_drift: {
      const VarId target = event.params.at("target").get<std::string>();
      plant.var(target);
      if (clearing) {
        s.injected_overrides.erase(target);
        break;
      }
      Override ov;
      ov.started_at = s.sim_time;
      if (event.kind == InjectionKind::sensor_spoof) {
        ov.kind = OverrideKind::spoof;
        ov.offset = event.params.at("offset").get<double>();
      } else {
        ov.kind = OverrideKind::drift;
        ov.rate_per_hour = event.params.at("rate").get<double>();
      }
      if (s.injected_overrides.count(target))
        logger()->warn("{}: replacing active override on '{}'", plant.site_id, target);
      s.injected_overrides[target] = ov;
      break;
    }
    case InjectionKind::equipment_failure: {
      LoopId lid;
      if (event.params.contains("loop")) {
        lid = event.params.at("loop").get<std::string>();
      } else {
        const auto& info = plant.var(event.params.at("target").get<std::string>());
        if (info.loop_id.empty()) throw PreconditionError("equipment_failure target has no owning loop");
        lid = info.loop_id;
      }
      plant.loop(lid);
      auto& rt = s.loops.at(lid);
      if (clearing) {
        rt.failed = false;
        rt.capability = 1.0;
      } else {
        rt.failed = true;
        rt.capability = std::clamp(event.params.value("capability", 0.0), 0.0, 1.0);
      }
      break;
    }
    case InjectionKind::grid_section_failure: {
      const std::string section = event.params.at("section").get<std::string>();
      const bool known = std::any_of(plant.loops.begin(), plant.loops.end(),
                                     [&](const ControlLoopSpec& l) { return l.section == section; });
      if (!known) throw PreconditionError(plant.site_id + ": unknown grid section '" + section + "'");
      if (clearing) s.failed_sections.erase(section);
      else s.failed_sections.insert(section);
      break;
    }
    case InjectionKind::link_loss:
    case InjectionKind::link_restore:
      break;  // handled by the link fabric
  }
  return s;
}

double availability(const PlantSpec& plant, const PlantState& state, Resource resource) {
  double total = 0.0;
  double delivered = 0.0;
  for (const auto& l : plant.loops) {
    if (!l.produces || *l.produces != resource) continue;
    total += l.weight;
    if (section_failed(state, l)) continue;
    const double upstream = l.depends_on ? coupling_value(plant, state, *l.depends_on) : 1.0;
    delivered += l.weight * state.loops.at(l.loop_id).capability * upstream;
  }
  if (total <= 0.0)
    throw PreconditionError(plant.site_id + " does not produce " + to_string(resource));
  return std::clamp(delivered / total, 0.0, 1.0);
}

double reported_value(const PlantSpec& plant, const PlantState& state, const VarId& var) {
  const double truth = state.true_values.at(var);
  auto it = state.injected_overrides.find(var);
  if (it == state.injected_overrides.end()) return truth;
  const Override& ov = it->second;
  if (ov.kind == OverrideKind::spoof) return truth + ov.offset;
  const double hours = (state.sim_time - ov.started_at) / 3600.0;
  return truth + ov.rate_per_hour * hours * plant.var(var).span;
}

bool loop_impaired(const PlantSpec& plant, const PlantState& state, const LoopId& loop) {
  const auto& l = plant.loop(loop);
  return state.loops.at(loop).failed || section_failed(state, l);
}

PlantState set_mode(const PlantSpec& plant, const PlantState& state, const std::string& mode) {
  plant.mode(mode);
  PlantState s = state;
  s.mode = mode;
  return s;
}

PlantState apply_operator_command(const PlantSpec& plant, const PlantState& state,
                                  const PlantCommand& command) {
  const auto& l = plant.loop(command.loop);
  PlantState s = state;
  auto& rt = s.loops.at(command.loop);
  switch (command.kind) {
    case PlantCommandKind::set_manual:
      rt.manual = true;
      break;
    case PlantCommandKind::set_auto:
      rt.manual = false;
      rt.prev_error = 0.0;
      rt.integral = l.pid_gains.ki != 0.0 ? rt.output / l.pid_gains.ki : 0.0;  // bumpless
      break;
    case PlantCommandKind::manual_output:
      rt.manual = true;
      rt.output = std::clamp(command.value, l.output_min, l.output_max);
      s.true_values[l.actuator_var] = rt.output;
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::optional<Resource> optional_resource(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return resource_from(j.at(key).get<std::string>());
}

}  // namespace

PlantSpec plant_spec_from_json(const json& j) {
  try {
    if (j.value("v", 0) != 1) throw ConfigError("plant config: unsupported schema version (expected \"v\":1)");
    PlantSpec p;
    p.site_id = j.at("site_id").get<std::string>();
    p.infrastructure_kind = infrastructure_kind_from(j.at("infrastructure_kind").get<std::string>());
    p.seed = j.value("seed", std::uint64_t{0});
    p.mode_dwell_s = j.value("mode_dwell_s", 1800.0);
    for (const auto& jl : j.at("loops")) {
      ControlLoopSpec l;
      l.loop_id = jl.at("loop_id").get<std::string>();
      l.measured_var = jl.at("measured_var").get<std::string>();
      l.actuator_var = jl.at("actuator_var").get<std::string>();
      l.input_vars = jl.at("input_vars").get<std::vector<std::string>>();
      l.setpoint = jl.at("setpoint").get<double>();
      const auto& g = jl.at("pid_gains");
      l.pid_gains = {g.at(0).get<double>(), g.at(1).get<double>(), g.at(2).get<double>()};
      l.process_gain = jl.value("process_gain", 1.0);
      l.time_constant = jl.at("time_constant").get<double>();
      l.noise_sigma = jl.value("noise_sigma", 0.0);
      l.span = jl.value("span", 100.0);
      l.output_min = jl.value("output_min", 0.0);
      l.output_max = jl.value("output_max", 100.0);
      l.section = jl.value("section", std::string{});
      l.produces = optional_resource(jl, "produces");
      l.weight = jl.value("weight", 1.0);
      l.depends_on = optional_resource(jl, "depends_on");
      p.loops.push_back(std::move(l));
    }
    for (const auto& jd : j.value("derived_vars", json::array())) {
      DerivedVar d;
      d.id = jd.at("id").get<std::string>();
      for (const auto& t : jd.at("terms")) d.terms.push_back({t.at("var").get<std::string>(), t.at("coef").get<double>()});
      d.offset = jd.value("offset", 0.0);
      d.span = jd.value("span", 100.0);
      p.derived_vars.push_back(std::move(d));
    }
    for (const auto& ja : j.value("alarms", json::array()))
      p.alarms.push_back({ja.at("id").get<std::string>(), ja.at("section").get<std::string>()});
    for (const auto& jc : j.value("couplings", json::array()))
      p.couplings.push_back({jc.at("id").get<std::string>(), resource_from(jc.at("resource").get<std::string>())});
    for (const auto& jm : j.at("operating_modes")) {
      OperatingMode m;
      m.label = jm.at("label").get<std::string>();
      m.setpoints = jm.value("setpoints", std::map<std::string, double>{});
      p.operating_modes.push_back(std::move(m));
    }
    p.total_var_count = j.at("total_var_count").get<int>();
    Fnv1a h;
    h.update(j.dump());
    p.config_hash = hex64(h.digest());
    p.finalize();
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("plant config: ") + e.what());
  }
}

PlantSpec load_plant_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open plant config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return plant_spec_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

InterdependencyEdge edge_from_json(const json& j) {
  InterdependencyEdge e;
  e.provider_site = j.at("provider_site").get<std::string>();
  e.consumer_site = j.at("consumer_site").get<std::string>();
  e.resource = resource_from(j.at("resource").get<std::string>());
  e.coupling_var = j.value("coupling_var", std::string{});
  e.criticality = j.at("criticality").get<double>();
  if (e.provider_site == e.consumer_site) throw ConfigError("interdependency edge: provider equals consumer");
  if (!(e.criticality >= 0.0 && e.criticality <= 1.0))
    throw ConfigError("interdependency edge: criticality outside [0,1]");
  return e;
}

json to_json(const InterdependencyEdge& e) {
  return {{"provider_site", e.provider_site}, {"consumer_site", e.consumer_site},
          {"resource", to_string(e.resource)}, {"coupling_var", e.coupling_var},
          {"criticality", e.criticality}};
}

}  // namespace ccic::plant
