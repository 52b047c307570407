#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ccic/plant.hpp"
#include "test_support.hpp"

using namespace ccic;
using namespace ccic::plant;
using ccic::testing::reference_plant;
using ccic::testing::without_noise;

namespace {

// Textbook positional PID driving a first-order plant discretized exactly
// (zero-order hold). Written independently of plant::step.
struct ReferencePid {
  double kp, ki, kd, K, tau;
  double y, integral = 0.0, prev_error = 0.0, u = 0.0;

  void advance(double sp, double dt) {
    const double e = sp - y;
    integral += e * dt;
    u = kp * e + ki * integral + kd * (e - prev_error) / dt;
    prev_error = e;
    y = std::exp(-dt / tau) * y + (1.0 - std::exp(-dt / tau)) * K * u;
  }
};

PlantSpec single_loop(double kd = 0.0) {
  PlantSpec p;
  p.site_id = "unit";
  p.infrastructure_kind = InfrastructureKind::other;
  ControlLoopSpec l;
  l.loop_id = "l1";
  l.measured_var = "pv";
  l.actuator_var = "out";
  l.input_vars = {"pv", "out"};
  l.setpoint = 40.0;
  l.pid_gains = {0.8, 0.3, kd};
  l.process_gain = 1.0;
  l.time_constant = 3.0;
  l.span = 100.0;
  l.produces = Resource::treated_water;
  p.loops.push_back(l);
  p.operating_modes = {{"base", {{"l1", 40.0}}}, {"step", {{"l1", 45.0}}}};
  p.total_var_count = 2;
  p.finalize();
  return p;
}

}  // namespace

TEST_CASE("PlantSpec rejects structural violations", "[plant]") {
  auto p = single_loop();
  SECTION("duplicate identifiers") {
    p.loops[0].actuator_var = "pv";
    CHECK_THROWS_AS(p.finalize(), ConfigError);
  }
  SECTION("variable count mismatch") {
    p.total_var_count = 3;
    CHECK_THROWS_AS(p.finalize(), ConfigError);
  }
  SECTION("too many classifier inputs") {
    p.loops[0].input_vars = {"pv", "out", "a", "b", "c", "d", "e", "f", "g", "h"};
    CHECK_THROWS_AS(p.finalize(), ConfigError);
  }
  SECTION("non-positive time constant") {
    p.loops[0].time_constant = 0.0;
    CHECK_THROWS_AS(p.finalize(), ConfigError);
  }
}

TEST_CASE("reference configs load and carry desk-scale variable counts", "[plant]") {
  for (const auto* name : {"water_plant", "power_grid", "telecom"}) {
    const auto p = reference_plant(name);
    CHECK(p.total_var_count >= 20);
    CHECK(p.total_var_count <= 60);
    CHECK(static_cast<int>(p.variables().size()) == p.total_var_count);
  }
  CHECK(reference_plant("water_plant").loops.size() >= 6);
  const auto power = reference_plant("power_grid");
  CHECK(power.loops.size() >= 8);
}

TEST_CASE("steady state is a fixed point", "[plant]") {
  const auto p = single_loop();
  auto s = initial_state(p);
  const double out0 = s.true_values.at("out");
  for (int k = 0; k < 100; ++k) s = step(p, s, 1.0);
  CHECK(s.true_values.at("out") == Catch::Approx(out0).margin(1e-12));
  CHECK(s.true_values.at("pv") == Catch::Approx(40.0).margin(1e-12));
  CHECK(s.sim_time == 100.0);
}

TEST_CASE("setpoint step matches the reference PID oracle", "[plant]") {
  for (double kd : {0.0, 0.05}) {
    const auto p = single_loop(kd);
    auto s = set_mode(p, initial_state(p, "base"), "step");
    ReferencePid ref{0.8, 0.3, kd, 1.0, 3.0, 40.0};
    ref.integral = 40.0 / 0.3;
    for (int k = 0; k < 200; ++k) {
      s = step(p, s, 0.5);
      ref.advance(45.0, 0.5);
      REQUIRE(s.true_values.at("pv") == Catch::Approx(ref.y).margin(1e-9));
      REQUIRE(s.true_values.at("out") == Catch::Approx(ref.u).margin(1e-9));
    }
  }
}

TEST_CASE("every reference loop converges within 20 time constants", "[plant][property]") {
  for (const auto* name : {"water_plant", "power_grid", "telecom"}) {
    const auto p = without_noise(reference_plant(name));
    for (std::size_t m = 1; m < p.operating_modes.size(); ++m) {
      auto s = set_mode(p, initial_state(p, p.operating_modes[0].label), p.operating_modes[m].label);
      double longest = 0.0;
      for (const auto& l : p.loops) longest = std::max(longest, l.time_constant);
      const int steps = static_cast<int>(std::ceil(20.0 * longest));
      for (int k = 0; k < steps; ++k) s = step(p, s, 1.0);
      for (const auto& l : p.loops) {
        const double sp = p.setpoint_for(l, s.mode);
        INFO(name << "/" << l.loop_id << " mode " << s.mode);
        CHECK(std::abs(s.true_values.at(l.measured_var) - sp) <= 0.01 * std::abs(sp));
      }
    }
  }
}

TEST_CASE("spoof alters the reading, never the physics", "[plant]") {
  const auto p = reference_plant("water_plant");
  auto clean = initial_state(p);
  InjectionEvent spoof{0.0, "water", InjectionKind::sensor_spoof, {{"target", "intake_flow"}, {"offset", 5.0}}};
  auto spoofed = apply_injection(p, clean, spoof);
  for (int k = 0; k < 300; ++k) {
    clean = step(p, clean, 1.0);
    spoofed = step(p, spoofed, 1.0);
    REQUIRE(clean.true_values == spoofed.true_values);
    REQUIRE(reported_value(p, spoofed, "intake_flow") == clean.true_values.at("intake_flow") + 5.0);
    REQUIRE(reported_value(p, spoofed, "intake_pump_speed") == clean.true_values.at("intake_pump_speed"));
  }
}

TEST_CASE("drift accumulates linearly in fraction of span", "[plant]") {
  const auto p = reference_plant("water_plant");
  auto s = initial_state(p);
  s = apply_injection(p, s, {0.0, "water", InjectionKind::sensor_drift,
                             {{"target", "intake_pump_speed"}, {"rate", 0.001}}});
  for (int k = 0; k < 100; ++k) s = step(p, s, 3600.0);
  const double offset = reported_value(p, s, "intake_pump_speed") - s.true_values.at("intake_pump_speed");
  CHECK(offset / p.var("intake_pump_speed").span == Catch::Approx(0.1).margin(1e-6));
}

TEST_CASE("grid section failure zeroes the section and raises its alarm", "[plant]") {
  const auto p = reference_plant("power_grid");
  auto s = initial_state(p);
  CHECK(availability(p, s, Resource::electric_power) == 1.0);
  s = apply_injection(p, s, {0.0, "power", InjectionKind::grid_section_failure, {{"section", "A"}}});
  s = step(p, s, 1.0);
  for (const auto& l : p.loops) {
    if (l.section == "A") {
      CHECK(s.true_values.at(l.measured_var) == 0.0);
      CHECK(s.true_values.at(l.actuator_var) == 0.0);
    } else {
      CHECK(s.true_values.at(l.measured_var) != 0.0);
    }
  }
  CHECK(s.true_values.at("alarm_section_A") == 1.0);
  CHECK(s.true_values.at("alarm_section_B") == 0.0);
  CHECK(availability(p, s, Resource::electric_power) == 0.5);
  CHECK_THROWS_AS(apply_injection(p, s, {0.0, "power", InjectionKind::grid_section_failure, {{"section", "Z"}}}),
                  PreconditionError);
}

TEST_CASE("availability follows the weighted-mean formula", "[plant]") {
  const auto p = reference_plant("water_plant");
  auto s = initial_state(p);
  CHECK(availability(p, s, Resource::treated_water) == 1.0);
  s = apply_injection(p, s, {0.0, "water", InjectionKind::equipment_failure, {{"loop", "intake"}, {"capability", 0.7}}});
  // producing loops: intake (w=2), dist_pressure (w=2), dist_flow (w=1)
  CHECK(availability(p, s, Resource::treated_water) == Catch::Approx((2.0 * 0.7 + 2.0 + 1.0) / 5.0).epsilon(1e-15));
  s = step(p, s, 1.0, {{Resource::electric_power, 0.5}});
  CHECK(availability(p, s, Resource::treated_water) == Catch::Approx((2.0 * 0.35 + 2.0 * 0.5 + 0.5) / 5.0).epsilon(1e-15));
  CHECK_THROWS_AS(availability(p, s, Resource::electric_power), PreconditionError);
}

TEST_CASE("availability is bounded and monotone in failed producing loops", "[plant][property]") {
  const auto p = reference_plant("power_grid");
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = initial_state(p);
    std::vector<std::string> gens;
    for (const auto& l : p.loops)
      if (l.produces) gens.push_back(l.loop_id);
    std::shuffle(gens.begin(), gens.end(), rng);
    double prev = availability(p, s, Resource::electric_power);
    for (const auto& g : gens) {
      s = apply_injection(p, s, {0.0, "power", InjectionKind::equipment_failure, {{"loop", g}}});
      const double a = availability(p, s, Resource::electric_power);
      REQUIRE(a >= 0.0);
      REQUIRE(a <= prev);
      prev = a;
    }
    CHECK(prev == 0.0);
  }
}

TEST_CASE("link events leave the plant untouched", "[plant]") {
  const auto p = reference_plant("water_plant");
  const auto s = initial_state(p);
  CHECK(apply_injection(p, s, {0.0, "water", InjectionKind::link_loss, {}}) == s);
  CHECK(apply_injection(p, s, {0.0, "water", InjectionKind::link_restore, {}}) == s);
}

TEST_CASE("simulation is deterministic for a fixed seed", "[plant][property]") {
  const auto p = reference_plant("water_plant");
  auto run = [&] {
    auto s = initial_state(p);
    std::vector<PlantState> traj;
    for (int k = 0; k < 500; ++k) {
      if (k == 100) s = set_mode(p, s, "high_demand");
      if (k == 200) s = apply_injection(p, s, {0.0, "water", InjectionKind::sensor_spoof, {{"target", "dist_flow"}, {"offset", 3.0}}});
      s = step(p, s, 1.0, {{Resource::electric_power, 0.9}});
      traj.push_back(s);
    }
    return traj;
  };
  CHECK(run() == run());
}

TEST_CASE("step and injection preconditions", "[plant]") {
  const auto p = reference_plant("water_plant");
  auto s = initial_state(p);
  CHECK_THROWS_AS(step(p, s, 0.0), PreconditionError);
  CHECK_THROWS_AS(step(p, s, -1.0), PreconditionError);
  auto bad = s;
  bad.injected_overrides["nope"] = {};
  CHECK_THROWS_AS(step(p, bad, 1.0), PreconditionError);
  CHECK_THROWS_AS(apply_injection(p, s, {0.0, "water", InjectionKind::sensor_spoof, {{"target", "nope"}, {"offset", 1.0}}}),
                  PreconditionError);
  CHECK_THROWS_AS(apply_injection(p, s, {0.0, "water", InjectionKind::sensor_spoof, {{"target", "intake_flow"}}}),
                  PreconditionError);
  CHECK_THROWS_AS(apply_injection(p, s, {0.0, "water", InjectionKind::sensor_drift, {{"target", "intake_flow"}}}),
                  PreconditionError);
  CHECK_THROWS_AS(apply_injection(p, s, {0.0, "power", InjectionKind::link_loss, {}}), PreconditionError);
}

TEST_CASE("duplicate spoof replaces the active one", "[plant]") {
  const auto p = reference_plant("water_plant");
  auto s = initial_state(p);
  s = apply_injection(p, s, {0.0, "water", InjectionKind::sensor_spoof, {{"target", "intake_flow"}, {"offset", 5.0}}});
  s = apply_injection(p, s, {0.0, "water", InjectionKind::sensor_spoof, {{"target", "intake_flow"}, {"offset", 2.0}}});
  CHECK(s.injected_overrides.size() == 1);
  CHECK(reported_value(p, s, "intake_flow") == s.true_values.at("intake_flow") + 2.0);
}

TEST_CASE("operator command path holds output in manual", "[plant]") {
  const auto p = reference_plant("water_plant");
  auto s = initial_state(p);
  s = apply_operator_command(p, s, {PlantCommandKind::manual_output, "intake", 30.0});
  s = set_mode(p, s, "high_demand");
  for (int k = 0; k < 20; ++k) s = step(p, s, 1.0);
  CHECK(s.true_values.at("intake_pump_speed") == 30.0);
  s = apply_operator_command(p, s, {PlantCommandKind::set_auto, "intake", 0.0});
  for (int k = 0; k < 60; ++k) s = step(p, s, 1.0);
  CHECK(s.true_values.at("intake_flow") == Catch::Approx(60.0).margin(2.0));
}
