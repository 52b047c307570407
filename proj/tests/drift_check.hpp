#pragma once

// Runs the drift scenario with and without retraining and summarizes the
// drifted loop's classifications over a late window.

#include <optional>
#include <string>

#include "ccic/scenario.hpp"
#include "node_support.hpp"

namespace ccic::testing {

struct DriftOutcome {
  double late_anomaly_rate = 0.0;  // drifted loop, window before the step spoof
  std::size_t retrains = 0;
  std::optional<double> spoof_latency_s;
  scenario::RunMetrics metrics;
};

struct DriftSetup {
  std::string script_path = "scenarios/drift.json";
  SiteId site = "water";
  LoopId loop = "dist_flow";
  double window_s = 1200.0;
};

inline DriftOutcome run_drift(const DriftSetup& setup, bool retrain) {
  auto script = scenario::load_script(setup.script_path);
  if (!retrain) script.retrain.reset();
  double spoof_at = script.duration_s;
  std::size_t spoof_index = 0;
  for (std::size_t i = 0; i < script.injections.size(); ++i)
    if (script.injections[i].kind == plant::InjectionKind::sensor_spoof) {
      spoof_at = script.injections[i].at_time;
      spoof_index = i;
    }
  scenario::Runner r(script, scenario::load_community_manifest(script.community_path), reference_models(),
                     reference_community_classifier());
  std::size_t total = 0, anomalous = 0;
  while (!r.finished()) {
    r.step();
    if (r.now() <= spoof_at - setup.window_s || r.now() >= spoof_at) continue;
    for (const auto& c : r.last_report(setup.site).classifications) {
      if (c.loop_id != setup.loop) continue;
      ++total;
      anomalous += c.anomalous;
    }
  }
  DriftOutcome out;
  out.metrics = r.metrics();
  out.late_anomaly_rate = total ? static_cast<double>(anomalous) / static_cast<double>(total) : 0.0;
  for (const auto& rec : r.timeline().records())
    if (rec.kind == "retrain" && rec.site == setup.site) ++out.retrains;
  for (const auto& d : out.metrics.detection)
    if (d.injection == spoof_index) out.spoof_latency_s = d.latency_s;
  return out;
}

}  // namespace ccic::testing
