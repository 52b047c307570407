#include "cli.hpp"

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ccic/community_node.hpp"
#include "ccic/detector.hpp"
#include "ccic/log.hpp"
#include "ccic/model_store.hpp"
#include "ccic/scenario.hpp"
#include "ccic/serve.hpp"
#include "ccic/tap.hpp"

namespace ccic::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct Common {
  std::string community = "configs/community.json";
  std::vector<std::string> configs;
};

// Plant configs named on the command line, or every site of the manifest.
std::vector<std::string> config_paths(const Common& c) {
  if (!c.configs.empty()) return c.configs;
  std::vector<std::string> out;
  for (const auto& s : scenario::load_community_manifest(c.community).sites) out.push_back(s.config_path);
  return out;
}

std::string archive_stem(const std::string& dir, const SiteId& site) { return (fs::path(dir) / site).string(); }

// --- generate-history ----------------------------------------------------------

struct HistoryArgs {
  Common common;
  double hours = 6.0;
  std::optional<std::uint64_t> seed;
  std::string out = "history";
  bool force = false;
};

int generate_history(const HistoryArgs& a, std::ostream& out) {
  if (a.hours < 0.0) throw ConfigError("--hours must be >= 0");
  for (const auto& path : config_paths(a.common)) {
    auto spec = plant::load_plant_spec(path);
    if (a.seed) spec.seed = *a.seed;
    const auto stem = archive_stem(a.out, spec.site_id);
    if (!a.force && (fs::exists(stem + ".csv") || fs::exists(stem + ".meta.json")))
      throw ConfigError("history " + stem + ".csv already exists (pass --force to overwrite)");
    fs::create_directories(a.out);
    const auto archive = tap::generate_history(spec, a.hours);
    tap::save_archive(archive, stem);
    out << spec.site_id << ": " << archive.rows.size() << " rows -> " << stem << ".csv\n";
  }
  return 0;
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string history = "history";
  std::string out = "models";
  std::string blend_recent;  // directory of recent archives
  std::string models;        // existing models for --blend-recent; defaults to --out
  double fraction = 0.20;
};

json state_counts(const detector::TrainingSet& set) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : set.labels) ++counts[l];
  return counts;
}

int train(const TrainArgs& a, std::ostream& out) {
  if (a.fraction < 0.0 || a.fraction > 1.0) throw ConfigError("--fraction must be in [0, 1]");
  json report = {{"history", a.history}, {"sites", json::object()}};
  if (!a.blend_recent.empty()) {
    report["blend_recent"] = a.blend_recent;
    report["fraction"] = a.fraction;
  }
  for (const auto& path : config_paths(a.common)) {
    const auto spec = plant::load_plant_spec(path);
    const auto history = tap::load_archive(archive_stem(a.history, spec.site_id), spec);
    std::optional<tap::HistoryArchive> recent;
    models::ClassifierSet previous;
    if (!a.blend_recent.empty()) {
      recent = tap::load_archive(archive_stem(a.blend_recent, spec.site_id), spec);
      previous = models::load_site_models(a.models.empty() ? a.out : a.models, spec, true);
    }
    json loops = json::object();
    for (const auto& loop : spec.loops) {
      const auto set = detector::extract_training_set(history, loop.input_vars);
      detector::LoopClassifier c;
      std::size_t dropped = 0;
      try {
        if (recent) {
          // Only rows the current model still considers clean may be blended in.
          const auto& prev = previous.at(loop.loop_id);
          const auto all = detector::extract_training_set(*recent, loop.input_vars);
          detector::TrainingSet clean;
          clean.input_vars = all.input_vars;
          for (std::size_t i = 0; i < all.size(); ++i) {
            if (detector::classify(prev, all.x[i]).anomalous) {
              ++dropped;
              continue;
            }
            clean.x.push_back(all.x[i]);
            clean.labels.push_back(all.labels[i]);
          }
          c = detector::partial_retrain(prev, set, clean, a.fraction);
        } else {
          c = detector::train(set, loop.loop_id);
        }
      } catch (const PreconditionError& e) {
        throw ConfigError(spec.site_id + "/" + loop.loop_id + ": " + e.what());
      }
      c.config_hash = spec.config_hash;
      models::save_classifier(c, models::loop_model_path(a.out, spec.site_id, loop.loop_id));
      loops[loop.loop_id] = {{"held_out_accuracy", c.held_out_accuracy},
                             {"training_rows", c.training_rows},
                             {"states", state_counts(set)},
                             {"fingerprint", c.training_fingerprint}};
      if (recent) loops[loop.loop_id]["recent_rows_dropped"] = dropped;
      out << spec.site_id << "/" << loop.loop_id << ": held-out accuracy " << c.held_out_accuracy << "\n";
    }
    report["sites"][spec.site_id] = loops;
  }
  // The community classifier covers every manifest site, whichever configs were named.
  const auto community = community::train_classifier(scenario::load_community_manifest(a.common.community).site_ids());
  models::save_classifier(community, models::community_model_path(a.out));
  report["community"] = {{"held_out_accuracy", community.held_out_accuracy},
                         {"training_rows", community.training_rows},
                         {"fingerprint", community.training_fingerprint}};
  out << "community: held-out accuracy " << community.held_out_accuracy << "\n";
  std::ofstream rf(fs::path(a.out) / "report.json");
  rf << report.dump(2) << "\n";
  if (!rf) throw Error("cannot write " + (fs::path(a.out) / "report.json").string());
  return 0;
}

// --- run -------------------------------------------------------------------------

struct RunArgs {
  std::string scenario;
  std::string models = "models";
  std::string history;
  std::string out;
  bool serve = false;
  std::string host = "127.0.0.1";
  int port = 8080;
  double speed = 1.0;
  bool allow_stale = false;
  std::string transport = "in_process";
  bool no_actors = false;
  bool detached = false;
};

void print_metrics(const scenario::RunMetrics& m, std::ostream& out) {
  out << "run " << m.run_id << ": " << m.ticks << " ticks, false-anomaly rate " << m.false_anomaly_rate << "\n";
  for (const auto& d : m.detection) {
    out << "  detection " << d.site << " " << d.kind << " " << d.target << " @" << d.at_time << ": ";
    if (d.latency_s)
      out << *d.latency_s << " s\n";
    else
      out << "not detected\n";
  }
  for (const auto& e : m.expected)
    out << "  " << (e.passed ? "PASS " : "FAIL ") << e.name
        << (e.matched_at ? " @" + std::to_string(*e.matched_at) : std::string{})
        << (e.passed ? std::string{} : " (" + e.reason + ")") << "\n";
}

int run(const RunArgs& a, std::ostream& out) {
  scenario::ScenarioScript script;
  if (a.scenario.empty()) {
    if (!a.serve) throw ConfigError("--scenario is required unless --serve is given");
    script = scenario::free_play(std::numeric_limits<double>::max());
  } else {
    script = scenario::load_script(a.scenario);
  }
  auto manifest = scenario::load_community_manifest(script.community_path);
  scenario::RunOptions opt;
  opt.out_dir = a.out;
  opt.scripted_actors = !a.no_actors;
  opt.attach_ccic = !a.detached;
  if (a.transport == "tcp")
    opt.transport = scenario::TransportKind::tcp;
  else if (a.transport != "in_process")
    throw ConfigError("--transport must be in_process or tcp");
  std::map<SiteId, scenario::SiteModels> models;
  std::optional<detector::LoopClassifier> community;
  if (opt.attach_ccic) {
    models = scenario::load_models(manifest, a.models, a.history, a.allow_stale);
    community = scenario::load_community_model(a.models);
  }
  auto runner =
      std::make_unique<scenario::Runner>(std::move(script), std::move(manifest), std::move(models), community, opt);

  if (!a.serve) {
    const auto m = runner->run();
    print_metrics(m, out);
    return m.all_expected_passed() ? 0 : 1;
  }

  serve::Session session(std::move(runner));
  serve::ApiServer server(session);
  server.start(a.host, a.port);
  out << "console API on http://" << a.host << ":" << server.port() << "/api/v1\n" << std::flush;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  session.run_paced(a.speed, g_interrupted);
  const auto m = session.with([](scenario::Runner& r) {
    auto metrics = r.metrics();
    r.write_metrics(metrics);
    return metrics;
  });
  print_metrics(m, out);
  if (!g_interrupted) {
    out << "scenario finished; still serving until interrupted\n" << std::flush;
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  server.stop();
  return m.all_expected_passed() ? 0 : 1;
}

// --- replay ----------------------------------------------------------------------

struct ReplayArgs {
  std::string logs;
  std::string scenario;
  std::string out;
};

int replay(const ReplayArgs& a, std::ostream& out, std::ostream& err) {
  const auto timeline = scenario::replay(a.logs);
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw Error("cannot write " + a.out);
  }
  std::ostream& dst = a.out.empty() ? out : file;
  for (const auto& r : timeline) dst << events::to_json(r).dump() << "\n";
  if (a.scenario.empty()) return 0;
  const auto script = scenario::load_script(a.scenario);
  const auto results = scenario::evaluate_expected(script.expected_events, timeline);
  bool ok = true;
  for (const auto& e : results) {
    ok = ok && e.passed;
    err << (e.passed ? "PASS " : "FAIL ") << e.name << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale cross-infrastructure coordination: plants, site nodes and a community node"};
  app.require_subcommand(1);

  HistoryArgs h;
  auto* gh = app.add_subcommand("generate-history", "Simulate plants through their modes and write CSV archives");
  gh->add_option("--config", h.common.configs, "Plant config (repeatable); default: every site in --community");
  gh->add_option("--community", h.common.community, "Community manifest")->capture_default_str();
  gh->add_option("--hours", h.hours, "Simulated hours")->capture_default_str();
  gh->add_option("--seed", h.seed, "Override the config seed");
  gh->add_option("--out", h.out, "Output directory")->capture_default_str();
  gh->add_flag("--force", h.force, "Overwrite existing archives");

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "Train loop classifiers and the community classifier");
  tr->add_option("--config", t.common.configs, "Plant config (repeatable); default: every site in --community");
  tr->add_option("--community", t.common.community, "Community manifest")->capture_default_str();
  tr->add_option("--history", t.history, "Directory of history archives")->capture_default_str();
  tr->add_option("--out", t.out, "Model directory")->capture_default_str();
  tr->add_option("--blend-recent", t.blend_recent, "Directory of recent archives to blend into existing models");
  tr->add_option("--models", t.models, "Existing models for --blend-recent (default: --out)");
  tr->add_option("--fraction", t.fraction, "Share of training rows replaced by recent data")->capture_default_str();

  RunArgs r;
  auto* rn = app.add_subcommand("run", "Run a scenario headless or behind the console API");
  rn->add_option("--scenario", r.scenario, "Scenario file; omit with --serve for free play");
  rn->add_option("--models", r.models, "Model directory")->capture_default_str();
  rn->add_option("--history", r.history, "History directory (needed when the scenario retrains)");
  rn->add_option("--out", r.out, "Directory for event logs and metrics.json");
  rn->add_flag("--serve", r.serve, "Expose the console API and pace the run");
  rn->add_option("--host", r.host, "Listen address")->capture_default_str();
  rn->add_option("--port", r.port, "Listen port (0 picks one)")->capture_default_str();
  rn->add_option("--speed", r.speed, "Simulated seconds per wall second in serve mode (0: uncapped)")
      ->capture_default_str();
  rn->add_flag("--allow-stale", r.allow_stale, "Accept models trained for a different config");
  rn->add_option("--transport", r.transport, "in_process or tcp")->capture_default_str();
  rn->add_flag("--no-actors", r.no_actors, "Disable scripted actors");
  rn->add_flag("--detached", r.detached, "Run the plants without the coordination layers");

  ReplayArgs p;
  auto* rp = app.add_subcommand("replay", "Merge per-node logs into one timeline (JSON lines)");
  rp->add_option("--logs", p.logs, "Directory with *.log.jsonl files")->required();
  rp->add_option("--scenario", p.scenario, "Re-evaluate this scenario's expected events");
  rp->add_option("--out", p.out, "Write the timeline here instead of stdout");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gh) return generate_history(h, out);
    if (*tr) return train(t, out);
    if (*rn) return run(r, out);
    if (*rp) return replay(p, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace ccic::cli
