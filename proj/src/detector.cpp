#include "ccic/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace ccic::detector {

using nlohmann::json;

const Envelope& LoopClassifier::envelope(const std::string& state, const VarId& var) const {
  for (std::size_t s = 0; s < state_labels.size(); ++s) {
    if (state_labels[s] != state) continue;
    for (std::size_t v = 0; v < input_vars.size(); ++v)
      if (input_vars[v] == var) return envelopes[s][v];
  }
  throw PreconditionError(loop_id + ": no envelope for (" + state + ", " + var + ")");
}

TrainingSet extract_training_set(const tap::HistoryArchive& archive, const std::vector<VarId>& input_vars) {
  TrainingSet set;
  set.input_vars = input_vars;
  std::vector<std::size_t> cols;
  for (const auto& v : input_vars) cols.push_back(archive.column(v));
  set.x.reserve(archive.rows.size());
  set.labels.reserve(archive.rows.size());
  for (const auto& row : archive.rows) {
    std::vector<double> x;
    x.reserve(cols.size());
    for (auto c : cols) x.push_back(row.values[c]);
    set.x.push_back(std::move(x));
    set.labels.push_back(row.mode);
  }
  return set;
}

std::string fingerprint(const TrainingSet& set) {
  Fnv1a h;
  for (const auto& v : set.input_vars) h.update(v);
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (double v : set.x[i]) h.update(v);
    h.update(set.labels[i]);
  }
  return hex64(h.digest());
}

int hidden_size_for(int n_in) { return std::max(4, 2 * n_in); }

namespace {

double stddev_floor(double mean) { return 1e-6 * (1.0 + std::abs(mean)); }

std::vector<double> normalize(const LoopClassifier& c, const std::vector<double>& raw) {
  std::vector<double> x(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) x[i] = (raw[i] - c.normalization[i].mean) / c.normalization[i].std;
  return x;
}

std::size_t argmax(const std::vector<double>& p) {
  return static_cast<std::size_t>(std::distance(p.begin(), std::max_element(p.begin(), p.end())));
}

}  // namespace

LoopClassifier train(const TrainingSet& set, const LoopId& loop_id, const TrainingOptions& opt) {
  const auto n_in = static_cast<int>(set.input_vars.size());
  if (n_in <= 0 || n_in > opt.max_inputs)
    throw PreconditionError(loop_id + ": classifier needs 1.." + std::to_string(opt.max_inputs) + " input variables");
  for (const auto& x : set.x) {
    if (static_cast<int>(x.size()) != n_in) throw PreconditionError(loop_id + ": ragged training rows");
    for (double v : x)
      if (!std::isfinite(v)) throw PreconditionError(loop_id + ": non-finite value in training data");
  }

  std::map<std::string, std::size_t> counts;
  for (const auto& l : set.labels) ++counts[l];
  std::vector<std::string> starved;
  for (const auto& [label, n] : counts)
    if (n < opt.min_rows_per_state) starved.push_back(label + " (" + std::to_string(n) + " rows)");
  if (counts.size() < 2 || !starved.empty()) {
    std::string msg = loop_id + ": insufficient state coverage";
    if (counts.size() < 2) msg += "; need at least 2 states, found " + std::to_string(counts.size());
    for (const auto& s : starved) msg += "; starved state " + s;
    throw PreconditionError(msg);
  }

  LoopClassifier c;
  c.loop_id = loop_id;
  c.input_vars = set.input_vars;
  c.confidence_threshold = opt.confidence_threshold;
  c.envelope_k = opt.envelope_k;
  c.training_fingerprint = fingerprint(set);
  c.training_rows = set.size();
  for (const auto& [label, n] : counts) c.state_labels.push_back(label);
  std::map<std::string, int> label_index;
  for (std::size_t s = 0; s < c.state_labels.size(); ++s) label_index[c.state_labels[s]] = static_cast<int>(s);

  const auto n = static_cast<double>(set.size());
  c.normalization.resize(set.input_vars.size());
  for (int i = 0; i < n_in; ++i) {
    double mean = 0.0;
    for (const auto& x : set.x) mean += x[i];
    mean /= n;
    double var = 0.0;
    for (const auto& x : set.x) var += (x[i] - mean) * (x[i] - mean);
    const double sd = std::sqrt(var / n);
    c.normalization[i] = {mean, sd > 1e-12 ? sd : 1.0};
  }

  const auto n_states = c.state_labels.size();
  c.envelopes.assign(n_states, std::vector<Envelope>(set.input_vars.size()));
  for (std::size_t s = 0; s < n_states; ++s) {
    for (int i = 0; i < n_in; ++i) {
      double sum = 0.0, sq = 0.0;
      std::size_t k = 0;
      for (std::size_t r = 0; r < set.size(); ++r) {
        if (label_index[set.labels[r]] != static_cast<int>(s)) continue;
        sum += set.x[r][i];
        ++k;
      }
      const double mean = sum / static_cast<double>(k);
      for (std::size_t r = 0; r < set.size(); ++r)
        if (label_index[set.labels[r]] == static_cast<int>(s)) sq += (set.x[r][i] - mean) * (set.x[r][i] - mean);
      const double sd = std::max(std::sqrt(sq / static_cast<double>(k)), stddev_floor(mean));
      c.envelopes[s][i] = {mean - opt.envelope_k * sd, mean + opt.envelope_k * sd, mean, sd};
    }
  }

  std::vector<Sample> samples(set.size());
  for (std::size_t r = 0; r < set.size(); ++r) samples[r] = {normalize(c, set.x[r]), label_index[set.labels[r]]};

  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(opt.validation_fraction * n));
  std::vector<Sample> val, fit;
  for (std::size_t k = 0; k < order.size(); ++k) (k < n_val ? val : fit).push_back(samples[order[k]]);
  if (fit.empty()) throw PreconditionError(loop_id + ": no rows left for fitting after validation split");

  c.mlp = Mlp::random(n_in, hidden_size_for(n_in), static_cast<int>(n_states), opt.seed);
  auto evaluate = [&](const Mlp& m, const std::vector<Sample>& data) {
    if (data.empty()) return 1.0;
    std::size_t ok = 0;
    for (const auto& s : data) ok += argmax(forward(m, s.x)) == static_cast<std::size_t>(s.label);
    return static_cast<double>(ok) / static_cast<double>(data.size());
  };

  std::vector<double> params = c.mlp.flatten();
  std::vector<double> velocity(params.size(), 0.0);
  Mlp best = c.mlp;
  double best_acc = -1.0;
  int stale = 0;
  std::vector<std::size_t> idx(fit.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<Sample> batch;
  for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      batch.clear();
      const auto end = std::min(idx.size(), start + static_cast<std::size_t>(opt.batch_size));
      for (auto k = start; k < end; ++k) batch.push_back(fit[idx[k]]);
      const auto g = gradients(c.mlp, batch).flatten();
      for (std::size_t p = 0; p < params.size(); ++p) {
        velocity[p] = opt.momentum * velocity[p] - opt.learning_rate * g[p];
        params[p] += velocity[p];
      }
      c.mlp.assign(params);
    }
    const double acc = evaluate(c.mlp, val);
    if (acc > best_acc + 1e-12) {
      best_acc = acc;
      best = c.mlp;
      stale = 0;
    } else if (++stale >= opt.patience) {
      break;
    }
    if (best_acc >= 1.0) break;
  }
  c.mlp = best;
  c.held_out_accuracy = best_acc;
  return c;
}

LoopClassifier train(const tap::HistoryArchive& archive, const plant::ControlLoopSpec& loop,
                     const TrainingOptions& options) {
  auto c = train(extract_training_set(archive, loop.input_vars), loop.loop_id, options);
  c.config_hash = archive.metadata.config_hash;
  return c;
}

std::vector<double> gather_inputs(const LoopClassifier& c, const std::map<VarId, double>& values) {
  std::vector<double> x;
  x.reserve(c.input_vars.size());
  for (const auto& v : c.input_vars) {
    auto it = values.find(v);
    if (it == values.end()) throw PreconditionError(c.loop_id + ": missing reading for '" + v + "'");
    x.push_back(it->second);
  }
  return x;
}

Classification classify(const LoopClassifier& c, const std::vector<double>& raw, SimTime sim_time) {
  if (raw.size() != c.input_vars.size()) throw PreconditionError(c.loop_id + ": input dimension mismatch");
  const auto probs = forward(c.mlp, normalize(c, raw));
  const auto s = argmax(probs);
  Classification out;
  out.loop_id = c.loop_id;
  out.sim_time = sim_time;
  out.predicted_state = c.state_labels[s];
  out.confidence = probs[s];
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& env = c.envelopes[s][i];
    if (raw[i] < env.low || raw[i] > env.high)
      out.outliers.push_back({c.input_vars[i], raw[i], env.low, env.high, (raw[i] - env.mean) / env.std});
  }
  out.anomalous = out.confidence < c.confidence_threshold || !out.outliers.empty();
  return out;
}

Classification classify(const LoopClassifier& c, const std::map<VarId, double>& values, SimTime sim_time) {
  return classify(c, gather_inputs(c, values), sim_time);
}

Classification classify(const LoopClassifier& c, const std::vector<tap::Reading>& readings) {
  std::map<VarId, double> values;
  SimTime t = 0.0;
  for (const auto& r : readings) {
    values[r.var_id] = r.value;
    t = r.sim_time;
  }
  return classify(c, values, t);
}

double accuracy(const LoopClassifier& c, const TrainingSet& set) {
  if (set.size() == 0) return 1.0;
  std::size_t ok = 0;
  for (std::size_t r = 0; r < set.size(); ++r) ok += classify(c, set.x[r]).predicted_state == set.labels[r];
  return static_cast<double>(ok) / static_cast<double>(set.size());
}

TrainingSet blend_for_retrain(const TrainingSet& original, const TrainingSet& recent, double fraction,
                              std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw PreconditionError("partial retrain: fraction outside [0,1]");
  if (fraction > 0.0 && recent.size() == 0) throw PreconditionError("partial retrain: empty recent set");
  if (recent.size() != 0 && recent.input_vars != original.input_vars)
    throw PreconditionError("partial retrain: recent data has different input variables");
  const auto n = original.size();
  const auto replace = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  const auto keep = n - replace;

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());

  TrainingSet out;
  out.input_vars = original.input_vars;
  for (auto i : idx) {
    out.x.push_back(original.x[i]);
    out.labels.push_back(original.labels[i]);
  }
  const auto take = std::min(replace, recent.size());
  for (auto i = recent.size() - take; i < recent.size(); ++i) {
    out.x.push_back(recent.x[i]);
    out.labels.push_back(recent.labels[i]);
  }
  return out;
}

LoopClassifier partial_retrain(const LoopClassifier& c, const TrainingSet& original, const TrainingSet& recent,
                               double fraction, const TrainingOptions& options) {
  std::size_t flagged = 0;
  for (const auto& x : recent.x) flagged += classify(c, x).anomalous;
  if (flagged > 0)
    throw PreconditionError(c.loop_id + ": partial retrain rejected, " + std::to_string(flagged) +
                            " anomalous rows in recent data");
  TrainingOptions opt = options;
  opt.confidence_threshold = c.confidence_threshold;
  opt.envelope_k = c.envelope_k;
  auto out = train(blend_for_retrain(original, recent, fraction, options.seed), c.loop_id, opt);
  out.config_hash = c.config_hash;
  return out;
}

LoopClassifier partial_retrain(const LoopClassifier& c, const tap::HistoryArchive& original,
                               const tap::HistoryArchive& recent, double fraction, const TrainingOptions& options) {
  return partial_retrain(c, extract_training_set(original, c.input_vars), extract_training_set(recent, c.input_vars),
                         fraction, options);
}

json to_json(const LoopClassifier& c) {
  json norm = json::array();
  for (const auto& n : c.normalization) norm.push_back({{"mean", n.mean}, {"std", n.std}});
  json env = json::array();
  for (std::size_t s = 0; s < c.envelopes.size(); ++s)
    for (std::size_t v = 0; v < c.envelopes[s].size(); ++v) {
      const auto& e = c.envelopes[s][v];
      env.push_back({{"state", c.state_labels[s]}, {"var", c.input_vars[v]}, {"low", e.low}, {"high", e.high},
                     {"mean", e.mean}, {"std", e.std}});
    }
  return {{"v", 1},
          {"loop_id", c.loop_id},
          {"input_vars", c.input_vars},
          {"normalization", norm},
          {"mlp", to_json(c.mlp)},
          {"state_labels", c.state_labels},
          {"envelopes", env},
          {"confidence_threshold", c.confidence_threshold},
          {"envelope_k", c.envelope_k},
          {"training_fingerprint", c.training_fingerprint},
          {"training_rows", c.training_rows},
          {"held_out_accuracy", c.held_out_accuracy},
          {"config_hash", c.config_hash}};
}

LoopClassifier classifier_from_json(const json& j) {
  try {
    if (j.value("v", 0) != 1) throw ConfigError("model: unsupported schema version (expected \"v\":1)");
    LoopClassifier c;
    c.loop_id = j.at("loop_id").get<std::string>();
    c.input_vars = j.at("input_vars").get<std::vector<std::string>>();
    for (const auto& n : j.at("normalization")) c.normalization.push_back({n.at("mean"), n.at("std")});
    c.mlp = mlp_from_json(j.at("mlp"));
    c.state_labels = j.at("state_labels").get<std::vector<std::string>>();
    c.confidence_threshold = j.at("confidence_threshold").get<double>();
    c.envelope_k = j.value("envelope_k", 4.0);
    c.training_fingerprint = j.at("training_fingerprint").get<std::string>();
    c.training_rows = j.value("training_rows", std::size_t{0});
    c.held_out_accuracy = j.value("held_out_accuracy", 0.0);
    c.config_hash = j.value("config_hash", std::string{});
    if (c.input_vars.empty()) throw ConfigError("model: input_vars must not be empty");
    if (c.state_labels.size() < 2) throw ConfigError("model: at least two state labels required");
    if (c.normalization.size() != c.input_vars.size()) throw ConfigError("model: normalization length mismatch");
    if (c.mlp.n_in != static_cast<int>(c.input_vars.size()) || c.mlp.n_out != static_cast<int>(c.state_labels.size()))
      throw ConfigError("model: layer sizes disagree with input_vars/state_labels");
    if (!(c.confidence_threshold > 0.0 && c.confidence_threshold < 1.0))
      throw ConfigError("model: confidence_threshold must lie in (0,1)");
    c.envelopes.assign(c.state_labels.size(), std::vector<Envelope>(c.input_vars.size()));
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& e : j.at("envelopes")) {
      const auto s = std::find(c.state_labels.begin(), c.state_labels.end(), e.at("state").get<std::string>());
      const auto v = std::find(c.input_vars.begin(), c.input_vars.end(), e.at("var").get<std::string>());
      if (s == c.state_labels.end() || v == c.input_vars.end()) throw ConfigError("model: envelope for unknown state/var");
      const auto si = static_cast<std::size_t>(s - c.state_labels.begin());
      const auto vi = static_cast<std::size_t>(v - c.input_vars.begin());
      Envelope env{e.at("low"), e.at("high"), e.at("mean"), e.at("std")};
      if (!(env.low < env.high)) throw ConfigError("model: envelope low must be < high");
      c.envelopes[si][vi] = env;
      seen.insert({si, vi});
    }
    if (seen.size() != c.state_labels.size() * c.input_vars.size()) throw ConfigError("model: incomplete envelopes");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

json to_json(const Classification& c) {
  json outliers = json::array();
  for (const auto& o : c.outliers)
    outliers.push_back({{"var_id", o.var_id}, {"observed", o.observed}, {"expected_range", {o.low, o.high}},
                        {"deviation_sigmas", o.deviation_sigmas}});
  return {{"loop_id", c.loop_id}, {"sim_time", c.sim_time}, {"predicted_state", c.predicted_state},
          {"confidence", c.confidence}, {"anomalous", c.anomalous}, {"outliers", outliers}};
}

}  // namespace ccic::detector
