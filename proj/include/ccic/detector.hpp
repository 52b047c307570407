#pragma once

// Per-control-loop operating-state classifiers: a small MLP over the loop's
// input variables plus per-state envelopes that turn out-of-range variables
// into outlier reports.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccic/common.hpp"
#include "ccic/mlp.hpp"
#include "ccic/plant.hpp"
#include "ccic/tap.hpp"

namespace ccic::detector {

struct Normalization {
  double mean = 0.0;
  double std = 1.0;
  bool operator==(const Normalization&) const = default;
};

struct Envelope {
  double low = 0.0;
  double high = 0.0;
  double mean = 0.0;
  double std = 1.0;
  bool operator==(const Envelope&) const = default;
};

struct LoopClassifier {
  LoopId loop_id;
  std::vector<VarId> input_vars;
  std::vector<Normalization> normalization;
  Mlp mlp;
  std::vector<std::string> state_labels;
  std::vector<std::vector<Envelope>> envelopes;  // [state][input var]
  double confidence_threshold = 0.60;
  double envelope_k = 4.0;
  std::string training_fingerprint;
  std::size_t training_rows = 0;
  double held_out_accuracy = 0.0;
  std::string config_hash;

  const Envelope& envelope(const std::string& state, const VarId& var) const;
  bool operator==(const LoopClassifier&) const = default;
};

struct OutlierReport {
  VarId var_id;
  double observed = 0.0;
  double low = 0.0;
  double high = 0.0;
  double deviation_sigmas = 0.0;  // signed, relative to the state mean
};

struct Classification {
  LoopId loop_id;
  SimTime sim_time = 0.0;
  std::string predicted_state;
  double confidence = 0.0;
  bool anomalous = false;
  std::vector<OutlierReport> outliers;
};

struct TrainingOptions {
  double envelope_k = 4.0;
  double confidence_threshold = 0.60;
  int max_epochs = 60;
  int patience = 6;
  int batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double validation_fraction = 0.2;
  std::size_t min_rows_per_state = 50;
  std::uint64_t seed = 1;
  int max_inputs = 9;  // loops stay small; the community vector is wider
};

/// Rows of one loop's input variables, labelled with the operating state.
struct TrainingSet {
  std::vector<VarId> input_vars;
  std::vector<std::vector<double>> x;
  std::vector<std::string> labels;
  std::size_t size() const { return x.size(); }
};

TrainingSet extract_training_set(const tap::HistoryArchive& archive, const std::vector<VarId>& input_vars);

/// FNV-1a over every value and label, in row order.
std::string fingerprint(const TrainingSet& set);

/// Hidden width used for a loop with `n_in` inputs.
int hidden_size_for(int n_in);

/// Throws PreconditionError("insufficient state coverage: ...") when fewer
/// than two states or any state below min_rows_per_state, and on non-finite data.
LoopClassifier train(const TrainingSet& set, const LoopId& loop_id, const TrainingOptions& options = {});
LoopClassifier train(const tap::HistoryArchive& archive, const plant::ControlLoopSpec& loop,
                     const TrainingOptions& options = {});

/// Input vector in the classifier's variable order; missing variable is a
/// PreconditionError naming it.
std::vector<double> gather_inputs(const LoopClassifier& c, const std::map<VarId, double>& values);

Classification classify(const LoopClassifier& c, const std::vector<double>& raw_inputs, SimTime sim_time = 0.0);
Classification classify(const LoopClassifier& c, const std::map<VarId, double>& values, SimTime sim_time = 0.0);
Classification classify(const LoopClassifier& c, const std::vector<tap::Reading>& readings);

/// Held-out accuracy of `c` on `set`.
double accuracy(const LoopClassifier& c, const TrainingSet& set);

/// (1 - fraction) of `original` sampled uniformly without replacement
/// (kept in original order), followed by the newest `recent` rows up to
/// round(fraction * |original|).
TrainingSet blend_for_retrain(const TrainingSet& original, const TrainingSet& recent, double fraction,
                              std::uint64_t seed);

/// Retrains on the blend. Rejects recent rows that `c` flags as anomalous.
LoopClassifier partial_retrain(const LoopClassifier& c, const TrainingSet& original, const TrainingSet& recent,
                               double fraction = 0.20, const TrainingOptions& options = {});
LoopClassifier partial_retrain(const LoopClassifier& c, const tap::HistoryArchive& original,
                               const tap::HistoryArchive& recent, double fraction = 0.20,
                               const TrainingOptions& options = {});

nlohmann::json to_json(const LoopClassifier& c);
LoopClassifier classifier_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Classification& c);

}  // namespace ccic::detector
