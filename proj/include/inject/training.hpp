#pragma once

// Batching, optimization and the seeded train/evaluate loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "inject/dataset.hpp"
#include "inject/model.hpp"

namespace inject {

struct TrainConfig {
  int epochs = 5;
  int batch_size = 16;
  double learning_rate = 2e-5;
  double warmup_ratio = 0.2;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  ModelKind model = ModelKind::inject;
  /// Also score the training split after each epoch.
  bool eval_train = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

enum class SplitMode { in_target, cross_target };
std::string to_string(SplitMode mode);
SplitMode parse_split_mode(const std::string& name);

struct SplitSpec {
  SplitMode mode = SplitMode::in_target;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  /// Cross-target only; empty means auto_target_partition.
  TargetPartition partition;
};

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

SplitIndices make_splits(const std::vector<StanceInstance>& instances, const SplitSpec& spec);

/// Everything that defines one experiment.
struct ExperimentConfig {
  TrainConfig train;
  InjectConfig model;
  SplitSpec split;
  std::string context_source = "none";

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Exactly m contexts: extra ones dropped, missing ones left empty (encoded
/// as separator-only sequences).
std::vector<std::string> normalize_contexts(const std::vector<std::string>& contexts, int m);

/// Model input for a batch of instances, laid out for `kind`:
///   bert          [CLS] text [SEP]
///   bert_target   [CLS] text [SEP] target [SEP]
///   bert_context  [CLS] text [SEP] target contexts... [SEP]
///   inject        input as bert_target, plus m context batches
ModelInput featurize(ModelKind kind, const std::vector<const StanceInstance*>& batch, const Vocabulary& vocab,
                     std::size_t max_len, int m);

/// Multiplier for step s (0-based) out of `total`: linear warmup over
/// ceil(ratio * total) steps, then linear decay to 0.
double linear_schedule(std::size_t step, std::size_t total, double warmup_ratio);

/// Decoupled weight decay Adam. Biases and LayerNorm parameters are not
/// decayed.
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, const TrainConfig& cfg);

  /// Applies one update with learning rate `lr` from the current gradients.
  void step(double lr);
  std::size_t steps() const noexcept { return t_; }
  static bool decays(const std::string& name);

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<bool> decay_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

/// Argmax labels (lowest index on ties) in evaluation mode.
std::vector<int> predict(const StanceClassifier& model, const std::vector<StanceInstance>& instances,
                         const std::vector<std::size_t>& indices, const Vocabulary& vocab, int batch_size);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_f1 = 0.0;
  double test_f1 = 0.0;
  std::optional<double> train_f1;
};

struct Prediction {
  std::string id;
  int gold = 0;
  int predicted = 0;
};

struct RunResult {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_dev_f1 = 0.0;
  double test_f1 = 0.0;
  std::vector<Prediction> test_predictions;
  nlohmann::json environment;
};

void to_json(nlohmann::json& j, const RunResult& r);
void from_json(const nlohmann::json& j, RunResult& r);

/// Build and library facts that affect numerics; no timestamps or hosts.
nlohmann::json environment_fingerprint();

void write_run_result(const std::filesystem::path& path, const RunResult& result);
RunResult read_run_result(const std::filesystem::path& path);

struct TrainOutcome {
  RunResult result;
  /// Parameters restored to the best epoch.
  std::unique_ptr<StanceClassifier> model;
};

/// Trains one seed: parameters, dropout and shuffling all derive from it.
/// Evaluates dev and test after every epoch; the reported test score and
/// predictions come from the best dev epoch (earliest on ties). A non-finite
/// loss aborts with the step, learning rate and batch ids.
TrainOutcome train_run(const Dataset& data, const SplitIndices& splits, const Vocabulary& vocab,
                       const ExperimentConfig& config, std::uint64_t seed);

}  // namespace inject
