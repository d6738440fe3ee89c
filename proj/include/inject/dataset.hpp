#pragma once

// Stance datasets in JSON Lines form and their train/dev/test splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "inject/retrieval_kb.hpp"

namespace inject {

class LabelScheme {
 public:
  LabelScheme() = default;
  explicit LabelScheme(std::vector<std::string> labels);

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::optional<int> find(const std::string& label) const;
  /// Throws IndexError for an unknown label.
  int index(const std::string& label) const;
  const std::string& name(int index) const;

 private:
  std::vector<std::string> labels_;
};

struct StanceInstance {
  std::string id;
  std::string text;
  std::string target;
  int label = 0;
  std::vector<std::string> contexts;
};

struct Dataset {
  LabelScheme scheme;
  std::vector<StanceInstance> instances;
};

/// One object {id, text, target, label[, contexts]} per line, optionally
/// preceded by {"_schema": {"labels": [...]}}. Without the header the scheme
/// is the sorted distinct labels.
Dataset parse_dataset(std::istream& in, const std::string& source_name);
Dataset load_dataset(const std::filesystem::path& path);
/// Writes the schema header followed by one line per instance.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

struct ContextJoinReport {
  std::size_t joined = 0;
  std::size_t missing = 0;
};

/// Replaces each instance's contexts with the texts of its cache record (best
/// score first, at most m). Instances without a record get no contexts.
ContextJoinReport attach_contexts(Dataset& dataset, const std::vector<ContextRecord>& records, int m);

enum class SplitName { train, dev, test };
std::string to_string(SplitName split);
SplitName parse_split_name(const std::string& name);

struct SplitRatios {
  double train = 0.70;
  double dev = 0.15;
  double test = 0.15;
  void validate() const;
};

/// Indices into the instance list, each in ascending order.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> test;

  const std::vector<std::size_t>& get(SplitName split) const;
};

/// Integer counts summing to n: floors of n * ratio, remaining units to the
/// largest fractional parts (ties dev, test, train).
std::array<std::size_t, 3> allocate_counts(std::size_t n, const SplitRatios& ratios);

/// Stratifies by (target, label); each stratum is shuffled with the seed and
/// cut per allocate_counts. Strata with fewer than 3 instances go to train
/// with a warning.
SplitIndices in_target_split(const std::vector<StanceInstance>& instances, const SplitRatios& ratios,
                             std::uint64_t seed);

using TargetPartition = std::map<std::string, SplitName>;

/// Every instance follows its target's split; a target missing from the
/// partition raises ContractError naming it.
SplitIndices cross_target_split(const std::vector<StanceInstance>& instances, const TargetPartition& partition);

/// Targets by instance count descending (name ascending on ties), each given
/// to the split whose fill relative to its desired size is lowest (ties train,
/// dev, test).
TargetPartition auto_target_partition(const std::vector<StanceInstance>& instances, const SplitRatios& ratios);

}  // namespace inject
