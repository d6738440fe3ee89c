#include "inject/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "inject/errors.hpp"
#include "inject/io.hpp"
#include "inject/log.hpp"
#include "inject/rng.hpp"

namespace inject {

LabelScheme::LabelScheme(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ContractError("label scheme is empty");
  std::set<std::string> seen;
  for (const auto& l : labels_)
    if (!seen.insert(l).second) throw ContractError("label scheme repeats '" + l + "'");
}

std::optional<int> LabelScheme::find(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<int>(it - labels_.begin());
}

int LabelScheme::index(const std::string& label) const {
  auto found = find(label);
  if (!found) throw IndexError("label '" + label + "' not in scheme");
  return *found;
}

const std::string& LabelScheme::name(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= labels_.size())
    throw IndexError("label index " + std::to_string(index) + " outside scheme of " + std::to_string(labels_.size()));
  return labels_[static_cast<std::size_t>(index)];
}

namespace {

std::string required_string(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) throw ContractError(std::string("missing field '") + field + "'");
  if (!j.at(field).is_string()) throw ContractError(std::string("field '") + field + "' must be a string");
  return j.at(field).get<std::string>();
}

}  // namespace

Dataset parse_dataset(std::istream& in, const std::string& source_name) {
  struct Raw {
    StanceInstance instance;
    std::string label;
    std::size_t line;
  };
  std::vector<Raw> rows;
  std::optional<std::vector<std::string>> declared;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_text(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw ContractError("expected a JSON object");
      if (j.contains("_schema")) {
        if (declared || !rows.empty()) throw ContractError("schema header must be the first record");
        declared = j.at("_schema").at("labels").get<std::vector<std::string>>();
        continue;
      }
      Raw raw;
      raw.line = line_no;
      raw.instance.id = required_string(j, "id");
      raw.instance.text = required_string(j, "text");
      raw.instance.target = required_string(j, "target");
      raw.label = required_string(j, "label");
      if (j.contains("contexts")) raw.instance.contexts = j.at("contexts").get<std::vector<std::string>>();
      if (!ids.insert(raw.instance.id).second) throw ContractError("duplicate id '" + raw.instance.id + "'");
      rows.push_back(std::move(raw));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source_name, line_no, e.what());
    } catch (const ContractError& e) {
      throw ParseError(source_name, line_no, e.what());
    }
  }

  Dataset ds;
  if (declared) {
    ds.scheme = LabelScheme(*declared);
  } else {
    std::set<std::string> distinct;
    for (const auto& r : rows) distinct.insert(r.label);
    if (distinct.empty()) throw ParseError(source_name, line_no, "dataset has no instances");
    ds.scheme = LabelScheme(std::vector<std::string>(distinct.begin(), distinct.end()));
  }
  for (auto& r : rows) {
    auto idx = ds.scheme.find(r.label);
    if (!idx) throw ParseError(source_name, r.line, "unknown label '" + r.label + "'");
    r.instance.label = *idx;
    ds.instances.push_back(std::move(r.instance));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return parse_dataset(in, path.string());
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ostringstream out;
  out << nlohmann::json{{"_schema", {{"labels", dataset.scheme.labels()}}}}.dump() << '\n';
  for (const auto& inst : dataset.instances) {
    nlohmann::json j = {{"id", inst.id},
                        {"text", inst.text},
                        {"target", inst.target},
                        {"label", dataset.scheme.name(inst.label)}};
    if (!inst.contexts.empty()) j["contexts"] = inst.contexts;
    out << j.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

ContextJoinReport attach_contexts(Dataset& dataset, const std::vector<ContextRecord>& records, int m) {
  if (m < 1) throw ContractError("attach_contexts: m must be at least 1");
  std::map<std::string, const ContextRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  ContextJoinReport report;
  for (auto& inst : dataset.instances) {
    inst.contexts.clear();
    auto it = by_id.find(inst.id);
    if (it == by_id.end()) {
      ++report.missing;
      continue;
    }
    auto candidates = it->second->candidates;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const ContextCandidate& a, const ContextCandidate& b) { return a.score > b.score; });
    for (const auto& c : candidates) {
      if (inst.contexts.size() == static_cast<std::size_t>(m)) break;
      inst.contexts.push_back(c.text);
    }
    ++report.joined;
  }
  if (report.missing > 0)
    warn(std::to_string(report.missing) + " instances have no context record and will use separator-only contexts");
  return report;
}

std::string to_string(SplitName split) {
  switch (split) {
    case SplitName::train: return "train";
    case SplitName::dev: return "dev";
    case SplitName::test: return "test";
  }
  return "unknown";
}

SplitName parse_split_name(const std::string& name) {
  if (name == "train") return SplitName::train;
  if (name == "dev") return SplitName::dev;
  if (name == "test") return SplitName::test;
  throw ContractError("unknown split '" + name + "'");
}

void SplitRatios::validate() const {
  for (double r : {train, dev, test})
    if (!(r >= 0.0) || !std::isfinite(r)) throw ContractError("split ratios must be finite and nonnegative");
  if (std::abs(train + dev + test - 1.0) > 1e-9) throw ContractError("split ratios must sum to 1");
}

const std::vector<std::size_t>& SplitIndices::get(SplitName split) const {
  switch (split) {
    case SplitName::train: return train;
    case SplitName::dev: return dev;
    case SplitName::test: return test;
  }
  throw ContractError("unknown split");
}

std::array<std::size_t, 3> allocate_counts(std::size_t n, const SplitRatios& ratios) {
  ratios.validate();
  const std::array<double, 3> quota{static_cast<double>(n) * ratios.train, static_cast<double>(n) * ratios.dev,
                                    static_cast<double>(n) * ratios.test};
  std::array<std::size_t, 3> counts{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(quota[i] + 1e-9));
    assigned += counts[i];
  }
  // Remaining units by largest fractional part; ties go dev, test, train.
  std::array<std::size_t, 3> order{1, 2, 0};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quota[a] - static_cast<double>(counts[a]) > quota[b] - static_cast<double>(counts[b]) + 1e-12;
  });
  for (std::size_t i = 0; assigned < n; i = (i + 1) % 3, ++assigned) ++counts[order[i]];
  return counts;
}

SplitIndices in_target_split(const std::vector<StanceInstance>& instances, const SplitRatios& ratios,
                             std::uint64_t seed) {
  ratios.validate();
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < instances.size(); ++i) strata[{instances[i].target, instances[i].label}].push_back(i);
  Rng rng(seed);
  SplitIndices out;
  for (auto& [key, members] : strata) {
    if (members.size() < 3) {
      warn("stratum (target '" + key.first + "', label " + std::to_string(key.second) + ") has " +
           std::to_string(members.size()) + " instances; placing it in train");
      out.train.insert(out.train.end(), members.begin(), members.end());
      continue;
    }
    rng.shuffle(members);
    const auto counts = allocate_counts(members.size(), ratios);
    auto it = members.begin();
    out.train.insert(out.train.end(), it, it + static_cast<std::ptrdiff_t>(counts[0]));
    it += static_cast<std::ptrdiff_t>(counts[0]);
    out.dev.insert(out.dev.end(), it, it + static_cast<std::ptrdiff_t>(counts[1]));
    it += static_cast<std::ptrdiff_t>(counts[1]);
    out.test.insert(out.test.end(), it, members.end());
  }
  for (auto* v : {&out.train, &out.dev, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

SplitIndices cross_target_split(const std::vector<StanceInstance>& instances, const TargetPartition& partition) {
  SplitIndices out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto it = partition.find(instances[i].target);
    if (it == partition.end())
      throw ContractError("target '" + instances[i].target + "' is missing from the target partition");
    switch (it->second) {
      case SplitName::train: out.train.push_back(i); break;
      case SplitName::dev: out.dev.push_back(i); break;
      case SplitName::test: out.test.push_back(i); break;
    }
  }
  return out;
}

TargetPartition auto_target_partition(const std::vector<StanceInstance>& instances, const SplitRatios& ratios) {
  ratios.validate();
  std::map<std::string, std::size_t> counts;
  for (const auto& inst : instances) ++counts[inst.target];
  std::vector<std::pair<std::string, std::size_t>> targets(counts.begin(), counts.end());
  std::stable_sort(targets.begin(), targets.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  const std::array<double, 3> want{ratios.train, ratios.dev, ratios.test};
  const std::array<SplitName, 3> names{SplitName::train, SplitName::dev, SplitName::test};
  std::array<double, 3> filled{0.0, 0.0, 0.0};
  TargetPartition partition;
  for (const auto& [target, count] : targets) {
    std::size_t best = 3;
    double best_fill = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
      if (want[s] <= 0.0) continue;
      const double fill = filled[s] / want[s];
      if (best == 3 || fill < best_fill) {
        best = s;
        best_fill = fill;
      }
    }
    partition[target] = names[best];
    filled[best] += static_cast<double>(count);
  }
  return partition;
}

}  // namespace inject
