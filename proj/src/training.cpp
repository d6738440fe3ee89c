#include "inject/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "inject/errors.hpp"
#include "inject/io.hpp"
#include "inject/kernels.hpp"
#include "inject/metrics.hpp"
#include "inject/ops.hpp"

namespace inject {

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be positive");
  if (batch_size < 1) throw ContractError("batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw ContractError("learning_rate must be nonnegative");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw ContractError("warmup_ratio must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be nonnegative");
  if (seeds.empty()) throw ContractError("at least one seed is required");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"warmup_ratio", c.warmup_ratio},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"seeds", c.seeds},
       {"model", to_string(c.model)},
       {"eval_train", c.eval_train}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.warmup_ratio = j.value("warmup_ratio", d.warmup_ratio);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seeds = j.value("seeds", d.seeds);
  c.model = parse_model_kind(j.value("model", to_string(d.model)));
  c.eval_train = j.value("eval_train", d.eval_train);
}

std::string to_string(SplitMode mode) { return mode == SplitMode::in_target ? "in-target" : "cross-target"; }

SplitMode parse_split_mode(const std::string& name) {
  if (name == "in-target" || name == "in_target") return SplitMode::in_target;
  if (name == "cross-target" || name == "cross_target") return SplitMode::cross_target;
  throw ContractError("unknown split mode '" + name + "'");
}

void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = {{"mode", to_string(s.mode)},
       {"ratios", {s.ratios.train, s.ratios.dev, s.ratios.test}},
       {"seed", s.seed}};
  nlohmann::json partition = nlohmann::json::object();
  for (const auto& [target, split] : s.partition) partition[target] = to_string(split);
  j["partition"] = partition;
}

void from_json(const nlohmann::json& j, SplitSpec& s) {
  SplitSpec d;
  s.mode = parse_split_mode(j.value("mode", to_string(d.mode)));
  if (j.contains("ratios")) {
    const auto r = j.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw ContractError("split ratios need three values");
    s.ratios = {r[0], r[1], r[2]};
  }
  s.seed = j.value("seed", d.seed);
  s.partition.clear();
  if (j.contains("partition"))
    for (const auto& [target, split] : j.at("partition").items())
      s.partition[target] = parse_split_name(split.get<std::string>());
}

SplitIndices make_splits(const std::vector<StanceInstance>& instances, const SplitSpec& spec) {
  if (spec.mode == SplitMode::in_target) return in_target_split(instances, spec.ratios, spec.seed);
  const TargetPartition partition =
      spec.partition.empty() ? auto_target_partition(instances, spec.ratios) : spec.partition;
  return cross_target_split(instances, partition);
}

void ExperimentConfig::validate() const {
  train.validate();
  model.validate();
  split.ratios.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"train", c.train}, {"model", c.model}, {"split", c.split}, {"context_source", c.context_source}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  c.train = j.value("train", d.train);
  c.model = j.value("model", d.model);
  c.split = j.value("split", d.split);
  c.context_source = j.value("context_source", d.context_source);
}

std::vector<std::string> normalize_contexts(const std::vector<std::string>& contexts, int m) {
  if (m < 1) throw ContractError("normalize_contexts: m must be at least 1");
  std::vector<std::string> out(contexts.begin(),
                               contexts.begin() + std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(contexts.size()), m));
  out.resize(static_cast<std::size_t>(m));
  return out;
}

namespace {

TokenSequence encode_single(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
  if (normalize_text(text).empty()) return separator_only(vocab, max_len);
  return encode_pair(text, std::nullopt, vocab, max_len);
}

}  // namespace

ModelInput featurize(ModelKind kind, const std::vector<const StanceInstance*>& batch, const Vocabulary& vocab,
                     std::size_t max_len, int m) {
  if (batch.empty()) throw ContractError("featurize: empty batch");
  ModelInput input;
  std::vector<TokenSequence> seqs;
  for (const auto* inst : batch) {
    switch (kind) {
      case ModelKind::bert: seqs.push_back(encode_single(inst->text, vocab, max_len)); break;
      case ModelKind::bert_target:
      case ModelKind::inject: seqs.push_back(encode_pair(inst->text, inst->target, vocab, max_len)); break;
      case ModelKind::bert_context: {
        std::string second = inst->target;
        for (const auto& c : normalize_contexts(inst->contexts, m))
          if (!normalize_text(c).empty()) second += " " + c;
        seqs.push_back(encode_pair(inst->text, second, vocab, max_len));
        break;
      }
    }
  }
  input.input = TokenBatch::stack(seqs);
  if (kind == ModelKind::inject) {
    std::vector<std::vector<TokenSequence>> per_context(static_cast<std::size_t>(m));
    for (const auto* inst : batch) {
      const auto contexts = normalize_contexts(inst->contexts, m);
      for (std::size_t k = 0; k < contexts.size(); ++k) per_context[k].push_back(encode_single(contexts[k], vocab, max_len));
    }
    for (const auto& seqs_k : per_context) input.contexts.push_back(TokenBatch::stack(seqs_k));
  }
  return input;
}

double linear_schedule(std::size_t step, std::size_t total, double warmup_ratio) {
  if (total == 0) throw ContractError("linear_schedule: no steps");
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return 0.0;
  return std::max(0.0, static_cast<double>(total - std::min(step, total)) / static_cast<double>(total - warmup));
}

bool AdamW::decays(const std::string& name) {
  const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
  return !is_bias && name.find("LayerNorm") == std::string::npos;
}

AdamW::AdamW(std::vector<NamedTensor> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      weight_decay_(cfg.weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
    decay_.push_back(decays(p.name));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto w = p.mutable_values();
    const auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = decay_[i] ? lr * weight_decay_ : 0.0;
    for (std::size_t e = 0; e < w.size(); ++e) {
      m[e] = beta1_ * m[e] + (1.0 - beta1_) * g[e];
      v[e] = beta2_ * v[e] + (1.0 - beta2_) * g[e] * g[e];
      const double mhat = m[e] / c1;
      const double vhat = v[e] / c2;
      w[e] -= decay * w[e];
      w[e] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::vector<int> predict(const StanceClassifier& model, const std::vector<StanceInstance>& instances,
                         const std::vector<std::size_t>& indices, const Vocabulary& vocab, int batch_size) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const auto max_len = static_cast<std::size_t>(cfg.encoder.max_seq_len);
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<const StanceInstance*> batch;
    for (std::size_t i = start; i < std::min(indices.size(), start + static_cast<std::size_t>(batch_size)); ++i)
      batch.push_back(&instances[indices[i]]);
    ForwardMode mode;
    const Tensor logits = model.logits(featurize(model.kind(), batch, vocab, max_len, cfg.num_contexts), mode);
    const auto v = logits.values();
    const std::size_t c = logits.dim(-1);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const auto row = v.subspan(r * c, c);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const RunResult& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    nlohmann::json ej = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_f1", e.dev_f1}, {"test_f1", e.test_f1}};
    if (e.train_f1) ej["train_f1"] = *e.train_f1;
    epochs.push_back(std::move(ej));
  }
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : r.test_predictions) preds.push_back({{"id", p.id}, {"gold", p.gold}, {"predicted", p.predicted}});
  j = {{"config", r.config},
       {"seed", r.seed},
       {"epochs", epochs},
       {"best_epoch", r.best_epoch},
       {"best_dev_f1", r.best_dev_f1},
       {"test_f1", r.test_f1},
       {"test_predictions", preds},
       {"environment", r.environment}};
}

void from_json(const nlohmann::json& j, RunResult& r) {
  r.config = j.at("config");
  r.seed = j.at("seed").get<std::uint64_t>();
  r.epochs.clear();
  for (const auto& ej : j.at("epochs")) {
    EpochMetrics e;
    e.epoch = ej.at("epoch").get<int>();
    e.train_loss = ej.at("train_loss").get<double>();
    e.dev_f1 = ej.at("dev_f1").get<double>();
    e.test_f1 = ej.at("test_f1").get<double>();
    if (ej.contains("train_f1")) e.train_f1 = ej.at("train_f1").get<double>();
    r.epochs.push_back(e);
  }
  r.best_epoch = j.at("best_epoch").get<int>();
  r.best_dev_f1 = j.at("best_dev_f1").get<double>();
  r.test_f1 = j.at("test_f1").get<double>();
  r.test_predictions.clear();
  for (const auto& pj : j.at("test_predictions"))
    r.test_predictions.push_back({pj.at("id").get<std::string>(), pj.at("gold").get<int>(), pj.at("predicted").get<int>()});
  r.environment = j.value("environment", nlohmann::json::object());
}

nlohmann::json environment_fingerprint() {
  return {{"library", "inject"},
          {"library_version", "0.1.0"},
          {"compiler", __VERSION__},
          {"cplusplus", static_cast<long>(__cplusplus)},
          {"precision", "float64"},
          {"openmp", kernels::openmp_enabled()}};
}

void write_run_result(const std::filesystem::path& path, const RunResult& result) {
  write_file_atomic(path, nlohmann::json(result).dump(2) + "\n");
}

RunResult read_run_result(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path)).get<RunResult>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

namespace {

std::vector<std::vector<double>> snapshot(const std::vector<NamedTensor>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(const std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(values[i].begin(), values[i].end(), t.mutable_values().begin());
  }
}

std::vector<int> gold_labels(const Dataset& data, const std::vector<std::size_t>& indices) {
  std::vector<int> out;
  for (auto i : indices) out.push_back(data.instances[i].label);
  return out;
}

}  // namespace

TrainOutcome train_run(const Dataset& data, const SplitIndices& splits, const Vocabulary& vocab,
                       const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const TrainConfig& tc = config.train;
  if (splits.train.empty() || splits.dev.empty() || splits.test.empty())
    throw ContractError("train_run: train, dev and test splits must all be non-empty");
  if (static_cast<std::size_t>(config.model.encoder.vocab_size) != vocab.size())
    throw ContractError("train_run: encoder vocab_size " + std::to_string(config.model.encoder.vocab_size) +
                        " does not match vocabulary of " + std::to_string(vocab.size()));
  if (static_cast<std::size_t>(config.model.num_labels) != data.scheme.size())
    throw ContractError("train_run: num_labels " + std::to_string(config.model.num_labels) + " but the scheme has " +
                        std::to_string(data.scheme.size()) + " labels");

  const Rng root(seed);
  Rng init_rng = root.fork(0);
  Rng dropout_rng = root.fork(1);
  Rng order_rng = root.fork(2);

  TrainOutcome outcome;
  outcome.model = make_model(tc.model, config.model, init_rng);
  const auto params = outcome.model->named_parameters();
  AdamW optimizer(params, tc);

  const auto max_len = static_cast<std::size_t>(config.model.encoder.max_seq_len);
  const int m = config.model.num_contexts;
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  const std::size_t steps_per_epoch = (splits.train.size() + bs - 1) / bs;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(tc.epochs);
  const std::size_t num_labels = data.scheme.size();
  const auto dev_gold = gold_labels(data, splits.dev);
  const auto test_gold = gold_labels(data, splits.test);
  const auto train_gold = gold_labels(data, splits.train);

  RunResult& result = outcome.result;
  result.config = config;
  result.seed = seed;
  result.environment = environment_fingerprint();

  std::vector<std::vector<double>> best_params = snapshot(params);
  std::vector<int> best_test_pred;
  double best_dev = -1.0;
  std::size_t step = 0;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order = splits.train;
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++step) {
      std::vector<const StanceInstance*> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
        batch.push_back(&data.instances[order[i]]);
        labels.push_back(data.instances[order[i]].label);
      }
      const double lr = tc.learning_rate * linear_schedule(step, total_steps, tc.warmup_ratio);
      for (const auto& p : params) {
        Tensor t = p.tensor;
        t.zero_grad();
      }
      double loss_value = 0.0;
      try {
        ForwardMode mode{true, &dropout_rng, false};
        const Tensor loss = ops::cross_entropy(outcome.model->logits(featurize(tc.model, batch, vocab, max_len, m), mode), labels);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) throw NonFiniteError("loss is " + std::to_string(loss_value));
        loss.backward();
      } catch (const NonFiniteError& e) {
        std::ostringstream msg;
        msg << "training aborted at epoch " << epoch << ", step " << step << " (lr " << lr << "), batch ids [";
        for (std::size_t i = 0; i < batch.size(); ++i) msg << (i ? ", " : "") << batch[i]->id;
        msg << "]: " << e.what();
        throw NonFiniteError(msg.str());
      }
      optimizer.step(lr);
      loss_sum += loss_value * static_cast<double>(batch.size());
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = loss_sum / static_cast<double>(order.size());
    const auto dev_pred = predict(*outcome.model, data.instances, splits.dev, vocab, tc.batch_size);
    const auto test_pred = predict(*outcome.model, data.instances, splits.test, vocab, tc.batch_size);
    metrics.dev_f1 = f1_macro(dev_pred, dev_gold, num_labels);
    metrics.test_f1 = f1_macro(test_pred, test_gold, num_labels);
    if (tc.eval_train)
      metrics.train_f1 =
          f1_macro(predict(*outcome.model, data.instances, splits.train, vocab, tc.batch_size), train_gold, num_labels);
    result.epochs.push_back(metrics);
    if (metrics.dev_f1 > best_dev) {
      best_dev = metrics.dev_f1;
      result.best_epoch = epoch;
      result.best_dev_f1 = metrics.dev_f1;
      result.test_f1 = metrics.test_f1;
      best_test_pred = test_pred;
      best_params = snapshot(params);
    }
  }

  restore(params, best_params);
  for (std::size_t i = 0; i < splits.test.size(); ++i)
    result.test_predictions.push_back({data.instances[splits.test[i]].id, test_gold[i], best_test_pred[i]});
  return outcome;
}

}  // namespace inject
