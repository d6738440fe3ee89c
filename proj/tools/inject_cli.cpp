// inject: retrieval, training, evaluation, significance testing and analysis.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "inject/analysis.hpp"
#include "inject/errors.hpp"
#include "inject/gradcheck.hpp"
#include "inject/io.hpp"
#include "inject/metrics.hpp"
#include "inject/ops.hpp"
#include "inject/retrieval_kb.hpp"
#include "inject/retrieval_prompt.hpp"
#include "inject/training.hpp"

#ifndef INJECT_DATA_DIR
#define INJECT_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace inject;

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string source;
  std::string mode;
  std::string model;
  int inject_layer = 0;
  int m = 0;
  std::string out;
};

struct Options {
  CommonFlags common;
  std::string dataset;
  std::string kb;
  std::size_t k = 0;
  std::string contexts;
  std::string run_a, run_b;
  std::string vocab;
  std::vector<std::string> checkpoints;
  std::string stopwords = std::string(INJECT_DATA_DIR) + "/stopwords_en.txt";
  std::string replay;
  std::string endpoint;
  std::string generation_cache;
  std::string prompt_mode = "np";
  std::size_t embedding_dim = 256;
  int epochs = 0;
  double learning_rate = -1.0;
  int batch_size = 0;
  std::size_t samples = 24;
  double tolerance = 1e-4;
  int seeds_to_check = 1;
  int layer = 0;
  std::string kind = "self";
  std::string level = "type";
  double smoothing = 0.5;
  std::size_t min_count = 5;
  std::vector<std::string> runs;
  std::string split = "test";
};

CLI::Option* add_common(CLI::App* cmd, CommonFlags& f, bool with_source = false) {
  cmd->add_option("--config", f.config, "Experiment config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Seed for all randomness");
  cmd->add_option("--mode", f.mode, "Split mode")->check(CLI::IsMember({"in-target", "cross-target"}));
  cmd->add_option("--model", f.model, "Model kind")
      ->check(CLI::IsMember({"bert", "bert-target", "bert-context", "inject"}));
  cmd->add_option("--inject-layer", f.inject_layer, "1-based inject layer")->check(CLI::PositiveNumber);
  cmd->add_option("--m", f.m, "Contexts per instance")->check(CLI::PositiveNumber);
  auto* out = cmd->add_option("--out", f.out, "Output path");
  if (with_source)
    cmd->add_option("--source", f.source, "Context source")->check(CLI::IsMember({"conceptnet", "causenet", "prompt"}));
  return out;
}

ExperimentConfig load_config(const CLI::App* cmd, const Options& o) {
  ExperimentConfig cfg;
  if (!o.common.config.empty()) {
    try {
      cfg = json::parse(read_file(o.common.config)).get<ExperimentConfig>();
    } catch (const json::exception& e) {
      throw ParseError(o.common.config, 0, e.what());
    }
  }
  auto given = [&](const char* flag) { return cmd->get_option_no_throw(flag) && cmd->count(flag) > 0; };
  if (given("--model")) cfg.train.model = parse_model_kind(o.common.model);
  if (given("--mode")) cfg.split.mode = parse_split_mode(o.common.mode);
  if (given("--inject-layer")) cfg.model.inject_layer = o.common.inject_layer;
  if (given("--m")) cfg.model.num_contexts = o.common.m;
  if (given("--seed")) {
    cfg.train.seeds = {o.common.seed};
    cfg.split.seed = o.common.seed;
  }
  if (given("--source")) cfg.context_source = o.common.source;
  if (given("--epochs")) cfg.train.epochs = o.epochs;
  if (given("--lr")) cfg.train.learning_rate = o.learning_rate;
  if (given("--batch-size")) cfg.train.batch_size = o.batch_size;
  return cfg;
}

Vocabulary vocabulary_for(const Options& o, const Dataset& ds) {
  if (!o.vocab.empty()) return Vocabulary::load(o.vocab);
  std::vector<std::string> texts;
  for (const auto& inst : ds.instances) {
    texts.push_back(inst.text);
    texts.push_back(inst.target);
    for (const auto& c : inst.contexts) texts.push_back(c);
  }
  return Vocabulary::build_from_texts(texts, 1);
}

Dataset dataset_with_contexts(const Options& o, int m) {
  if (o.dataset.empty()) throw CLI::ValidationError("--dataset", "is required");
  Dataset ds = load_dataset(o.dataset);
  if (!o.contexts.empty()) attach_contexts(ds, read_context_cache(o.contexts), m);
  return ds;
}

void save_checkpoint(const fs::path& dir, const StanceClassifier& model, const ExperimentConfig& cfg,
                     const Vocabulary& vocab) {
  fs::create_directories(dir);
  save_named_tensors(dir / "model.ntar", model.named_parameters());
  write_file_atomic(dir / "config.json", json(cfg).dump(2) + "\n");
  vocab.save(dir / "vocab.txt");
}

struct LoadedCheckpoint {
  ExperimentConfig config;
  std::shared_ptr<Vocabulary> vocab;
  std::unique_ptr<StanceClassifier> model;
};

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  LoadedCheckpoint ck;
  ck.config = json::parse(read_file(dir / "config.json")).get<ExperimentConfig>();
  ck.vocab = std::make_shared<Vocabulary>(Vocabulary::load(dir / "vocab.txt"));
  Rng rng(0);
  ck.model = make_model(ck.config.train.model, ck.config.model, rng);
  const auto report = load_named_tensors(dir / "model.ntar", "", ck.model->named_parameters());
  if (!report.missing.empty())
    throw ContractError("checkpoint " + dir.string() + " lacks parameter " + report.missing.front());
  return ck;
}

int cmd_retrieve(const CLI::App* cmd, const Options& o) {
  const ExperimentConfig cfg = load_config(cmd, o);
  if (o.common.source.empty()) throw CLI::ValidationError("--source", "is required");
  if (o.common.out.empty()) throw CLI::ValidationError("--out", "is required");
  const Dataset ds = dataset_with_contexts(o, cfg.model.num_contexts);
  const std::size_t k = o.k > 0 ? o.k : static_cast<std::size_t>(cfg.model.num_contexts);
  const ContextSource source = parse_context_source(o.common.source);
  const StopwordList stopwords = StopwordList::load(o.stopwords);
  std::vector<ContextRecord> records;
  json echo = {{"source", o.common.source}, {"k", k}, {"dataset", o.dataset}, {"kb", o.kb}};

  if (source == ContextSource::concept_graph) {
    if (o.kb.empty()) throw CLI::ValidationError("--kb", "is required for conceptnet");
    ConceptGraphLoadStats stats;
    const ConceptGraph graph = ConceptGraph::load(o.kb, stopwords, &stats);
    std::cerr << "concept graph: kept " << stats.kept << " of " << stats.lines << " edges (" << stats.dropped_no_text
              << " without text, " << stats.dropped_stopword << " with stopword concepts)\n";
    for (const auto& inst : ds.instances)
      records.push_back({inst.id, source, std::nullopt,
                         conceptgraph_retrieve(word_tokens(inst.text), word_tokens(inst.target), graph, k)});
  } else if (source == ContextSource::causal) {
    if (o.kb.empty()) throw CLI::ValidationError("--kb", "is required for causenet");
    HashingEmbeddingBackend backend(o.embedding_dim);
    CausalLoadStats stats;
    const CausalStore store = CausalStore::load(o.kb, backend, &stats);
    std::cerr << "causal store: kept " << stats.kept << " of " << stats.lines << " relations\n";
    echo["embedding"] = backend.name();
    for (const auto& inst : ds.instances)
      records.push_back({inst.id, source, std::nullopt, causal_retrieve(inst.text, store, backend, k).candidates});
  } else {
    std::shared_ptr<GenerationBackend> backend;
    if (!o.replay.empty()) {
      backend = std::make_shared<ReplayBackend>(ReplayBackend::load(o.replay));
    } else {
      std::string endpoint = o.endpoint;
      if (endpoint.empty())
        if (const char* env = std::getenv(kGenerationEndpointEnv)) endpoint = env;
      if (endpoint.empty())
        throw CLI::ValidationError("--endpoint", std::string("or --replay or ") + kGenerationEndpointEnv + " is required");
      backend = std::make_shared<HttpGenerationBackend>(HttpBackendOptions{endpoint});
    }
    if (!o.generation_cache.empty()) backend = std::make_shared<CachingBackend>(backend, o.generation_cache);
    GenerationConfig gen;
    gen.m = static_cast<int>(k);
    gen.mode = parse_prompt_mode(o.prompt_mode);
    echo["prompt_mode"] = to_string(gen.mode);
    echo["backend"] = backend->name();
    std::size_t failures = 0;
    for (const auto& inst : ds.instances) {
      auto outcome = generate_context(inst.text, inst.target, gen, *backend, stopwords);
      failures += outcome.failures.size();
      records.push_back({inst.id, source, std::nullopt, std::move(outcome.candidates)});
    }
    if (failures) std::cerr << failures << " prompts failed\n";
  }
  write_context_cache(o.common.out, records);
  write_file_atomic(o.common.out + ".config.json", echo.dump(2) + "\n");
  std::cout << "wrote " << records.size() << " context records to " << o.common.out << "\n";
  return 0;
}

int cmd_train(const CLI::App* cmd, const Options& o) {
  ExperimentConfig cfg = load_config(cmd, o);
  const Dataset ds = dataset_with_contexts(o, cfg.model.num_contexts);
  const Vocabulary vocab = vocabulary_for(o, ds);
  cfg.model.encoder.vocab_size = static_cast<int>(vocab.size());
  cfg.model.num_labels = static_cast<int>(ds.scheme.size());
  cfg.validate();
  const fs::path out = o.common.out.empty() ? fs::path("runs") : fs::path(o.common.out);
  fs::create_directories(out);
  const SplitIndices splits = make_splits(ds.instances, cfg.split);
  std::cerr << "splits: train " << splits.train.size() << ", dev " << splits.dev.size() << ", test "
            << splits.test.size() << "\n";

  std::vector<double> scores;
  json runs = json::array();
  for (auto seed : cfg.train.seeds) {
    TrainOutcome outcome = train_run(ds, splits, vocab, cfg, seed);
    const fs::path run_path = out / ("run_seed" + std::to_string(seed) + ".json");
    write_run_result(run_path, outcome.result);
    save_checkpoint(out / ("checkpoint_seed" + std::to_string(seed)), *outcome.model, cfg, vocab);
    scores.push_back(outcome.result.test_f1);
    runs.push_back(run_path.filename().string());
    std::cout << "seed " << seed << ": best epoch " << outcome.result.best_epoch << ", dev F1 "
              << outcome.result.best_dev_f1 << ", test F1 " << outcome.result.test_f1 << "\n";
  }
  const SeedAggregate agg = aggregate_seeds(scores);
  json summary = {{"config", cfg},      {"runs", runs},           {"test_f1_mean", agg.mean},
                  {"test_f1_stdev", agg.stdev}, {"seeds", agg.count}, {"single_seed", agg.single_seed}};
  write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
  std::cout << "test F1 " << std::fixed << std::setprecision(4) << agg.mean << " +- " << agg.stdev << " over "
            << agg.count << " seed(s)\n";
  return 0;
}

int cmd_eval(const CLI::App* cmd, const Options& o) {
  if (o.checkpoints.size() != 1) throw CLI::ValidationError("--checkpoint", "exactly one is required");
  LoadedCheckpoint ck = load_checkpoint(o.checkpoints.front());
  ExperimentConfig cfg = ck.config;
  if (cmd->count("--mode")) cfg.split.mode = parse_split_mode(o.common.mode);
  if (cmd->count("--seed")) cfg.split.seed = o.common.seed;
  const Dataset ds = dataset_with_contexts(o, cfg.model.num_contexts);
  std::vector<std::size_t> indices;
  if (o.split == "all") {
    for (std::size_t i = 0; i < ds.instances.size(); ++i) indices.push_back(i);
  } else {
    indices = make_splits(ds.instances, cfg.split).get(parse_split_name(o.split));
  }
  const auto pred = predict(*ck.model, ds.instances, indices, *ck.vocab, cfg.train.batch_size);
  std::vector<int> gold;
  json preds = json::array();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& inst = ds.instances[indices[i]];
    gold.push_back(inst.label);
    preds.push_back({{"id", inst.id}, {"gold", inst.label}, {"predicted", pred[i]}});
  }
  const double f1 = f1_macro(pred, gold, ds.scheme.size());
  std::cout << "F1-macro on " << o.split << " (" << indices.size() << " instances): " << f1 << "\n";
  if (!o.common.out.empty()) {
    json result = {{"config", cfg}, {"split", o.split}, {"f1_macro", f1}, {"test_predictions", preds}};
    write_file_atomic(o.common.out, result.dump(2) + "\n");
  }
  return 0;
}

std::map<std::string, int> predictions_by_id(const fs::path& path) {
  const json j = json::parse(read_file(path));
  std::map<std::string, int> out;
  for (const auto& p : j.at("test_predictions")) out[p.at("id").get<std::string>()] = p.at("predicted").get<int>();
  return out;
}

int cmd_compare(const CLI::App*, const Options& o) {
  const auto a = predictions_by_id(o.run_a);
  const auto b = predictions_by_id(o.run_b);
  std::vector<int> pa, pb;
  int max_label = 0;
  for (const auto& [id, label] : a) {
    auto it = b.find(id);
    if (it == b.end()) throw ContractError("instance '" + id + "' is missing from " + o.run_b);
    pa.push_back(label);
    pb.push_back(it->second);
    max_label = std::max({max_label, label, it->second});
  }
  if (a.size() != b.size()) throw ContractError("runs cover different instances");
  const BhapkarResult r = bhapkar_test(pa, pb, static_cast<std::size_t>(max_label + 1));
  const bool significant = r.p_value < 0.05;
  std::cout << "Bhapkar statistic " << r.statistic << ", df " << r.df << ", p " << r.p_value << "\n"
            << (significant ? "significant at 0.05" : "not significant at 0.05") << "\n";
  if (!o.common.out.empty()) {
    json result = {{"run_a", o.run_a},     {"run_b", o.run_b},         {"n", pa.size()},
                   {"statistic", r.statistic}, {"df", r.df},           {"p_value", r.p_value},
                   {"significant_at_0.05", significant}, {"classes_used", r.classes_used}};
    write_file_atomic(o.common.out, result.dump(2) + "\n");
  }
  return 0;
}

int cmd_analyze(const CLI::App*, const Options& o) {
  if (o.checkpoints.empty()) throw CLI::ValidationError("--checkpoint", "at least one is required");
  if (o.common.out.empty()) throw CLI::ValidationError("--out", "is required");
  std::vector<LoadedCheckpoint> models;
  for (const auto& c : o.checkpoints) models.push_back(load_checkpoint(c));
  const Dataset ds = dataset_with_contexts(o, models.front().config.model.num_contexts);
  const Vocabulary& vocab = *models.front().vocab;

  std::vector<std::vector<std::string>> docs;
  std::vector<std::string> targets, labels;
  for (const auto& inst : ds.instances) {
    docs.push_back(text_tokens(inst.text, vocab));
    targets.push_back(inst.target);
    labels.push_back(ds.scheme.name(inst.label));
  }
  const RelevanceOptions ropt{o.smoothing, o.min_count};
  const RelevanceTable target_rel = token_property_relevance(docs, targets, ropt);
  const RelevanceTable label_rel = token_property_relevance(docs, labels, ropt);

  std::map<std::string, std::vector<AttributionRecord>> by_model;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& ck = models[i];
    const int layer = o.layer > 0 ? o.layer : ck.config.model.encoder.num_layers;
    const AttentionKind kind = (o.kind == "cross" && ck.model->kind() == ModelKind::inject)
                                   ? AttentionKind::cross_attention
                                   : AttentionKind::self_attention;
    const std::string name = to_string(ck.model->kind()) + (models.size() > 1 ? "_" + std::to_string(i) : "");
    for (const auto& inst : ds.instances)
      by_model[name].push_back(attention_norm_attribution(*ck.model, inst, *ck.vocab, layer, kind, name));
  }
  ReportOptions ropts;
  ropts.dataset = fs::path(o.dataset).stem().string();
  ropts.level = o.level == "occurrence" ? CorrelationLevel::token_occurrence : CorrelationLevel::token_type;
  const auto report = write_attribution_report(o.common.out, by_model, target_rel, label_rel, ropts);
  for (const auto& e : report.correlations) {
    std::cout << e.model << ": self*target ";
    if (e.self_target) std::cout << std::fixed << std::setprecision(1) << *e.self_target * 100.0; else std::cout << "n/a";
    std::cout << ", self*label ";
    if (e.self_label) std::cout << std::fixed << std::setprecision(1) << *e.self_label * 100.0; else std::cout << "n/a";
    std::cout << "\n";
  }
  return 0;
}

int cmd_gradcheck(const CLI::App* cmd, const Options& o) {
  ExperimentConfig cfg = load_config(cmd, o);
  if (cfg.model.encoder.vocab_size <= 0) cfg.model.encoder.vocab_size = 24;
  if (cfg.model.num_labels < 2) cfg.model.num_labels = 3;
  cfg.model.validate();
  const std::uint64_t base_seed = cmd->count("--seed") ? o.common.seed : 0;
  bool all_passed = true;
  for (int s = 0; s < o.seeds_to_check; ++s) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
    Rng rng(seed);
    auto model = make_model(cfg.train.model, cfg.model, rng);
    const std::size_t batch = 2;
    const auto seq = static_cast<std::size_t>(std::min(cfg.model.encoder.max_seq_len, 8));
    auto random_batch = [&](std::size_t pad) {
      TokenBatch b;
      b.batch = batch;
      b.seq_len = seq;
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t t = 0; t < seq; ++t) {
          b.ids.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.model.encoder.vocab_size))));
          b.segment_ids.push_back(t > seq / 2 ? 1 : 0);
          b.mask.push_back(t + (r == 1 ? pad : 0) < seq ? 1 : 0);
        }
      return b;
    };
    ModelInput input;
    input.input = random_batch(2);
    if (cfg.train.model == ModelKind::inject)
      for (int k = 0; k < cfg.model.num_contexts; ++k) input.contexts.push_back(random_batch(static_cast<std::size_t>(k)));
    std::vector<int> labels;
    for (std::size_t r = 0; r < batch; ++r)
      labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.model.num_labels))));
    auto loss = [&] {
      Rng dropout(seed + 1000);
      ForwardMode mode{true, &dropout, false};
      return ops::cross_entropy(model->logits(input, mode), labels);
    };
    GradCheckOptions gopt;
    gopt.tolerance = o.tolerance;
    gopt.max_elements_per_param = o.samples;
    gopt.seed = seed;
    const GradCheckReport report = finite_diff_check(loss, model->named_parameters(), gopt);
    std::cout << "seed " << seed << " (" << to_string(cfg.train.model) << ")\n";
    for (const auto& p : report.params)
      std::cout << "  " << std::left << std::setw(64) << p.name << " max rel err " << std::scientific
                << std::setprecision(3) << std::max(p.max_rel_error, p.directional_rel_error)
                << (p.passed ? "" : "  FAIL") << std::defaultfloat << "\n";
    std::cout << "  overall max rel err " << std::scientific << report.max_rel_error << std::defaultfloat
              << (report.passed ? "  PASS" : "  FAIL") << "\n";
    all_passed = all_passed && report.passed;
  }
  return all_passed ? 0 : 2;
}

int cmd_stats(const CLI::App*, const Options& o) {
  json out = json::object();
  if (!o.contexts.empty()) {
    json rows = json::array();
    for (const auto& s : context_length_stats(read_context_cache(o.contexts))) {
      rows.push_back({{"dataset", s.dataset}, {"source", to_string(s.source)}, {"contexts", s.contexts},
                      {"mean_tokens", s.mean_tokens}});
      std::cout << (s.dataset.empty() ? "-" : s.dataset) << "\t" << to_string(s.source) << "\t" << s.contexts
                << " contexts\tmean " << s.mean_tokens << " tokens\n";
    }
    out["context_lengths"] = rows;
  }
  if (!o.runs.empty()) {
    std::vector<double> scores;
    std::vector<std::string> labels;
    for (const auto& r : o.runs) {
      const RunResult run = read_run_result(r);
      scores.push_back(run.test_f1);
      labels.push_back(fs::path(r).stem().string());
    }
    const SeedAggregate agg = aggregate_seeds(scores);
    out["test_f1"] = {{"mean", agg.mean}, {"stdev", agg.stdev}, {"count", agg.count}, {"single_seed", agg.single_seed}};
    std::cout << "test F1 " << agg.mean << " +- " << agg.stdev << " over " << agg.count << " run(s)"
              << (agg.single_seed ? " (single seed)" : "") << "\n";
    if (!o.common.out.empty()) {
      std::vector<double> pct;
      for (double s : scores) pct.push_back(100.0 * s);
      write_file_atomic(fs::path(o.common.out).replace_extension(".svg"), bar_chart_svg("test F1-macro", labels, pct));
    }
  }
  if (o.contexts.empty() && o.runs.empty()) throw CLI::ValidationError("stats", "give --contexts and/or --runs");
  if (!o.common.out.empty()) write_file_atomic(o.common.out, out.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stance detection with injected context: retrieval, training, evaluation and analysis"};
  app.require_subcommand(1);
  Options o;

  auto* retrieve = app.add_subcommand("retrieve", "Build a context cache for a dataset");
  add_common(retrieve, o.common, true);
  retrieve->add_option("--dataset", o.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  retrieve->add_option("--kb", o.kb, "Concept edge TSV or causal relation TSV")->check(CLI::ExistingFile);
  retrieve->add_option("--k", o.k, "Candidates per instance (default: m)");
  retrieve->add_option("--stopwords", o.stopwords, "Stopword list")->check(CLI::ExistingFile);
  retrieve->add_option("--replay", o.replay, "Recorded {prompt, text} JSONL for the prompt source")
      ->check(CLI::ExistingFile);
  retrieve->add_option("--endpoint", o.endpoint, "HTTP generation endpoint");
  retrieve->add_option("--generation-cache", o.generation_cache, "Append-only {prompt, text} cache");
  retrieve->add_option("--prompt-mode", o.prompt_mode, "np or np-targ")->check(CLI::IsMember({"np", "np-targ"}));
  retrieve->add_option("--embedding-dim", o.embedding_dim, "Hashing embedding width");

  auto* train = app.add_subcommand("train", "Train one model per seed");
  add_common(train, o.common, true);
  train->add_option("--dataset", o.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--contexts", o.contexts, "Context cache JSONL")->check(CLI::ExistingFile);
  train->add_option("--vocab", o.vocab, "Vocabulary file (default: built from the data)")->check(CLI::ExistingFile);
  train->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  train->add_option("--lr", o.learning_rate)->check(CLI::NonNegativeNumber);
  train->add_option("--batch-size", o.batch_size)->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint");
  add_common(eval, o.common);
  eval->add_option("--checkpoint", o.checkpoints, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--dataset", o.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--contexts", o.contexts, "Context cache JSONL")->check(CLI::ExistingFile);
  eval->add_option("--split", o.split, "train, dev, test or all")->check(CLI::IsMember({"train", "dev", "test", "all"}));

  auto* compare = app.add_subcommand("compare", "Bhapkar test between two runs' test predictions");
  add_common(compare, o.common);
  compare->add_option("--run-a", o.run_a)->required()->check(CLI::ExistingFile);
  compare->add_option("--run-b", o.run_b)->required()->check(CLI::ExistingFile);

  auto* analyze = app.add_subcommand("analyze", "Attribution and relevance report");
  add_common(analyze, o.common);
  analyze->add_option("--checkpoint", o.checkpoints, "Checkpoint directories")->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--dataset", o.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  analyze->add_option("--contexts", o.contexts, "Context cache JSONL")->check(CLI::ExistingFile);
  analyze->add_option("--layer", o.layer, "1-based layer (default: last)");
  analyze->add_option("--kind", o.kind, "self or cross")->check(CLI::IsMember({"self", "cross"}));
  analyze->add_option("--level", o.level, "type or occurrence")->check(CLI::IsMember({"type", "occurrence"}));
  analyze->add_option("--smoothing", o.smoothing)->check(CLI::NonNegativeNumber);
  analyze->add_option("--min-count", o.min_count);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check on a random batch");
  add_common(gradcheck, o.common);
  gradcheck->add_option("--samples", o.samples, "Elements per parameter (0 = all)");
  gradcheck->add_option("--tolerance", o.tolerance)->check(CLI::PositiveNumber);
  gradcheck->add_option("--seeds", o.seeds_to_check, "Number of consecutive seeds")->check(CLI::PositiveNumber);

  auto* stats = app.add_subcommand("stats", "Context length and seed aggregate statistics");
  add_common(stats, o.common);
  stats->add_option("--contexts", o.contexts, "Context cache JSONL")->check(CLI::ExistingFile);
  stats->add_option("--runs", o.runs, "Run result JSON files")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*retrieve) return cmd_retrieve(retrieve, o);
    if (*train) return cmd_train(train, o);
    if (*eval) return cmd_eval(eval, o);
    if (*compare) return cmd_compare(compare, o);
    if (*analyze) return cmd_analyze(analyze, o);
    if (*gradcheck) return cmd_gradcheck(gradcheck, o);
    if (*stats) return cmd_stats(stats, o);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
