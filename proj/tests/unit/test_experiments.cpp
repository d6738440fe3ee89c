#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "inject/errors.hpp"
#include "inject/io.hpp"
#include "inject/metrics.hpp"
#include "inject/training.hpp"
#include "test_support.hpp"

using namespace inject;
using namespace inject::testing;

namespace {

std::vector<StanceInstance> instances_of(const std::vector<std::tuple<std::string, int, int>>& spec) {
  // (target, label, count)
  std::vector<StanceInstance> out;
  for (const auto& [target, label, count] : spec)
    for (int i = 0; i < count; ++i)
      out.push_back({target + "-" + std::to_string(label) + "-" + std::to_string(i), "text", target, label, {}});
  return out;
}

bool is_partition(const SplitIndices& s, std::size_t n) {
  std::vector<std::size_t> all;
  for (const auto* part : {&s.train, &s.dev, &s.test}) {
    if (!std::is_sorted(part->begin(), part->end())) return false;
    all.insert(all.end(), part->begin(), part->end());
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(n);
  std::iota(expected.begin(), expected.end(), 0);
  return all == expected;
}

std::set<std::string> targets_in(const std::vector<StanceInstance>& xs, const std::vector<std::size_t>& idx) {
  std::set<std::string> out;
  for (auto i : idx) out.insert(xs[i].target);
  return out;
}

// Same greedy rule, written as an explicit argmin over (fill, split order).
TargetPartition reference_greedy(const std::vector<StanceInstance>& xs, const SplitRatios& r) {
  std::map<std::string, std::size_t> counts;
  for (const auto& x : xs) ++counts[x.target];
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [t, c] : counts) order.emplace_back(c, t);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  const double want[3] = {r.train, r.dev, r.test};
  const SplitName names[3] = {SplitName::train, SplitName::dev, SplitName::test};
  double filled[3] = {0, 0, 0};
  TargetPartition out;
  for (const auto& [count, target] : order) {
    std::vector<std::pair<double, int>> options;
    for (int s = 0; s < 3; ++s)
      if (want[s] > 0) options.emplace_back(filled[s] / want[s], s);
    const int s = std::min_element(options.begin(), options.end())->second;
    out[target] = names[s];
    filled[s] += static_cast<double>(count);
  }
  return out;
}

ExperimentConfig tiny_experiment(const Vocabulary& vocab, int labels, ModelKind kind) {
  ExperimentConfig cfg;
  cfg.model.encoder.num_layers = 1;
  cfg.model.encoder.num_heads = 2;
  cfg.model.encoder.hidden_size = 8;
  cfg.model.encoder.ff_size = 16;
  cfg.model.encoder.max_seq_len = 10;
  cfg.model.encoder.vocab_size = static_cast<int>(vocab.size());
  cfg.model.num_contexts = 2;
  cfg.model.num_labels = labels;
  cfg.train.model = kind;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 1e-3;
  cfg.train.seeds = {0};
  return cfg;
}

std::vector<std::vector<double>> parameter_values(const StanceClassifier& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.named_parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

}  // namespace

TEST_CASE("dataset loading") {
  const Dataset two = load_dataset(INJECT_FIXTURE_DIR "/two_instances.jsonl");
  CHECK(two.instances.size() == 2);
  CHECK(two.scheme.labels() == std::vector<std::string>{"con", "pro"});
  CHECK(two.instances[0].label == 1);
  CHECK(two.instances[1].label == 0);

  const Dataset ex = load_dataset(INJECT_FIXTURE_DIR "/school_spirit.jsonl");
  REQUIRE(ex.instances.size() == 1);
  CHECK(ex.instances[0].target == "School Uniforms");
  CHECK(ex.scheme.name(ex.instances[0].label) == "Pro");
  CHECK(ex.instances[0].contexts.size() == 2);
  TempDir dir("dataset");
  save_dataset(dir / "copy.jsonl", ex);
  const Dataset back = load_dataset(dir / "copy.jsonl");
  CHECK(back.scheme.labels() == ex.scheme.labels());
  CHECK(back.instances[0].text == ex.instances[0].text);
  CHECK(back.instances[0].contexts == ex.instances[0].contexts);
  CHECK(back.instances[0].label == ex.instances[0].label);

  auto line_of = [](const std::string& body) -> std::size_t {
    std::istringstream in(body);
    try {
      parse_dataset(in, "inline");
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("{\"id\":\"1\",\"text\":\"t\",\"target\":\"x\",\"label\":\"a\"}\n"
                "{\"id\":\"1\",\"text\":\"t\",\"target\":\"x\",\"label\":\"a\"}\n") == 2);
  CHECK(line_of("{\"id\":\"1\",\"text\":\"t\",\"label\":\"a\"}\n") == 1);
  CHECK(line_of("{\"_schema\":{\"labels\":[\"a\"]}}\n\n{\"id\":\"1\",\"text\":\"t\",\"target\":\"x\",\"label\":\"b\"}\n") ==
        3);
  CHECK(line_of("not json\n") == 1);
  CHECK_THROWS_AS(load_dataset("/nonexistent/data.jsonl"), IoError);
}

TEST_CASE("joining cached contexts") {
  Dataset ds = load_dataset(INJECT_FIXTURE_DIR "/two_instances.jsonl");
  const std::vector<ContextRecord> cache{
      {"a1", ContextSource::causal, std::nullopt, {{"low", 0.1, ContextSource::causal, ""},
                                                   {"high", 0.9, ContextSource::causal, ""},
                                                   {"mid", 0.5, ContextSource::causal, ""}}}};
  WarningCapture warnings;
  const ContextJoinReport report = attach_contexts(ds, cache, 2);
  CHECK(warnings.messages().size() == 1);
  CHECK(report.joined == 1);
  CHECK(report.missing == 1);
  CHECK(ds.instances[0].contexts == std::vector<std::string>{"high", "mid"});
  CHECK(ds.instances[1].contexts.empty());
  CHECK(normalize_contexts({"a"}, 3) == std::vector<std::string>{"a", "", ""});
  CHECK(normalize_contexts({"a", "b", "c"}, 2) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("split allocation examples") {
  CHECK(allocate_counts(100, {}) == std::array<std::size_t, 3>{70, 15, 15});
  CHECK(allocate_counts(10, {}) == std::array<std::size_t, 3>{7, 2, 1});
  CHECK(allocate_counts(3, {}) == std::array<std::size_t, 3>{2, 1, 0});
  for (std::size_t n = 0; n < 200; ++n) {
    const auto c = allocate_counts(n, {});
    CHECK(c[0] + c[1] + c[2] == n);
    CHECK(std::abs(static_cast<double>(c[0]) - 0.70 * n) < 1.0 + 1e-9);
    CHECK(std::abs(static_cast<double>(c[1]) - 0.15 * n) < 1.0 + 1e-9);
    CHECK(std::abs(static_cast<double>(c[2]) - 0.15 * n) < 1.0 + 1e-9);
  }
  SplitRatios bad{0.5, 0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("in-target splits") {
  const auto xs = instances_of({{"t", 0, 100}});
  const SplitIndices s = in_target_split(xs, {}, 1);
  CHECK(s.train.size() == 70);
  CHECK(s.dev.size() == 15);
  CHECK(s.test.size() == 15);
  CHECK(is_partition(s, xs.size()));

  const SplitIndices again = in_target_split(xs, {}, 1);
  const SplitIndices other = in_target_split(xs, {}, 2);
  CHECK(again.test == s.test);
  CHECK(other.test != s.test);

  WarningCapture warnings;
  const auto tiny = instances_of({{"big", 0, 10}, {"small", 1, 2}});
  const SplitIndices t = in_target_split(tiny, {}, 0);
  CHECK(warnings.messages().size() == 1);
  CHECK(targets_in(tiny, t.dev) == std::set<std::string>{"big"});
  CHECK(is_partition(t, tiny.size()));
}

TEST_CASE("in-target split properties") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::tuple<std::string, int, int>> spec;
    const std::size_t targets = 1 + rng.below(5);
    for (std::size_t t = 0; t < targets; ++t)
      for (int label = 0; label < 3; ++label)
        spec.emplace_back("t" + std::to_string(t), label, 7 + static_cast<int>(rng.below(30)));
    const auto xs = instances_of(spec);
    const SplitIndices s = in_target_split(xs, {}, rng.next_u64());
    CHECK(is_partition(s, xs.size()));
    const auto all = targets_in(xs, s.train);
    CHECK(targets_in(xs, s.dev) == all);
    CHECK(targets_in(xs, s.test) == all);
    std::map<std::pair<std::string, int>, std::array<int, 3>> per;
    for (auto i : s.train) ++per[{xs[i].target, xs[i].label}][0];
    for (auto i : s.dev) ++per[{xs[i].target, xs[i].label}][1];
    for (auto i : s.test) ++per[{xs[i].target, xs[i].label}][2];
    for (const auto& [key, c] : per) {
      const double n = c[0] + c[1] + c[2];
      CHECK(std::abs(c[0] - 0.70 * n) < 1.0 + 1e-9);
      CHECK(std::abs(c[1] - 0.15 * n) < 1.0 + 1e-9);
      CHECK(std::abs(c[2] - 0.15 * n) < 1.0 + 1e-9);
    }
  }
}

TEST_CASE("cross-target splits") {
  const auto xs = instances_of({{"a", 0, 3}, {"b", 1, 2}, {"c", 0, 4}});
  const SplitIndices s =
      cross_target_split(xs, {{"a", SplitName::train}, {"b", SplitName::dev}, {"c", SplitName::test}});
  for (auto i : s.train) CHECK(xs[i].target == "a");
  for (auto i : s.dev) CHECK(xs[i].target == "b");
  for (auto i : s.test) CHECK(xs[i].target == "c");
  CHECK(is_partition(s, xs.size()));
  try {
    cross_target_split(xs, {{"a", SplitName::train}, {"b", SplitName::dev}});
    FAIL("expected a missing-target error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("'c'") != std::string::npos);
  }

  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::tuple<std::string, int, int>> spec;
    for (std::size_t t = 0, n = 3 + rng.below(12); t < n; ++t)
      spec.emplace_back("target" + std::to_string(t), static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(40)));
    const auto xs2 = instances_of(spec);
    const TargetPartition auto_p = auto_target_partition(xs2, {});
    CHECK(auto_p == reference_greedy(xs2, {}));
    const SplitIndices split = cross_target_split(xs2, auto_p);
    CHECK(is_partition(split, xs2.size()));
    const auto tr = targets_in(xs2, split.train), dv = targets_in(xs2, split.dev), te = targets_in(xs2, split.test);
    for (const auto& t : tr) {
      CHECK_FALSE(dv.count(t));
      CHECK_FALSE(te.count(t));
    }
    for (const auto& t : dv) CHECK_FALSE(te.count(t));
  }
}

TEST_CASE("f1 examples") {
  const std::vector<int> gold{0, 0, 1, 1}, pred{0, 1, 1, 1};
  CHECK(f1_macro(pred, gold, 2) == doctest::Approx((2.0 / 3.0 + 0.8) / 2).epsilon(1e-15));
  CHECK(f1_macro(gold, gold, 2) == 1.0);
  CHECK_THROWS_AS(f1_macro(std::vector<int>{}, std::vector<int>{}, 2), ContractError);
  CHECK_THROWS_AS(f1_macro(std::vector<int>{0}, std::vector<int>{0, 1}, 2), DimensionError);

  WarningCapture warnings;
  const F1Report r = f1_report(pred, gold, 3);
  CHECK(r.excluded_classes == std::vector<int>{2});
  CHECK(std::isnan(r.per_class[2]));
  CHECK(r.macro == f1_macro(pred, gold, 2));
  CHECK(warnings.messages().size() == 1);
}

TEST_CASE("f1 equals the confusion-matrix oracle on random vectors") {
  Rng rng(404);
  WarningCapture quiet;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> pred(n), gold(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.below(k));
      gold[i] = static_cast<int>(rng.below(k));
    }
    const double got = f1_macro(pred, gold, static_cast<std::size_t>(k));
    CHECK(got == oracle_f1_macro(pred, gold, k));

    // Pair order and a consistent relabeling leave the score unchanged.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<int> relabel(k);
    std::iota(relabel.begin(), relabel.end(), 0);
    rng.shuffle(relabel);
    std::vector<int> p2(n), g2(n);
    for (std::size_t i = 0; i < n; ++i) {
      p2[i] = relabel[pred[perm[i]]];
      g2[i] = relabel[gold[perm[i]]];
    }
    CHECK(f1_macro(p2, g2, static_cast<std::size_t>(k)) == doctest::Approx(got).epsilon(1e-12));
  }
}

TEST_CASE("seed aggregation") {
  const std::vector<double> three{0.70, 0.72, 0.74};
  const SeedAggregate a = aggregate_seeds(three);
  CHECK(a.mean == doctest::Approx(0.72).epsilon(1e-12));
  CHECK(a.stdev == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(a.count == 3);
  CHECK_FALSE(a.single_seed);
  const std::vector<double> shuffled{0.74, 0.70, 0.72};
  CHECK(aggregate_seeds(shuffled).mean == doctest::Approx(a.mean).epsilon(1e-15));
  const std::vector<double> one{0.5};
  const SeedAggregate s = aggregate_seeds(one);
  CHECK(s.stdev == 0.0);
  CHECK(s.single_seed);
  CHECK_THROWS_AS(aggregate_seeds(std::vector<double>{}), ContractError);
}

TEST_CASE("bhapkar examples") {
  // Off-diagonals 6 and 2 out of 20 pairs.
  std::vector<int> a, b;
  auto add = [&](int x, int y, int count) {
    for (int i = 0; i < count; ++i) {
      a.push_back(x);
      b.push_back(y);
    }
  };
  add(0, 0, 7);
  add(0, 1, 6);
  add(1, 0, 2);
  add(1, 1, 5);
  const BhapkarResult r = bhapkar_test(a, b, 2);
  CHECK(std::abs(r.statistic - 16.0 / 7.2) < 1e-9);
  CHECK(r.df == 1);
  CHECK(std::abs(r.p_value - std::erfc(std::sqrt(r.statistic / 2.0))) < 1e-12);

  const BhapkarResult same = bhapkar_test(a, a, 2);
  CHECK(same.statistic == 0.0);
  CHECK(same.p_value == 1.0);

  // Classes 1 and 3 never occur: the test runs over classes 0 and 2.
  std::vector<int> a3, b3;
  for (int x : a) a3.push_back(2 * x);
  for (int y : b) b3.push_back(2 * y);
  const BhapkarResult sparse = bhapkar_test(a3, b3, 4);
  CHECK(sparse.classes_used == std::vector<int>{0, 2});
  CHECK(sparse.statistic == doctest::Approx(r.statistic).epsilon(1e-12));

  // Balanced off-diagonals: d = 0 and the statistic is 0 without solving.
  CHECK(bhapkar_test(std::vector<int>{0, 1}, std::vector<int>{1, 0}, 2).statistic == 0.0);
  try {
    bhapkar_test(std::vector<int>{0, 0}, std::vector<int>{1, 1}, 2);
    FAIL("expected a singular covariance");
  } catch (const SingularMatrixError& e) {
    CHECK(std::string(e.what()).find("singular") != std::string::npos);
  }
  CHECK(std::abs(chi_square_sf(3.841458820694124, 1) - 0.05) < 1e-12);
  CHECK(std::abs(chi_square_sf(3.0, 2) - std::exp(-1.5)) < 1e-15);
  CHECK_THROWS_AS(solve_linear({{1, 2}, {2, 4}}, {1, 1}), SingularMatrixError);
}

TEST_CASE("bhapkar matches the linear-algebra oracle on random tables") {
  Rng rng(606);
  int compared = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(3));
    const std::size_t n = 5 + rng.below(60);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.below(k));
      b[i] = rng.below(3) ? a[i] : static_cast<int>(rng.below(k));
    }
    const auto expected = oracle_bhapkar(a, b, k);
    if (!expected) {
      CHECK_THROWS_AS(bhapkar_test(a, b, static_cast<std::size_t>(k)), SingularMatrixError);
      continue;
    }
    BhapkarResult r;
    try {
      r = bhapkar_test(a, b, static_cast<std::size_t>(k));
    } catch (const SingularMatrixError&) {
      // Both sides agree the table is degenerate up to round-off.
      continue;
    }
    ++compared;
    CHECK(std::abs(r.statistic - std::max(*expected, 0.0)) < 1e-9 * std::max(1.0, *expected));
    CHECK(r.statistic >= 0.0);
    CHECK(r.p_value > 0.0);
    CHECK(r.p_value <= 1.0);

    std::vector<int> relabel(k);
    std::iota(relabel.begin(), relabel.end(), 0);
    rng.shuffle(relabel);
    std::vector<int> a2(n), b2(n);
    for (std::size_t i = 0; i < n; ++i) {
      a2[i] = relabel[a[i]];
      b2[i] = relabel[b[i]];
    }
    CHECK(bhapkar_test(a2, b2, static_cast<std::size_t>(k)).statistic ==
          doctest::Approx(r.statistic).epsilon(1e-9));
  }
  CHECK(compared > 300);
}

TEST_CASE("learning rate schedule") {
  CHECK(linear_schedule(0, 10, 0.2) == 0.0);
  CHECK(linear_schedule(1, 10, 0.2) == 0.5);
  CHECK(linear_schedule(2, 10, 0.2) == 1.0);
  CHECK(linear_schedule(9, 10, 0.2) == 0.125);
  CHECK(linear_schedule(0, 10, 0.0) == 1.0);
  double previous = 1.0;
  for (std::size_t s = 2; s < 10; ++s) {
    CHECK(linear_schedule(s, 10, 0.2) <= previous);
    previous = linear_schedule(s, 10, 0.2);
  }
}

TEST_CASE("adamw single step") {
  TrainConfig cfg;
  Tensor w = Tensor::from({1}, {1.0}, true);
  Tensor b = Tensor::from({1}, {1.0}, true);
  AdamW opt({{"layer.weight", w}, {"layer.bias", b}}, cfg);
  w.mutable_grad()[0] = 0.5;
  b.mutable_grad()[0] = 0.5;
  opt.step(0.1);
  const double adam = 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(w.values()[0] == doctest::Approx(1.0 - 0.1 * 0.01 - adam).epsilon(1e-14));
  CHECK(b.values()[0] == doctest::Approx(1.0 - adam).epsilon(1e-14));
  CHECK(opt.steps() == 1);
  CHECK(AdamW::decays("x.weight"));
  CHECK_FALSE(AdamW::decays("x.LayerNorm.weight"));
  CHECK_FALSE(AdamW::decays("x.bias"));
}

TEST_CASE("featurize layouts") {
  const Vocabulary vocab = Vocabulary::build_from_texts({"text tgt ctx one two"});
  const StanceInstance inst{"1", "text", "tgt", 0, {"ctx one", "two"}};
  const std::vector<const StanceInstance*> batch{&inst};
  auto tokens = [&](const TokenBatch& b) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < b.seq_len; ++i)
      if (b.mask[i]) out.push_back(vocab.token(b.ids[i]));
    return out;
  };
  using V = std::vector<std::string>;
  CHECK(tokens(featurize(ModelKind::bert, batch, vocab, 10, 2).input) == V{"[CLS]", "text", "[SEP]"});
  CHECK(tokens(featurize(ModelKind::bert_target, batch, vocab, 10, 2).input) ==
        V{"[CLS]", "text", "[SEP]", "tgt", "[SEP]"});
  CHECK(tokens(featurize(ModelKind::bert_context, batch, vocab, 10, 2).input) ==
        V{"[CLS]", "text", "[SEP]", "tgt", "ctx", "one", "two", "[SEP]"});
  const ModelInput in = featurize(ModelKind::inject, batch, vocab, 10, 3);
  CHECK(tokens(in.input) == V{"[CLS]", "text", "[SEP]", "tgt", "[SEP]"});
  REQUIRE(in.contexts.size() == 3);
  CHECK(tokens(in.contexts[0]) == V{"[CLS]", "ctx", "one", "[SEP]"});
  CHECK(tokens(in.contexts[2]) == V{"[SEP]"});
}

TEST_CASE("config json round trip") {
  ExperimentConfig cfg;
  cfg.split.mode = SplitMode::cross_target;
  cfg.split.partition = {{"a", SplitName::train}, {"b", SplitName::test}};
  cfg.train.seeds = {4, 5};
  cfg.context_source = "causenet";
  const nlohmann::json j = cfg;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.split.partition.at("b") == SplitName::test);
  CHECK(back.train.seeds == std::vector<std::uint64_t>{4, 5});
}

TEST_CASE("training with a zero learning rate changes nothing") {
  const Dataset ds = cue_word_dataset(40, 1);
  const Vocabulary vocab = vocabulary_of(ds);
  ExperimentConfig cfg = tiny_experiment(vocab, 2, ModelKind::inject);
  cfg.train.learning_rate = 0.0;
  const SplitIndices splits = in_target_split(ds.instances, {}, 0);
  const TrainOutcome out = train_run(ds, splits, vocab, cfg, 7);
  Rng init = Rng(7).fork(0);
  const auto fresh = make_model(ModelKind::inject, cfg.model, init);
  CHECK(parameter_values(*out.model) == parameter_values(*fresh));
  CHECK(out.result.epochs.size() == 2);
  CHECK(out.result.test_predictions.size() == splits.test.size());
}

TEST_CASE("a separable toy set is fit within five epochs") {
  Dataset ds;
  ds.scheme = LabelScheme({"con", "pro"});
  for (int i = 0; i < 30; ++i) {
    const bool pro = i % 2 == 0;
    ds.instances.push_back({"x" + std::to_string(i), pro ? "great idea" : "awful idea", "plan", pro ? 1 : 0, {}});
  }
  const Vocabulary vocab = vocabulary_of(ds);
  ExperimentConfig cfg = tiny_experiment(vocab, 2, ModelKind::bert_target);
  cfg.model.encoder.dropout_rate = 0.0;
  cfg.model.encoder.init_std = 0.2;
  cfg.train.epochs = 5;
  cfg.train.batch_size = 4;
  cfg.train.learning_rate = 5e-3;
  cfg.train.warmup_ratio = 0.0;
  cfg.train.eval_train = true;
  SplitIndices splits;
  for (std::size_t i = 0; i < 30; ++i) (i < 20 ? splits.train : i < 25 ? splits.dev : splits.test).push_back(i);
  const TrainOutcome out = train_run(ds, splits, vocab, cfg, 0);
  REQUIRE(out.result.epochs.back().train_f1);
  CHECK(*out.result.epochs.back().train_f1 == 1.0);
}

TEST_CASE("training is bitwise deterministic per seed") {
  const Dataset ds = cue_word_dataset(48, 3);
  const Vocabulary vocab = vocabulary_of(ds);
  const ExperimentConfig cfg = tiny_experiment(vocab, 2, ModelKind::inject);
  const SplitIndices splits = in_target_split(ds.instances, {}, 0);
  TempDir dir("determinism");
  write_run_result(dir / "a.json", train_run(ds, splits, vocab, cfg, 11).result);
  write_run_result(dir / "b.json", train_run(ds, splits, vocab, cfg, 11).result);
  write_run_result(dir / "c.json", train_run(ds, splits, vocab, cfg, 12).result);
  CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
  CHECK(read_file(dir / "a.json") != read_file(dir / "c.json"));
  const RunResult back = read_run_result(dir / "a.json");
  CHECK(back.seed == 11);
  CHECK(nlohmann::json(back) == nlohmann::json::parse(read_file(dir / "a.json")));
}

TEST_CASE("a diverging run aborts with diagnostics") {
  const Dataset ds = cue_word_dataset(40, 2);
  const Vocabulary vocab = vocabulary_of(ds);
  ExperimentConfig cfg = tiny_experiment(vocab, 2, ModelKind::bert);
  cfg.train.learning_rate = 1e300;
  cfg.train.warmup_ratio = 0.0;
  const SplitIndices splits = in_target_split(ds.instances, {}, 0);
  try {
    train_run(ds, splits, vocab, cfg, 0);
    FAIL("expected the run to abort");
  } catch (const NonFiniteError& e) {
    const std::string what = e.what();
    CHECK(what.find("step") != std::string::npos);
    CHECK(what.find("lr") != std::string::npos);
    CHECK(what.find("batch ids [s") != std::string::npos);
  }
  ExperimentConfig mismatch = tiny_experiment(vocab, 3, ModelKind::bert);
  CHECK_THROWS_AS(train_run(ds, splits, vocab, mismatch, 0), ContractError);
}
