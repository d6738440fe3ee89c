#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <set>

#include "inject/errors.hpp"
#include "inject/io.hpp"
#include "inject/retrieval_prompt.hpp"
#include "test_support.hpp"

using namespace inject;
using namespace inject::testing;

namespace {

const StopwordList& stopwords() {
  static const StopwordList list = StopwordList::load(INJECT_DATA_DIR "/stopwords_en.txt");
  return list;
}

const std::string kExampleText = "Creates a sense of school spirit.";
const std::string kExampleTarget = "School Uniforms";
const std::string kExampleFirst = "school spirit is the enthusiasm and pride felt by the students of a school";
const std::string kExampleSecond =
    "a strong sense of school spirit is a positive and uplifting influence on the school and its students";

// Times out on the listed call indices and answers every other call.
class FlakyBackend final : public GenerationBackend {
 public:
  explicit FlakyBackend(std::set<std::size_t> failing) : failing_(std::move(failing)) {}
  std::string generate(const std::string& prompt, int) override {
    if (failing_.count(calls_++)) throw BackendError("timeout for '" + prompt + "'");
    return "answer to " + prompt;
  }
  std::string name() const override { return "flaky"; }
  std::size_t calls() const { return calls_; }

 private:
  std::set<std::size_t> failing_;
  std::size_t calls_ = 0;
};

class ConstantBackend final : public GenerationBackend {
 public:
  explicit ConstantBackend(std::string text) : text_(std::move(text)) {}
  std::string generate(const std::string&, int) override {
    ++calls;
    return text_;
  }
  std::string name() const override { return "constant"; }
  int calls = 0;

 private:
  std::string text_;
};

std::string random_generation(Rng& rng) {
  static const std::vector<std::string> pieces{"a", "b", "c", "dog", "the", "</s>", "<pad>", " ", "x</s>y", "<pad>z"};
  std::string out;
  for (std::size_t i = 0, n = rng.below(12); i < n; ++i) {
    out += pieces[rng.below(pieces.size())];
    if (rng.below(2)) out += " ";
  }
  return out;
}

}  // namespace

TEST_CASE("templates reproduce the six patterns") {
  const auto& t = prompt_templates();
  REQUIRE(t.size() == 6);
  CHECK(t[0].instantiate("school uniforms") == "define school uniforms");
  CHECK(t[1].instantiate("school uniforms") == "what is the definition of school uniforms");
  CHECK(t[2].instantiate("school uniforms") == "explain school uniforms");
  CHECK(t[3].instantiate("school spirit", "school uniforms") == "relation between school spirit and school uniforms");
  CHECK(t[4].instantiate("school spirit", "school uniforms") == "how is school spirit related to school uniforms");
  CHECK(t[5].instantiate("school spirit", "school uniforms") == "explain school spirit in terms of school uniforms");
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(t[i].id == "P" + std::to_string(i + 1));
    CHECK(t[i].arity == (i < 3 ? 1 : 2));
  }
  CHECK(prompt_template("P4").pattern == "relation between {a} and {b}");
  CHECK(prompt_template("X1").instantiate("tax") == "what is tax");
  CHECK_THROWS_AS(prompt_template("P7"), ContractError);
}

TEST_CASE("noun phrase extraction") {
  const auto phrases = extract_noun_phrases(kExampleText, kExampleTarget, stopwords());
  CHECK(phrases == std::vector<std::string>{"creates", "sense", "school spirit"});

  const auto with_target = extract_noun_phrases("school uniforms build school spirit", kExampleTarget, stopwords());
  CHECK(std::find(with_target.begin(), with_target.end(), "school spirit") != with_target.end());
  CHECK(std::find(with_target.begin(), with_target.end(), "school uniforms") == with_target.end());

  CHECK(extract_noun_phrases("the of and it is", kExampleTarget, stopwords()).empty());

  const auto long_run = extract_noun_phrases("green nuclear power plant design", "energy", stopwords());
  CHECK(long_run == std::vector<std::string>{"green nuclear power", "plant design"});

  // A chunker proposing a 4-word span never has it emitted whole.
  const Chunker wide = [](const std::string&, const StopwordList&) {
    return std::vector<std::string>{"one two three four", "one two", "One Two"};
  };
  CHECK(extract_noun_phrases("ignored", "x", stopwords(), wide) == std::vector<std::string>{"one two"});
}

TEST_CASE("prompt construction by mode") {
  const auto np = build_prompts({"school spirit"}, kExampleTarget, PromptMode::np);
  REQUIRE(np.size() == 6);
  CHECK(np[0].text == "define school spirit");
  CHECK(np[3].text == "define school uniforms");
  CHECK(np[5].template_id == "P3");

  const auto targ = build_prompts({"school spirit", "pride"}, kExampleTarget, PromptMode::np_targ);
  REQUIRE(targ.size() == 6);
  CHECK(targ[0].text == "relation between school spirit and school uniforms");
  CHECK(targ[4].text == "how is pride related to school uniforms");
  CHECK(build_prompts({}, kExampleTarget, PromptMode::np_targ).empty());

  for (const auto& p : build_prompts({"tax?", "rain."}, "Climate change!", PromptMode::np))
    CHECK_FALSE(std::ispunct(static_cast<unsigned char>(p.text.back())));
  CHECK(build_prompts({"tax"}, "x", PromptMode::np, true).size() == 10);
}

TEST_CASE("post-processing examples") {
  CHECK(postprocess_candidates(std::vector<std::string>{"the the the the dog"}, 2).empty());
  CHECK(postprocess_candidates(std::vector<std::string>{"a</s><pad>"}, 2) == std::vector<std::string>{"a"});
  CHECK(postprocess_candidates(std::vector<std::string>{"one two three", "one two", "x x x x"}, 2) ==
        std::vector<std::string>{"one two three", "one two"});
  // Exactly half repeated is kept.
  CHECK(postprocess_candidates(std::vector<std::string>{"a a b b"}, 1) == std::vector<std::string>{"a a b b"});
  CHECK(postprocess_candidates(std::vector<std::string>{"", "</s>", "  "}, 2).empty());
  CHECK(postprocess_candidates(std::vector<std::string>{"b c", "a c", "a c"}, 3) == std::vector<std::string>{"a c", "b c"});
  CHECK(strip_special_tokens("x</s>y <pad> z") == "x y z");
  CHECK(truncate_words("a b c d", 2) == "a b");
  CHECK_THROWS_AS(postprocess_candidates(std::vector<std::string>{"a"}, 0), ContractError);
}

TEST_CASE("post-processing properties on random generations") {
  Rng rng(55);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> raw;
    for (std::size_t i = 0, n = rng.below(8); i < n; ++i) raw.push_back(random_generation(rng));
    const int m = 1 + static_cast<int>(rng.below(4));
    const auto out = postprocess_candidates(raw, m);
    CHECK(out.size() <= static_cast<std::size_t>(m));
    CHECK(postprocess_candidates(out, m) == out);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i].find("</s>") == std::string::npos);
      CHECK(out[i].find("<pad>") == std::string::npos);
      if (i) CHECK(whitespace_split(out[i - 1]).size() >= whitespace_split(out[i]).size());
    }
  }
}

TEST_CASE("replay backend is exact") {
  ReplayBackend replay = ReplayBackend::load(INJECT_FIXTURE_DIR "/school_spirit_replay.jsonl");
  CHECK(replay.size() == 12);
  CHECK(replay.generate("explain creates", 40) == "creates is a verb</s>");
  CHECK_THROWS_AS(replay.generate("explain nothing", 40), BackendError);
}

TEST_CASE("replaying the school spirit example yields its two contexts") {
  ReplayBackend replay = ReplayBackend::load(INJECT_FIXTURE_DIR "/school_spirit_replay.jsonl");
  GenerationConfig cfg;
  const GenerationOutcome out = generate_context(kExampleText, kExampleTarget, cfg, replay, stopwords());
  CHECK(out.prompts.size() == 12);
  CHECK(out.failures.empty());
  REQUIRE(out.candidates.size() == 2);
  // Ranked by length: the 18-word sentence comes before the 14-word one.
  CHECK(out.candidates[0].text == kExampleSecond);
  CHECK(out.candidates[1].text == kExampleFirst);
  CHECK(out.candidates[0].source == ContextSource::prompt);
  CHECK(out.candidates[0].provenance == "P3: explain school spirit");
  CHECK(out.candidates[1].provenance == "P1: define school spirit");
}

TEST_CASE("generation tolerates failures") {
  SUBCASE("six prompts with two failures") {
    FlakyBackend flaky({1, 4});
    GenerationConfig cfg;
    cfg.m = 6;
    // One phrase plus the target gives six prompts in np mode.
    const GenerationOutcome out = generate_context("pride", "tax", cfg, flaky, stopwords());
    CHECK(out.prompts.size() == 6);
    CHECK(flaky.calls() == 6);
    CHECK(out.failures.size() == 2);
    CHECK(out.failures[0].prompt == "what is the definition of pride");
    CHECK(out.candidates.size() == 4);
    for (std::size_t i = 1; i < out.candidates.size(); ++i)
      CHECK(whitespace_split(out.candidates[i - 1].text).size() >= whitespace_split(out.candidates[i].text).size());
  }

  SUBCASE("empty generations") {
    ConstantBackend empty("</s>");
    const GenerationOutcome out = generate_context(kExampleText, kExampleTarget, GenerationConfig{}, empty, stopwords());
    CHECK(out.candidates.empty());
    CHECK(out.failures.empty());
  }

  SUBCASE("every prompt failing warns") {
    WarningCapture warnings;
    FlakyBackend broken({0, 1, 2, 3, 4, 5});
    const GenerationOutcome out = generate_context("pride", "tax", GenerationConfig{}, broken, stopwords());
    CHECK(out.candidates.empty());
    CHECK(out.failures.size() == 6);
    CHECK(warnings.messages().size() == 1);
  }

  SUBCASE("max words honored") {
    ConstantBackend chatty("w1 w2 w3 w4 w5 w6");
    GenerationConfig cfg;
    cfg.max_words = 3;
    cfg.m = 1;
    const GenerationOutcome out = generate_context("pride", "tax", cfg, chatty, stopwords());
    REQUIRE(out.candidates.size() == 1);
    CHECK(out.candidates[0].text == "w1 w2 w3");
  }
}

TEST_CASE("caching backend persists responses") {
  TempDir dir("gencache");
  const auto path = dir / "cache.jsonl";
  auto inner = std::make_shared<ConstantBackend>("a fresh answer");
  {
    CachingBackend cached(inner, path);
    CHECK(cached.generate("define tax", 40) == "a fresh answer");
    CHECK(cached.generate("define tax", 40) == "a fresh answer");
    CHECK(inner->calls == 1);
  }
  CHECK(read_lines(path).size() == 1);
  auto silent = std::make_shared<ConstantBackend>("other");
  CachingBackend reopened(silent, path);
  CHECK(reopened.generate("define tax", 40) == "a fresh answer");
  CHECK(silent->calls == 0);
  CHECK(ReplayBackend::load(path).generate("define tax", 40) == "a fresh answer");
}

TEST_CASE("generation config contracts") {
  GenerationConfig cfg;
  cfg.m = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = GenerationConfig{};
  cfg.max_words = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  CHECK(parse_prompt_mode("NP-Targ") == PromptMode::np_targ);
  CHECK_THROWS_AS(parse_prompt_mode("chat"), ContractError);
}
