#pragma once

// Context generation by prompting a text generator: phrase extraction,
// question templates, pluggable generation backends and candidate cleanup.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "inject/retrieval_kb.hpp"
#include "inject/text.hpp"

namespace inject {

struct PromptTemplate {
  std::string id;       // "P1".."P6", extras "X1", "X2"
  int arity = 1;
  std::string pattern;  // slots {a} and {b}

  std::string instantiate(const std::string& a, const std::string& b = {}) const;
};

/// P1..P6 in order.
const std::vector<PromptTemplate>& prompt_templates();
/// "what is {a}" and "describe {a}"; not used unless requested.
const std::vector<PromptTemplate>& extra_prompt_templates();
const PromptTemplate& prompt_template(const std::string& id);

enum class PromptMode { np, np_targ };

std::string to_string(PromptMode mode);
PromptMode parse_prompt_mode(const std::string& name);

struct GenerationConfig {
  int max_words = 40;
  int m = 2;
  PromptMode mode = PromptMode::np;
  bool include_extra_templates = false;

  void validate() const;
};

/// Splits text into candidate phrases.
using Chunker = std::function<std::vector<std::string>(const std::string& text, const StopwordList& stopwords)>;

/// Maximal runs of non-stopword words, cut into consecutive pieces of at most
/// three words.
std::vector<std::string> default_chunker(const std::string& text, const StopwordList& stopwords);

/// Unique phrases of at most three words, none equal to the target and none
/// made only of stopwords, in document order.
std::vector<std::string> extract_noun_phrases(const std::string& text, const std::string& target,
                                              const StopwordList& stopwords, const Chunker& chunker = default_chunker);

struct Prompt {
  std::string template_id;
  std::string text;
};

/// np: P1-P3 for each phrase, then for the target. np_targ: P4-P6 for each
/// (phrase, target) pair.
std::vector<Prompt> build_prompts(const std::vector<std::string>& phrases, const std::string& target, PromptMode mode,
                                  bool include_extra_templates = false);

/// Removes "</s>" and "<pad>" and collapses whitespace.
std::string strip_special_tokens(const std::string& text);

/// First `max_words` whitespace-separated words.
std::string truncate_words(const std::string& text, int max_words);

/// Strips special tokens, drops empty and repetitive candidates (more than
/// half of the words repeat an earlier word), drops duplicates, sorts by word
/// count descending then text ascending, and keeps the first m.
std::vector<ContextCandidate> postprocess_candidates(std::vector<ContextCandidate> raw, int m);
std::vector<std::string> postprocess_candidates(const std::vector<std::string>& raw, int m);

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  /// Raises BackendError on a miss, timeout or transport failure.
  virtual std::string generate(const std::string& prompt, int max_words) = 0;
  virtual std::string name() const = 0;
  virtual std::chrono::milliseconds timeout() const { return std::chrono::milliseconds(0); }
};

/// Answers from a recorded {prompt, text} JSON Lines file.
class ReplayBackend final : public GenerationBackend {
 public:
  explicit ReplayBackend(std::map<std::string, std::string> responses);
  static ReplayBackend load(const std::filesystem::path& path);

  std::string generate(const std::string& prompt, int max_words) override;
  std::string name() const override { return "replay"; }
  std::size_t size() const noexcept { return responses_.size(); }

 private:
  std::map<std::string, std::string> responses_;
};

struct HttpBackendOptions {
  /// http://host[:port][/path]
  std::string endpoint;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
};

/// Environment variable consulted when no endpoint flag is given.
inline constexpr const char* kGenerationEndpointEnv = "INJECT_GENERATION_ENDPOINT";

/// POSTs {"prompt", "max_words"} and reads {"text"}; retries with exponential
/// backoff.
class HttpGenerationBackend final : public GenerationBackend {
 public:
  explicit HttpGenerationBackend(HttpBackendOptions options);

  std::string generate(const std::string& prompt, int max_words) override;
  std::string name() const override { return "http:" + options_.endpoint; }
  std::chrono::milliseconds timeout() const override { return options_.timeout; }

 private:
  HttpBackendOptions options_;
  std::string base_;
  std::string path_;
};

/// Serves repeated prompts from a {prompt, text} JSON Lines file and appends
/// every new response to it.
class CachingBackend final : public GenerationBackend {
 public:
  CachingBackend(std::shared_ptr<GenerationBackend> inner, std::filesystem::path cache_path);

  std::string generate(const std::string& prompt, int max_words) override;
  std::string name() const override { return "cached:" + inner_->name(); }
  std::chrono::milliseconds timeout() const override { return inner_->timeout(); }

 private:
  std::shared_ptr<GenerationBackend> inner_;
  std::filesystem::path cache_path_;
  std::map<std::string, std::string> cache_;
  std::mutex mutex_;
};

struct PromptFailure {
  std::string prompt;
  std::string error;
};

struct GenerationOutcome {
  std::vector<Prompt> prompts;
  std::vector<ContextCandidate> candidates;
  std::vector<PromptFailure> failures;
};

/// Builds prompts for (text, target), queries the backend once per prompt in
/// prompt order and post-processes the responses. Failed prompts are recorded
/// and skipped.
GenerationOutcome generate_context(const std::string& text, const std::string& target, const GenerationConfig& config,
                                   GenerationBackend& backend, const StopwordList& stopwords,
                                   const Chunker& chunker = default_chunker);

}  // namespace inject
