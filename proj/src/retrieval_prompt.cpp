#include "inject/retrieval_prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "inject/errors.hpp"
#include "inject/io.hpp"
#include "inject/log.hpp"

namespace inject {

std::string PromptTemplate::instantiate(const std::string& a, const std::string& b) const {
  std::string out;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern.compare(i, 3, "{a}") == 0) {
      out += a;
      i += 2;
    } else if (pattern.compare(i, 3, "{b}") == 0) {
      out += b;
      i += 2;
    } else {
      out.push_back(pattern[i]);
    }
  }
  return out;
}

const std::vector<PromptTemplate>& prompt_templates() {
  static const std::vector<PromptTemplate> templates = {
      {"P1", 1, "define {a}"},
      {"P2", 1, "what is the definition of {a}"},
      {"P3", 1, "explain {a}"},
      {"P4", 2, "relation between {a} and {b}"},
      {"P5", 2, "how is {a} related to {b}"},
      {"P6", 2, "explain {a} in terms of {b}"},
  };
  return templates;
}

const std::vector<PromptTemplate>& extra_prompt_templates() {
  static const std::vector<PromptTemplate> templates = {
      {"X1", 1, "what is {a}"},
      {"X2", 1, "describe {a}"},
  };
  return templates;
}

const PromptTemplate& prompt_template(const std::string& id) {
  for (const auto* list : {&prompt_templates(), &extra_prompt_templates()})
    for (const auto& t : *list)
      if (t.id == id) return t;
  throw ContractError("unknown prompt template '" + id + "'");
}

std::string to_string(PromptMode mode) { return mode == PromptMode::np ? "np" : "np-targ"; }

PromptMode parse_prompt_mode(const std::string& name) {
  if (name == "np" || name == "NP") return PromptMode::np;
  if (name == "np-targ" || name == "NP-Targ" || name == "np_targ") return PromptMode::np_targ;
  throw ContractError("unknown prompt mode '" + name + "'");
}

void GenerationConfig::validate() const {
  if (max_words < 1) throw ContractError("generation max_words must be at least 1");
  if (m < 1) throw ContractError("generation m must be at least 1");
}

std::vector<std::string> default_chunker(const std::string& text, const StopwordList& stopwords) {
  std::vector<std::string> chunks;
  std::vector<std::string> run;
  auto flush = [&] {
    for (std::size_t i = 0; i < run.size(); i += 3) {
      std::string phrase;
      for (std::size_t j = i; j < std::min(run.size(), i + 3); ++j) {
        if (!phrase.empty()) phrase.push_back(' ');
        phrase += run[j];
      }
      chunks.push_back(std::move(phrase));
    }
    run.clear();
  };
  for (auto& w : word_tokens(text)) {
    if (stopwords.contains(w))
      flush();
    else
      run.push_back(std::move(w));
  }
  flush();
  return chunks;
}

std::vector<std::string> extract_noun_phrases(const std::string& text, const std::string& target,
                                              const StopwordList& stopwords, const Chunker& chunker) {
  const std::string target_norm = normalize_text(target);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& raw : chunker(text, stopwords)) {
    const std::string phrase = normalize_text(raw);
    const auto words = whitespace_split(phrase);
    if (words.empty() || words.size() > 3) continue;
    if (phrase == target_norm) continue;
    if (std::all_of(words.begin(), words.end(), [&](const std::string& w) { return stopwords.contains(w); })) continue;
    if (seen.insert(phrase).second) out.push_back(phrase);
  }
  return out;
}

namespace {

// Prompts never end in punctuation.
std::string trim_trailing_punct(std::string s) {
  while (!s.empty() && (std::ispunct(static_cast<unsigned char>(s.back())) || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace

std::vector<Prompt> build_prompts(const std::vector<std::string>& phrases, const std::string& target, PromptMode mode,
                                  bool include_extra_templates) {
  const std::string tgt = trim_trailing_punct(normalize_text(target));
  const auto& all = prompt_templates();
  std::vector<Prompt> prompts;
  if (mode == PromptMode::np) {
    std::vector<const PromptTemplate*> single{&all[0], &all[1], &all[2]};
    if (include_extra_templates)
      for (const auto& t : extra_prompt_templates()) single.push_back(&t);
    auto emit = [&](const std::string& a) {
      const std::string slot = trim_trailing_punct(normalize_text(a));
      if (slot.empty()) return;
      for (const auto* t : single) prompts.push_back({t->id, t->instantiate(slot)});
    };
    for (const auto& p : phrases) emit(p);
    emit(tgt);
  } else {
    for (const auto& p : phrases) {
      const std::string slot = trim_trailing_punct(normalize_text(p));
      if (slot.empty()) continue;
      for (std::size_t i = 3; i < 6; ++i) prompts.push_back({all[i].id, all[i].instantiate(slot, tgt)});
    }
  }
  return prompts;
}

std::string strip_special_tokens(const std::string& text) {
  std::string s = text;
  for (const std::string token : {"</s>", "<pad>"}) {
    for (auto pos = s.find(token); pos != std::string::npos; pos = s.find(token, pos)) s.replace(pos, token.size(), " ");
  }
  std::string out;
  for (const auto& w : whitespace_split(s)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string truncate_words(const std::string& text, int max_words) {
  if (max_words < 1) throw ContractError("truncate_words: max_words must be at least 1");
  std::string out;
  int n = 0;
  for (const auto& w : whitespace_split(text)) {
    if (n++ == max_words) break;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

namespace {

bool too_repetitive(const std::vector<std::string>& words) {
  const std::set<std::string> distinct(words.begin(), words.end());
  return 2 * (words.size() - distinct.size()) > words.size();
}

}  // namespace

std::vector<ContextCandidate> postprocess_candidates(std::vector<ContextCandidate> raw, int m) {
  if (m < 1) throw ContractError("postprocess_candidates: m must be at least 1");
  struct Kept {
    ContextCandidate candidate;
    std::size_t words;
  };
  std::vector<Kept> kept;
  std::set<std::string> seen;
  for (auto& c : raw) {
    c.text = strip_special_tokens(c.text);
    const auto words = whitespace_split(c.text);
    if (words.empty() || too_repetitive(words)) continue;
    if (!seen.insert(c.text).second) continue;
    c.score = static_cast<double>(words.size());
    c.source = ContextSource::prompt;
    kept.push_back({std::move(c), words.size()});
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Kept& a, const Kept& b) {
    if (a.words != b.words) return a.words > b.words;
    return a.candidate.text < b.candidate.text;
  });
  std::vector<ContextCandidate> out;
  for (auto& k : kept) {
    if (out.size() == static_cast<std::size_t>(m)) break;
    out.push_back(std::move(k.candidate));
  }
  return out;
}

std::vector<std::string> postprocess_candidates(const std::vector<std::string>& raw, int m) {
  std::vector<ContextCandidate> candidates;
  for (const auto& r : raw) candidates.push_back({r, 0.0, ContextSource::prompt, {}});
  std::vector<std::string> out;
  for (auto& c : postprocess_candidates(std::move(candidates), m)) out.push_back(std::move(c.text));
  return out;
}

ReplayBackend::ReplayBackend(std::map<std::string, std::string> responses) : responses_(std::move(responses)) {}

namespace {

std::map<std::string, std::string> read_prompt_text_jsonl(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (normalize_text(lines[i]).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      out[j.at("prompt").get<std::string>()] = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), i + 1, e.what());
    }
  }
  return out;
}

}  // namespace

ReplayBackend ReplayBackend::load(const std::filesystem::path& path) {
  return ReplayBackend(read_prompt_text_jsonl(path));
}

std::string ReplayBackend::generate(const std::string& prompt, int /*max_words*/) {
  auto it = responses_.find(prompt);
  if (it == responses_.end()) throw BackendError("replay miss for prompt '" + prompt + "'");
  return it->second;
}

CachingBackend::CachingBackend(std::shared_ptr<GenerationBackend> inner, std::filesystem::path cache_path)
    : inner_(std::move(inner)), cache_path_(std::move(cache_path)) {
  if (!inner_) throw ContractError("caching backend needs an inner backend");
  if (std::filesystem::exists(cache_path_)) cache_ = read_prompt_text_jsonl(cache_path_);
}

std::string CachingBackend::generate(const std::string& prompt, int max_words) {
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(prompt);
    if (it != cache_.end()) return it->second;
  }
  std::string text = inner_->generate(prompt, max_words);
  std::lock_guard lock(mutex_);
  if (cache_.emplace(prompt, text).second) {
    if (cache_path_.has_parent_path()) std::filesystem::create_directories(cache_path_.parent_path());
    std::ofstream out(cache_path_, std::ios::app);
    if (!out) throw IoError("cannot append to generation cache " + cache_path_.string());
    out << nlohmann::json{{"prompt", prompt}, {"text", text}}.dump() << '\n';
  }
  return text;
}

GenerationOutcome generate_context(const std::string& text, const std::string& target, const GenerationConfig& config,
                                   GenerationBackend& backend, const StopwordList& stopwords, const Chunker& chunker) {
  config.validate();
  GenerationOutcome outcome;
  const auto phrases = extract_noun_phrases(text, target, stopwords, chunker);
  outcome.prompts = build_prompts(phrases, target, config.mode, config.include_extra_templates);
  std::vector<ContextCandidate> raw;
  for (const auto& prompt : outcome.prompts) {
    try {
      const std::string generated = backend.generate(prompt.text, config.max_words);
      raw.push_back({truncate_words(strip_special_tokens(generated), config.max_words), 0.0, ContextSource::prompt,
                     prompt.template_id + ": " + prompt.text});
    } catch (const Error& e) {
      outcome.failures.push_back({prompt.text, e.what()});
    }
  }
  if (!outcome.prompts.empty() && outcome.failures.size() == outcome.prompts.size())
    warn("generation: all " + std::to_string(outcome.prompts.size()) + " prompts failed for target '" + target + "'");
  outcome.candidates = postprocess_candidates(std::move(raw), config.m);
  return outcome;
}

}  // namespace inject
