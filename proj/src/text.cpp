#include "inject/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "inject/errors.hpp"

namespace inject {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 128 && std::ispunct(u);
}

char lower(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 128 ? static_cast<char>(std::tolower(u)) : c;
}

// Word spans under the tokenizer's pre-split rules.
std::vector<std::pair<std::size_t, std::size_t>> split_words(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    if (is_ascii_punct(text[i])) {
      spans.emplace_back(i, i + 1);
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i]) && !is_ascii_punct(text[i])) ++i;
    spans.emplace_back(start, i);
  }
  return spans;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens, SpecialTokens specials)
    : tokens_(std::move(tokens)), specials_(std::move(specials)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw ContractError("vocabulary: duplicate token '" + tokens_[i] + "' at id " + std::to_string(i));
  }
  auto require = [&](const std::string& tok) {
    auto it = index_.find(tok);
    if (it == index_.end()) throw ContractError("vocabulary: missing special token " + tok);
    return it->second;
  };
  cls_ = require(specials_.cls);
  sep_ = require(specials_.sep);
  pad_ = require(specials_.pad);
  unk_ = require(specials_.unk);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, SpecialTokens specials) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens), std::move(specials));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::build_from_texts(const std::vector<std::string>& texts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto [s, e] : split_words(text)) ++counts[to_lower_ascii(text.substr(s, e - s))];
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  SpecialTokens specials;
  std::vector<std::string> tokens{specials.pad, specials.unk, specials.cls, specials.sep};
  for (const auto& [word, count] : ordered) {
    if (count < min_count) continue;
    if (std::find(tokens.begin(), tokens.end(), word) != tokens.end()) continue;
    tokens.push_back(word);
  }
  return Vocabulary(std::move(tokens), specials);
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw IndexError("token '" + std::string(token) + "' not in vocabulary");
  return *found;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

std::size_t TokenSequence::unpadded_length() const {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), std::uint8_t{1}));
}

StopwordList::StopwordList(std::unordered_set<std::string> words, std::filesystem::path source)
    : source_(std::move(source)) {
  for (const auto& w : words) words_.insert(to_lower_ascii(w));
  if (words_.empty()) throw ContractError("stopword list is empty");
}

StopwordList StopwordList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stopword list " + path.string());
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    const std::string word = normalize_text(line);
    if (word.empty() || word[0] == '#') continue;
    words.insert(word);
  }
  return StopwordList(std::move(words), path);
}

bool StopwordList::contains(std::string_view word) const { return words_.count(to_lower_ascii(word)) > 0; }

std::string to_lower_ascii(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = lower(c);
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(lower(c));
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 128 || std::isalnum(u) || c == '\'') {
      current.push_back(lower(c));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::vector<std::string> whitespace_split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  if (normalize_text(text).empty()) throw ContractError("tokenize: empty input text");
  TokenSequence seq;
  const std::string& prefix = vocab.specials().continuation_prefix;
  for (auto [ws, we] : split_words(text)) {
    const std::string word = to_lower_ascii(text.substr(ws, we - ws));
    std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> pieces;
    std::size_t start = 0;
    bool unknown = false;
    while (start < word.size()) {
      std::size_t end = word.size();
      std::optional<int> found;
      while (end > start) {
        std::string piece = word.substr(start, end - start);
        if (start > 0) piece = prefix + piece;
        found = vocab.find(piece);
        if (found) break;
        --end;
      }
      if (!found) {
        unknown = true;
        break;
      }
      pieces.push_back({*found, {ws + start, ws + end}});
      start = end;
    }
    if (unknown) {
      pieces.clear();
      pieces.push_back({vocab.unk_id(), {ws, we}});
    }
    for (const auto& [id, span] : pieces) {
      seq.ids.push_back(id);
      seq.segment_ids.push_back(0);
      seq.attention_mask.push_back(1);
      seq.surface_spans.push_back(span);
    }
  }
  return seq;
}

std::string detokenize_surface(const TokenSequence& seq, std::string_view text) {
  std::string out;
  std::size_t previous_end = 0;
  bool first = true;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!seq.attention_mask[i]) continue;
    const auto [s, e] = seq.surface_spans[i];
    if (s == e) continue;
    if (!first && s > previous_end) out.push_back(' ');
    out += to_lower_ascii(text.substr(s, e - s));
    previous_end = e;
    first = false;
  }
  return out;
}

namespace {

void append(TokenSequence& out, int id, int segment, std::uint8_t mask, std::pair<std::size_t, std::size_t> span) {
  out.ids.push_back(id);
  out.segment_ids.push_back(segment);
  out.attention_mask.push_back(mask);
  out.surface_spans.push_back(span);
}

}  // namespace

TokenSequence encode_pair(std::string_view a, const std::optional<std::string>& b, const Vocabulary& vocab,
                          std::size_t max_len) {
  if (max_len < 3) throw ContractError("encode_pair: max_len must be at least 3");
  TokenSequence first = tokenize(a, vocab);
  TokenSequence second;
  if (b) second = tokenize(*b, vocab);
  const std::size_t budget = max_len - (b ? 3 : 2);
  std::size_t la = first.size(), lb = second.size();
  std::size_t dropped = 0;
  while (la + lb > budget) {
    if (la >= lb)
      --la;
    else
      --lb;
    ++dropped;
  }

  TokenSequence out;
  out.truncated = dropped;
  append(out, vocab.cls_id(), 0, 1, {0, 0});
  for (std::size_t i = 0; i < la; ++i) append(out, first.ids[i], 0, 1, first.surface_spans[i]);
  append(out, vocab.sep_id(), 0, 1, {0, 0});
  if (b) {
    for (std::size_t i = 0; i < lb; ++i) append(out, second.ids[i], 1, 1, second.surface_spans[i]);
    append(out, vocab.sep_id(), 1, 1, {0, 0});
  }
  while (out.size() < max_len) append(out, vocab.pad_id(), 0, 0, {0, 0});
  return out;
}

TokenSequence separator_only(const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) throw ContractError("separator_only: max_len must be positive");
  TokenSequence out;
  append(out, vocab.sep_id(), 0, 1, {0, 0});
  while (out.size() < max_len) append(out, vocab.pad_id(), 0, 0, {0, 0});
  return out;
}

}  // namespace inject
