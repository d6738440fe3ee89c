#pragma once

// Tokenization and sequence encoding.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace inject {

struct SpecialTokens {
  std::string cls = "[CLS]";
  std::string sep = "[SEP]";
  std::string pad = "[PAD]";
  std::string unk = "[UNK]";
  std::string continuation_prefix = "##";
};

class Vocabulary {
 public:
  /// Builds from an ordered token list; index = id. Special tokens must be present.
  explicit Vocabulary(std::vector<std::string> tokens, SpecialTokens specials = {});

  /// One token per line, line number = id.
  static Vocabulary load(const std::filesystem::path& path, SpecialTokens specials = {});
  void save(const std::filesystem::path& path) const;

  /// Whole-word vocabulary over the lowercase words of `texts`, specials first,
  /// then words ordered by descending frequency (ties alphabetical).
  static Vocabulary build_from_texts(const std::vector<std::string>& texts, std::size_t min_count = 1);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;  // throws IndexError when absent
  const std::string& token(int id) const;
  const SpecialTokens& specials() const noexcept { return specials_; }

  int cls_id() const noexcept { return cls_; }
  int sep_id() const noexcept { return sep_; }
  int pad_id() const noexcept { return pad_; }
  int unk_id() const noexcept { return unk_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  SpecialTokens specials_;
  int cls_ = 0, sep_ = 0, pad_ = 0, unk_ = 0;
};

struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> segment_ids;
  std::vector<std::uint8_t> attention_mask;
  /// Byte offsets [start, end) into the source text; specials and padding get {0, 0}.
  std::vector<std::pair<std::size_t, std::size_t>> surface_spans;
  /// Tokens removed by truncation.
  std::size_t truncated = 0;

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t unpadded_length() const;
};

class StopwordList {
 public:
  StopwordList(std::unordered_set<std::string> words, std::filesystem::path source = {});
  /// One word per line; blank lines and lines starting with '#' are ignored.
  static StopwordList load(const std::filesystem::path& path);

  bool contains(std::string_view word) const;  // case-insensitive
  std::size_t size() const noexcept { return words_.size(); }
  const std::filesystem::path& source() const noexcept { return source_; }

 private:
  std::unordered_set<std::string> words_;
  std::filesystem::path source_;
};

std::string to_lower_ascii(std::string_view text);
/// Lowercases and collapses runs of whitespace to one space, trimming ends.
std::string normalize_text(std::string_view text);
/// Lowercase words: maximal runs of alphanumerics/apostrophes (and non-ASCII bytes).
std::vector<std::string> word_tokens(std::string_view text);
std::vector<std::string> whitespace_split(std::string_view text);

/// Greedy longest-prefix subword tokenization. Words are whitespace separated
/// and every ASCII punctuation character is its own word. A word that cannot
/// be fully covered by vocabulary pieces becomes the unknown token.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);

/// Rebuilds the normalized surface text from token spans.
std::string detokenize_surface(const TokenSequence& seq, std::string_view text);

/// [CLS] a [SEP] (b [SEP])?, padded to max_len. When too long, tokens are
/// dropped from the tail of whichever part is currently longer (a on ties).
TokenSequence encode_pair(std::string_view a, const std::optional<std::string>& b, const Vocabulary& vocab,
                          std::size_t max_len);

/// A sequence holding a single separator; used to fill missing context slots.
TokenSequence separator_only(const Vocabulary& vocab, std::size_t max_len);

}  // namespace inject
