#pragma once

// Context retrieval from structured sources: a weighted concept graph searched
// for single-edge paths, and a store of causal relations ranked by embedding
// cosine similarity.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "inject/encoder.hpp"
#include "inject/text.hpp"

namespace inject {

enum class ContextSource { concept_graph, causal, prompt };

/// "conceptnet", "causenet", "prompt"
std::string to_string(ContextSource source);
/// Accepts the names above plus "concept_graph" and "causal".
ContextSource parse_context_source(const std::string& name);

struct ContextCandidate {
  std::string text;
  double score = 0.0;
  ContextSource source = ContextSource::concept_graph;
  std::string provenance;
};

struct ConceptEdge {
  std::string start;
  std::string end;
  std::string text;
  double weight = 0.0;
};

struct ConceptGraphLoadStats {
  std::size_t lines = 0;
  std::size_t kept = 0;
  std::size_t dropped_no_text = 0;
  std::size_t dropped_stopword = 0;
};

/// Lowercases, maps '_' to ' ' and collapses whitespace.
std::string normalize_concept(std::string_view raw);

class ConceptGraph {
 public:
  /// Throws ContractError for empty text, empty endpoints, or a negative or
  /// non-finite weight.
  void add_edge(ConceptEdge edge);

  const std::set<std::string>& concepts() const noexcept { return concepts_; }
  const std::vector<ConceptEdge>& edges() const noexcept { return edges_; }
  /// Concepts containing `token` as one of their words.
  const std::set<std::string>& concepts_with_token(const std::string& token) const;
  /// Indices into edges() of edges starting or ending at `concept_name`.
  const std::vector<std::size_t>& edges_of(const std::string& concept_name) const;

  /// Lines: start<TAB>end<TAB>relation_text<TAB>weight. Edges without text or
  /// touching a stopword concept are dropped and counted.
  static ConceptGraph parse(std::istream& in, const std::string& source_name, const StopwordList& stopwords,
                            ConceptGraphLoadStats* stats = nullptr);
  static ConceptGraph load(const std::filesystem::path& path, const StopwordList& stopwords,
                           ConceptGraphLoadStats* stats = nullptr);

 private:
  std::set<std::string> concepts_;
  std::vector<ConceptEdge> edges_;
  std::map<std::string, std::set<std::string>> token_index_;
  std::map<std::string, std::vector<std::size_t>> edge_index_;
};

/// Joins the relation texts of a path with single spaces.
std::string linearize_path(std::span<const ConceptEdge> path);

/// True when the concept's words occur as a contiguous run of `tokens`.
bool concept_occurs_in(const std::vector<std::string>& concept_words, const std::vector<std::string>& tokens);

/// Single-edge paths whose start or end concept occurs in the text or target
/// tokens, ranked by weight descending then text ascending; repeated texts are
/// kept once at their best rank.
std::vector<ContextCandidate> conceptgraph_retrieve(const std::vector<std::string>& text_tokens,
                                                    const std::vector<std::string>& target_tokens,
                                                    const ConceptGraph& graph, std::size_t k);

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  /// Unit-norm vectors of dimension(), one per text.
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string name() const = 0;
};

/// Bag of lowercase words hashed into a fixed number of buckets (FNV-1a),
/// L2-normalized. Texts without words hash a fixed placeholder word.
class HashingEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit HashingEmbeddingBackend(std::size_t dimension = 256);
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const override;
  std::size_t dimension() const override { return dimension_; }
  std::string name() const override;

 private:
  std::size_t dimension_;
};

/// Mean of the final hidden states over unpadded positions, L2-normalized.
class EncoderEmbeddingBackend final : public EmbeddingBackend {
 public:
  EncoderEmbeddingBackend(std::shared_ptr<const Encoder> encoder, std::shared_ptr<const Vocabulary> vocab);
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const override;
  std::size_t dimension() const override;
  std::string name() const override { return "encoder-mean"; }

 private:
  std::shared_ptr<const Encoder> encoder_;
  std::shared_ptr<const Vocabulary> vocab_;
};

double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct CausalRelation {
  std::string cause;
  std::string effect;
  std::string sentence;
};

struct CausalLoadStats {
  std::size_t lines = 0;
  std::size_t kept = 0;
  std::size_t dropped_short = 0;
  std::size_t dropped_modal = 0;
};

/// At least 3 characters and not a modal verb.
bool causal_concept_allowed(std::string_view concept_name);

class CausalStore {
 public:
  /// Filters, then embeds every kept sentence. Backend failures raise
  /// BackendError and no store is produced.
  static CausalStore build(std::vector<CausalRelation> relations, const EmbeddingBackend& backend,
                           CausalLoadStats* stats = nullptr);
  /// Lines: cause<TAB>effect<TAB>sentence.
  static std::vector<CausalRelation> parse(std::istream& in, const std::string& source_name);
  static CausalStore load(const std::filesystem::path& path, const EmbeddingBackend& backend,
                          CausalLoadStats* stats = nullptr);

  const std::vector<CausalRelation>& relations() const noexcept { return relations_; }
  const std::vector<std::vector<double>>& embeddings() const noexcept { return embeddings_; }
  std::size_t size() const noexcept { return relations_.size(); }

 private:
  std::vector<CausalRelation> relations_;
  std::vector<std::vector<double>> embeddings_;
};

struct CausalRetrieval {
  std::vector<ContextCandidate> candidates;
  /// Set when k exceeded the store size and every relation was returned.
  bool k_exceeds_store = false;
};

/// Ranks relations by cosine(embed(text), relation) descending, ties by
/// sentence ascending.
CausalRetrieval causal_retrieve(const std::string& text, const CausalStore& store, const EmbeddingBackend& backend,
                                std::size_t k);

/// One line of the context cache.
struct ContextRecord {
  std::string id;
  ContextSource source = ContextSource::concept_graph;
  std::optional<std::string> dataset;
  std::vector<ContextCandidate> candidates;
};

void write_context_cache(const std::filesystem::path& path, const std::vector<ContextRecord>& records);
std::vector<ContextRecord> read_context_cache(const std::filesystem::path& path);

struct ContextLengthStat {
  std::string dataset;
  ContextSource source = ContextSource::concept_graph;
  std::size_t contexts = 0;
  double mean_tokens = 0.0;
};

/// Mean whitespace-token count of candidates per (dataset, source); rows
/// without candidates are skipped.
std::vector<ContextLengthStat> context_length_stats(const std::vector<ContextRecord>& records);

}  // namespace inject
