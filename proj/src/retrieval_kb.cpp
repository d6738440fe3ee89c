#include "inject/retrieval_kb.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "inject/errors.hpp"
#include "inject/io.hpp"
#include "inject/ops.hpp"

namespace inject {

std::string to_string(ContextSource source) {
  switch (source) {
    case ContextSource::concept_graph: return "conceptnet";
    case ContextSource::causal: return "causenet";
    case ContextSource::prompt: return "prompt";
  }
  return "unknown";
}

ContextSource parse_context_source(const std::string& name) {
  if (name == "conceptnet" || name == "concept_graph") return ContextSource::concept_graph;
  if (name == "causenet" || name == "causal") return ContextSource::causal;
  if (name == "prompt") return ContextSource::prompt;
  throw ContractError("unknown context source '" + name + "'");
}

std::string normalize_concept(std::string_view raw) {
  std::string s(raw);
  std::replace(s.begin(), s.end(), '_', ' ');
  return normalize_text(s);
}

namespace {

const std::set<std::string> kEmptyConcepts;
const std::vector<std::size_t> kNoEdges;

double parse_weight(const std::string& field, const std::string& source, std::size_t line) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw ParseError(source, line, "weight '" + field + "' is not a number");
  return value;
}

}  // namespace

void ConceptGraph::add_edge(ConceptEdge edge) {
  if (edge.text.empty()) throw ContractError("concept edge without relation text");
  if (edge.start.empty() || edge.end.empty()) throw ContractError("concept edge with an empty endpoint");
  if (!std::isfinite(edge.weight) || edge.weight < 0.0)
    throw ContractError("concept edge weight must be finite and nonnegative, got " + std::to_string(edge.weight));
  for (const std::string* c : {&edge.start, &edge.end}) {
    if (concepts_.insert(*c).second) {
      for (const auto& w : word_tokens(*c)) token_index_[w].insert(*c);
    }
  }
  const std::size_t idx = edges_.size();
  edge_index_[edge.start].push_back(idx);
  if (edge.end != edge.start) edge_index_[edge.end].push_back(idx);
  edges_.push_back(std::move(edge));
}

const std::set<std::string>& ConceptGraph::concepts_with_token(const std::string& token) const {
  auto it = token_index_.find(token);
  return it == token_index_.end() ? kEmptyConcepts : it->second;
}

const std::vector<std::size_t>& ConceptGraph::edges_of(const std::string& concept_name) const {
  auto it = edge_index_.find(concept_name);
  return it == edge_index_.end() ? kNoEdges : it->second;
}

ConceptGraph ConceptGraph::parse(std::istream& in, const std::string& source_name, const StopwordList& stopwords,
                                 ConceptGraphLoadStats* stats) {
  ConceptGraph graph;
  ConceptGraphLoadStats local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++local.lines;
    const auto fields = split_tabs(line);
    if (fields.size() != 4)
      throw ParseError(source_name, line_no, "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    ConceptEdge edge{normalize_concept(fields[0]), normalize_concept(fields[1]), normalize_text(fields[2]),
                     parse_weight(fields[3], source_name, line_no)};
    if (edge.start.empty() || edge.end.empty()) throw ParseError(source_name, line_no, "empty concept");
    if (!std::isfinite(edge.weight) || edge.weight < 0.0)
      throw ParseError(source_name, line_no, "weight must be finite and nonnegative");
    if (edge.text.empty()) {
      ++local.dropped_no_text;
      continue;
    }
    if (stopwords.contains(edge.start) || stopwords.contains(edge.end)) {
      ++local.dropped_stopword;
      continue;
    }
    graph.add_edge(std::move(edge));
    ++local.kept;
  }
  if (stats) *stats = local;
  return graph;
}

ConceptGraph ConceptGraph::load(const std::filesystem::path& path, const StopwordList& stopwords,
                                ConceptGraphLoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open concept graph " + path.string());
  return parse(in, path.string(), stopwords, stats);
}

std::string linearize_path(std::span<const ConceptEdge> path) {
  std::string out;
  for (const auto& edge : path) {
    if (!out.empty()) out.push_back(' ');
    out += edge.text;
  }
  return out;
}

bool concept_occurs_in(const std::vector<std::string>& concept_words, const std::vector<std::string>& tokens) {
  if (concept_words.empty() || concept_words.size() > tokens.size()) return false;
  return std::search(tokens.begin(), tokens.end(), concept_words.begin(), concept_words.end()) != tokens.end();
}

std::vector<ContextCandidate> conceptgraph_retrieve(const std::vector<std::string>& text_tokens,
                                                    const std::vector<std::string>& target_tokens,
                                                    const ConceptGraph& graph, std::size_t k) {
  if (k == 0) throw ContractError("conceptgraph_retrieve: k must be at least 1");
  std::set<std::string> matched;
  for (const auto* tokens : {&text_tokens, &target_tokens}) {
    for (const auto& tok : *tokens) {
      for (const auto& concept_name : graph.concepts_with_token(tok)) {
        if (matched.count(concept_name)) continue;
        if (concept_occurs_in(word_tokens(concept_name), *tokens)) matched.insert(concept_name);
      }
    }
  }
  std::set<std::size_t> edge_ids;
  for (const auto& concept_name : matched) {
    const auto& ids = graph.edges_of(concept_name);
    edge_ids.insert(ids.begin(), ids.end());
  }

  std::vector<ContextCandidate> all;
  for (std::size_t idx : edge_ids) {
    const ConceptEdge& edge = graph.edges()[idx];
    all.push_back({linearize_path(std::span<const ConceptEdge>(&edge, 1)), edge.weight, ContextSource::concept_graph,
                   edge.start + " -> " + edge.end});
  }
  std::sort(all.begin(), all.end(), [](const ContextCandidate& a, const ContextCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.text != b.text) return a.text < b.text;
    return a.provenance < b.provenance;
  });
  std::vector<ContextCandidate> out;
  std::set<std::string> seen;
  for (auto& c : all) {
    if (out.size() == k) break;
    if (!seen.insert(c.text).second) continue;
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void normalize_in_place(std::vector<double>& v, const std::string& what) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (!(sq > 0.0) || !std::isfinite(sq)) throw BackendError(what + ": embedding has zero or non-finite norm");
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
}

}  // namespace

HashingEmbeddingBackend::HashingEmbeddingBackend(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw ContractError("hashing embedding dimension must be positive");
}

std::string HashingEmbeddingBackend::name() const { return "hashing-" + std::to_string(dimension_); }

std::vector<std::vector<double>> HashingEmbeddingBackend::embed(const std::vector<std::string>& texts) const {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<double> v(dimension_, 0.0);
    auto words = word_tokens(text);
    if (words.empty()) words.push_back("<empty>");
    for (const auto& w : words) v[fnv1a(w) % dimension_] += 1.0;
    normalize_in_place(v, name());
    out.push_back(std::move(v));
  }
  return out;
}

EncoderEmbeddingBackend::EncoderEmbeddingBackend(std::shared_ptr<const Encoder> encoder,
                                                 std::shared_ptr<const Vocabulary> vocab)
    : encoder_(std::move(encoder)), vocab_(std::move(vocab)) {
  if (!encoder_ || !vocab_) throw ContractError("encoder embedding backend needs an encoder and a vocabulary");
}

std::size_t EncoderEmbeddingBackend::dimension() const {
  return static_cast<std::size_t>(encoder_->config().hidden_size);
}

std::vector<std::vector<double>> EncoderEmbeddingBackend::embed(const std::vector<std::string>& texts) const {
  NoGradGuard no_grad;
  const auto max_len = static_cast<std::size_t>(encoder_->config().max_seq_len);
  const std::size_t d = dimension();
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    TokenSequence seq = normalize_text(text).empty() ? separator_only(*vocab_, max_len)
                                                     : encode_pair(text, std::nullopt, *vocab_, max_len);
    TokenBatch batch = TokenBatch::stack({seq});
    ForwardMode mode;
    const Tensor hidden = encoder_->forward(batch, mode).hidden;
    const auto& h = hidden.values();
    std::vector<double> v(d, 0.0);
    std::size_t count = 0;
    for (std::size_t t = 0; t < batch.seq_len; ++t) {
      if (!batch.mask[t]) continue;
      ++count;
      for (std::size_t j = 0; j < d; ++j) v[j] += h[t * d + j];
    }
    for (double& x : v) x /= static_cast<double>(count);
    normalize_in_place(v, name());
    out.push_back(std::move(v));
  }
  return out;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw DimensionError("cosine_similarity: dimensions " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw ContractError("cosine_similarity: undefined for a zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

namespace {

constexpr std::array<std::string_view, 9> kModalVerbs = {"must",  "shall", "will", "should", "would",
                                                        "can",   "could", "may",  "might"};

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace

bool causal_concept_allowed(std::string_view concept_name) {
  const std::string c = normalize_concept(concept_name);
  if (utf8_length(c) < 3) return false;
  return std::find(kModalVerbs.begin(), kModalVerbs.end(), c) == kModalVerbs.end();
}

CausalStore CausalStore::build(std::vector<CausalRelation> relations, const EmbeddingBackend& backend,
                               CausalLoadStats* stats) {
  CausalLoadStats local;
  local.lines = relations.size();
  CausalStore store;
  for (auto& r : relations) {
    r.cause = normalize_concept(r.cause);
    r.effect = normalize_concept(r.effect);
    if (utf8_length(r.cause) < 3 || utf8_length(r.effect) < 3) {
      ++local.dropped_short;
      continue;
    }
    if (!causal_concept_allowed(r.cause) || !causal_concept_allowed(r.effect)) {
      ++local.dropped_modal;
      continue;
    }
    if (normalize_text(r.sentence).empty()) throw ContractError("causal relation without a sentence");
    store.relations_.push_back(std::move(r));
  }
  local.kept = store.relations_.size();

  std::vector<std::string> sentences;
  for (const auto& r : store.relations_) sentences.push_back(r.sentence);
  try {
    store.embeddings_ = backend.embed(sentences);
  } catch (const std::exception& e) {
    throw BackendError("causal store: embedding backend '" + backend.name() + "' failed: " + e.what());
  }
  if (store.embeddings_.size() != store.relations_.size())
    throw BackendError("causal store: backend returned " + std::to_string(store.embeddings_.size()) +
                       " embeddings for " + std::to_string(store.relations_.size()) + " relations");
  for (const auto& e : store.embeddings_)
    if (e.size() != backend.dimension()) throw BackendError("causal store: embedding dimension mismatch");
  if (stats) *stats = local;
  return store;
}

std::vector<CausalRelation> CausalStore::parse(std::istream& in, const std::string& source_name) {
  std::vector<CausalRelation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw ParseError(source_name, line_no, "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    if (normalize_text(fields[2]).empty()) throw ParseError(source_name, line_no, "empty relation sentence");
    out.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  return out;
}

CausalStore CausalStore::load(const std::filesystem::path& path, const EmbeddingBackend& backend,
                              CausalLoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open causal relations " + path.string());
  return build(parse(in, path.string()), backend, stats);
}

CausalRetrieval causal_retrieve(const std::string& text, const CausalStore& store, const EmbeddingBackend& backend,
                                std::size_t k) {
  if (store.size() == 0) throw ContractError("causal_retrieve: empty store");
  if (k == 0) throw ContractError("causal_retrieve: k must be at least 1");
  const auto query = backend.embed({text});
  if (query.size() != 1) throw BackendError("causal_retrieve: backend returned no query embedding");

  std::vector<ContextCandidate> scored;
  scored.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& r = store.relations()[i];
    scored.push_back({r.sentence, cosine_similarity(query[0], store.embeddings()[i]), ContextSource::causal,
                      "relation " + std::to_string(i) + ": " + r.cause + " -> " + r.effect});
  }
  CausalRetrieval result;
  result.k_exceeds_store = k > scored.size();
  const std::size_t take = std::min(k, scored.size());
  auto better = [](const ContextCandidate& a, const ContextCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.text != b.text) return a.text < b.text;
    return a.provenance < b.provenance;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  scored.resize(take);
  result.candidates = std::move(scored);
  return result;
}

void write_context_cache(const std::filesystem::path& path, const std::vector<ContextRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) {
    nlohmann::json j = {{"id", r.id}, {"source", to_string(r.source)}};
    if (r.dataset) j["dataset"] = *r.dataset;
    j["candidates"] = nlohmann::json::array();
    for (const auto& c : r.candidates) {
      nlohmann::json cj = {{"text", c.text}, {"score", c.score}};
      if (!c.provenance.empty()) cj["provenance"] = c.provenance;
      j["candidates"].push_back(std::move(cj));
    }
    out << j.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<ContextRecord> read_context_cache(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<ContextRecord> records;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (normalize_text(lines[i]).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      ContextRecord r;
      r.id = j.at("id").get<std::string>();
      r.source = parse_context_source(j.at("source").get<std::string>());
      if (j.contains("dataset")) r.dataset = j.at("dataset").get<std::string>();
      for (const auto& cj : j.at("candidates")) {
        ContextCandidate c;
        c.text = cj.at("text").get<std::string>();
        c.score = cj.value("score", 0.0);
        c.source = r.source;
        c.provenance = cj.value("provenance", std::string());
        r.candidates.push_back(std::move(c));
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), i + 1, e.what());
    } catch (const ContractError& e) {
      throw ParseError(path.string(), i + 1, e.what());
    }
  }
  return records;
}

std::vector<ContextLengthStat> context_length_stats(const std::vector<ContextRecord>& records) {
  std::map<std::pair<std::string, ContextSource>, std::pair<std::size_t, std::size_t>> acc;
  for (const auto& r : records) {
    if (r.candidates.empty()) continue;
    auto& [count, tokens] = acc[{r.dataset.value_or(""), r.source}];
    for (const auto& c : r.candidates) {
      ++count;
      tokens += whitespace_split(c.text).size();
    }
  }
  std::vector<ContextLengthStat> out;
  for (const auto& [key, value] : acc) {
    out.push_back({key.first, key.second, value.first,
                   static_cast<double>(value.second) / static_cast<double>(value.first)});
  }
  return out;
}

}  // namespace inject
