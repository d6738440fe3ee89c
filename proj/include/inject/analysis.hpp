#pragma once

// Norm-based attention attribution, log-odds token relevance and the
// correlation report that ties them together.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inject/dataset.hpp"
#include "inject/model.hpp"

namespace inject {

enum class AttentionKind { self_attention, cross_attention };
std::string to_string(AttentionKind kind);

/// Score of query i = sum over heads h and keys j of
///   weights[h][i][j] * || values[h][j] . W_O[:, h-th head block]^T ||
/// (output bias excluded). Queries with query_keep[i] == 0 score exactly 0.
///   weights:  [heads, q_len, kv_len]
///   values:   [heads, kv_len, head_dim]
///   w_output: [hidden, heads * head_dim], row-major
std::vector<double> norm_attribution_scores(std::span<const double> weights, std::span<const double> values,
                                            std::span<const double> w_output, std::size_t heads, std::size_t q_len,
                                            std::size_t kv_len, std::size_t head_dim, std::size_t hidden,
                                            std::span<const std::uint8_t> query_keep);

struct AttributionRecord {
  std::string instance_id;
  std::string model;
  AttentionKind kind = AttentionKind::self_attention;
  int layer = 0;
  /// Unpadded input tokens and their scores.
  std::vector<std::string> tokens;
  std::vector<double> scores;
  /// Scores over the full padded sequence (zeros on padding).
  std::vector<double> padded_scores;
};

/// Traces one forward pass of `instance` and scores the input tokens at
/// 1-based `layer`. Cross kind reads the input inject block (dual encoder only,
/// inject layer only) and averages over contexts; other combinations raise
/// ContractError.
AttributionRecord attention_norm_attribution(const StanceClassifier& model, const StanceInstance& instance,
                                             const Vocabulary& vocab, int layer, AttentionKind kind,
                                             const std::string& model_name = {});

struct RelevanceOptions {
  /// Added to every count cell; 0 disables smoothing (undefined cells are
  /// then skipped).
  double smoothing = 0.5;
  /// Tokens with fewer total occurrences are left out.
  std::size_t min_count = 5;
};

struct RelevanceTable {
  std::map<std::string, double> relevance;
  RelevanceOptions options;
};

/// ln[(c(t,p) / c(not t,p)) / (c(t,not p) / c(not t,not p))] after smoothing;
/// nullopt when a cell is zero and smoothing is off.
std::optional<double> log_odds_ratio(double t_in_p, double other_in_p, double t_out_p, double other_out_p,
                                     double smoothing);

/// r(t) = max over property values p of the log odds ratio of token t, with
/// counts over token occurrences. Needs at least two property values.
RelevanceTable token_property_relevance(const std::vector<std::vector<std::string>>& documents,
                                        const std::vector<std::string>& property, const RelevanceOptions& options = {});

/// Sample Pearson r; zero variance raises ContractError.
double pearson_correlation(std::span<const double> x, std::span<const double> y);

/// Wordpiece token strings of the instance text (no special tokens).
std::vector<std::string> text_tokens(const std::string& text, const Vocabulary& vocab);

enum class CorrelationLevel { token_type, token_occurrence };

struct CorrelationEntry {
  std::string model;
  std::optional<double> self_target;
  std::optional<double> self_label;
  std::size_t target_points = 0;
  std::size_t label_points = 0;
};

/// Correlates attribution scores with relevance over tokens present in both.
/// Type level averages each token's scores over its occurrences. Special
/// tokens are ignored. Undefined correlations are left empty.
std::optional<double> attribution_relevance_correlation(const std::vector<AttributionRecord>& records,
                                                        const RelevanceTable& relevance, CorrelationLevel level,
                                                        std::size_t* points = nullptr);

struct ReportOptions {
  std::string dataset = "dataset";
  CorrelationLevel level = CorrelationLevel::token_type;
  /// Per-instance SVG charts written for at most this many instances per model.
  std::size_t max_plots = 8;
};

struct AttributionReport {
  std::vector<CorrelationEntry> correlations;
};

/// Writes attributions.jsonl rows {instance_id, model, token, score},
/// summary.json with correlations x100 per model, and SVG bar charts.
AttributionReport write_attribution_report(const std::filesystem::path& out_dir,
                                           const std::map<std::string, std::vector<AttributionRecord>>& by_model,
                                           const RelevanceTable& target_relevance,
                                           const RelevanceTable& label_relevance, const ReportOptions& options = {});

/// Minimal SVG bar chart.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values);

}  // namespace inject
