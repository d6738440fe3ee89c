#include "inject/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "inject/errors.hpp"
#include "inject/io.hpp"
#include "inject/log.hpp"
#include "inject/training.hpp"

namespace inject {

std::string to_string(AttentionKind kind) { return kind == AttentionKind::self_attention ? "self" : "cross"; }

std::vector<double> norm_attribution_scores(std::span<const double> weights, std::span<const double> values,
                                            std::span<const double> w_output, std::size_t heads, std::size_t q_len,
                                            std::size_t kv_len, std::size_t head_dim, std::size_t hidden,
                                            std::span<const std::uint8_t> query_keep) {
  if (weights.size() != heads * q_len * kv_len) throw DimensionError("norm_attribution_scores: weights size");
  if (values.size() != heads * kv_len * head_dim) throw DimensionError("norm_attribution_scores: values size");
  if (w_output.size() != hidden * heads * head_dim) throw DimensionError("norm_attribution_scores: output weight size");
  if (query_keep.size() != q_len) throw DimensionError("norm_attribution_scores: query mask size");

  // norms[h][j] = || v_hj W_O[:, h block]^T ||
  std::vector<double> norms(heads * kv_len, 0.0);
  const std::size_t in_width = heads * head_dim;
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t j = 0; j < kv_len; ++j) {
      const double* v = values.data() + (h * kv_len + j) * head_dim;
      double sq = 0.0;
      for (std::size_t o = 0; o < hidden; ++o) {
        const double* w = w_output.data() + o * in_width + h * head_dim;
        double acc = 0.0;
        for (std::size_t e = 0; e < head_dim; ++e) acc += v[e] * w[e];
        sq += acc * acc;
      }
      norms[h * kv_len + j] = std::sqrt(sq);
    }
  }
  std::vector<double> scores(q_len, 0.0);
  for (std::size_t i = 0; i < q_len; ++i) {
    if (!query_keep[i]) continue;
    double s = 0.0;
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t j = 0; j < kv_len; ++j) s += weights[(h * q_len + i) * kv_len + j] * norms[h * kv_len + j];
    scores[i] = s;
  }
  return scores;
}

namespace {

std::vector<double> scores_from_trace(const Tensor& weights, const Tensor& values, const Tensor& w_output,
                                      std::span<const std::uint8_t> query_keep) {
  if (!weights.defined() || !values.defined()) throw ContractError("attribution: attention was not traced");
  if (weights.rank() != 4 || weights.dim(0) != 1 || values.rank() != 4)
    throw DimensionError("attribution: expected traced attention of a single instance");
  return norm_attribution_scores(weights.values(), values.values(), w_output.values(), weights.dim(1), weights.dim(2),
                                 weights.dim(3), values.dim(3), w_output.dim(0), query_keep);
}

}  // namespace

AttributionRecord attention_norm_attribution(const StanceClassifier& model, const StanceInstance& instance,
                                             const Vocabulary& vocab, int layer, AttentionKind kind,
                                             const std::string& model_name) {
  const InjectConfig& cfg = model.config();
  if (layer < 1 || layer > cfg.encoder.num_layers)
    throw ContractError("attribution: layer " + std::to_string(layer) + " outside [1, " +
                        std::to_string(cfg.encoder.num_layers) + "]");
  NoGradGuard no_grad;
  const ModelInput input = featurize(model.kind(), {&instance}, vocab,
                                     static_cast<std::size_t>(cfg.encoder.max_seq_len), cfg.num_contexts);
  const std::span<const std::uint8_t> keep(input.input.mask);
  ForwardMode mode{false, nullptr, true};
  const auto li = static_cast<std::size_t>(layer - 1);

  AttributionRecord record;
  record.instance_id = instance.id;
  record.model = model_name.empty() ? to_string(model.kind()) : model_name;
  record.kind = kind;
  record.layer = layer;

  if (const auto* dual = dynamic_cast<const InjectModel*>(&model)) {
    const DualForwardState state = dual->forward(input, mode);
    if (kind == AttentionKind::self_attention) {
      const auto& act = state.input_layers.at(li);
      record.padded_scores = scores_from_trace(act.attn_weights, act.attn_values,
                                               dual->input_encoder().layers()[li].attention.output.weight, keep);
    } else {
      if (layer != cfg.resolved_inject_layer())
        throw ContractError("attribution: cross-attention exists only at inject layer " +
                            std::to_string(cfg.resolved_inject_layer()));
      const auto& traces = state.input_inject_attention;
      if (traces.empty()) throw ContractError("attribution: inject attention was not traced");
      record.padded_scores.assign(keep.size(), 0.0);
      for (const auto& t : traces) {
        const auto s = scores_from_trace(t.weights, t.values, dual->input_inject().output.weight, keep);
        for (std::size_t i = 0; i < s.size(); ++i) record.padded_scores[i] += s[i];
      }
      for (double& s : record.padded_scores) s /= static_cast<double>(traces.size());
    }
  } else if (const auto* single = dynamic_cast<const BaselineModel*>(&model)) {
    if (kind == AttentionKind::cross_attention)
      throw ContractError("attribution: single-encoder models have no cross-attention");
    std::vector<LayerActivations> layers;
    single->logits_traced(input, mode, &layers);
    const auto& act = layers.at(li);
    record.padded_scores = scores_from_trace(act.attn_weights, act.attn_values,
                                             single->encoder().layers()[li].attention.output.weight, keep);
  } else {
    throw ContractError("attribution: unsupported model type");
  }

  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) continue;
    record.tokens.push_back(vocab.token(input.input.ids[i]));
    record.scores.push_back(record.padded_scores[i]);
  }
  return record;
}

std::optional<double> log_odds_ratio(double t_in_p, double other_in_p, double t_out_p, double other_out_p,
                                     double smoothing) {
  const double a = t_in_p + smoothing, b = other_in_p + smoothing, c = t_out_p + smoothing, d = other_out_p + smoothing;
  if (a <= 0.0 || b <= 0.0 || c <= 0.0 || d <= 0.0) return std::nullopt;
  return std::log((a / b) / (c / d));
}

RelevanceTable token_property_relevance(const std::vector<std::vector<std::string>>& documents,
                                        const std::vector<std::string>& property, const RelevanceOptions& options) {
  if (documents.size() != property.size())
    throw DimensionError("token_property_relevance: " + std::to_string(documents.size()) + " documents but " +
                         std::to_string(property.size()) + " property values");
  if (options.smoothing < 0.0) throw ContractError("token_property_relevance: smoothing must be nonnegative");
  std::set<std::string> values(property.begin(), property.end());
  if (values.size() < 2) throw ContractError("token_property_relevance: the property needs at least two values");

  std::map<std::string, std::map<std::string, double>> counts;  // token -> value -> count
  std::map<std::string, double> stratum_total;
  std::map<std::string, double> token_total;
  double grand_total = 0.0;
  for (std::size_t i = 0; i < documents.size(); ++i) {
    for (const auto& tok : documents[i]) {
      counts[tok][property[i]] += 1.0;
      stratum_total[property[i]] += 1.0;
      token_total[tok] += 1.0;
      grand_total += 1.0;
    }
  }

  RelevanceTable table;
  table.options = options;
  for (const auto& [tok, per_value] : counts) {
    if (token_total[tok] < static_cast<double>(options.min_count)) continue;
    std::optional<double> best;
    for (const auto& p : values) {
      auto it = per_value.find(p);
      const double t_in = it == per_value.end() ? 0.0 : it->second;
      const double other_in = stratum_total[p] - t_in;
      const double t_out = token_total[tok] - t_in;
      const double other_out = (grand_total - stratum_total[p]) - t_out;
      const auto r = log_odds_ratio(t_in, other_in, t_out, other_out, options.smoothing);
      if (r && (!best || *r > *best)) best = r;
    }
    if (best) table.relevance[tok] = *best;
  }
  return table;
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson_correlation: lengths differ");
  if (x.size() < 2) throw ContractError("pearson_correlation: need at least two points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ContractError("pearson_correlation: undefined for zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<std::string> text_tokens(const std::string& text, const Vocabulary& vocab) {
  std::vector<std::string> out;
  if (normalize_text(text).empty()) return out;
  for (int id : tokenize(text, vocab).ids) out.push_back(vocab.token(id));
  return out;
}

namespace {

bool is_special(const std::string& token) {
  const SpecialTokens s;
  return token == s.cls || token == s.sep || token == s.pad || token == s.unk;
}

}  // namespace

std::optional<double> attribution_relevance_correlation(const std::vector<AttributionRecord>& records,
                                                        const RelevanceTable& relevance, CorrelationLevel level,
                                                        std::size_t* points) {
  std::vector<double> xs, ys;
  if (level == CorrelationLevel::token_type) {
    std::map<std::string, std::pair<double, std::size_t>> by_type;
    for (const auto& r : records)
      for (std::size_t i = 0; i < r.tokens.size(); ++i) {
        if (is_special(r.tokens[i])) continue;
        auto& [sum, n] = by_type[r.tokens[i]];
        sum += r.scores[i];
        ++n;
      }
    for (const auto& [tok, acc] : by_type) {
      auto it = relevance.relevance.find(tok);
      if (it == relevance.relevance.end()) continue;
      xs.push_back(acc.first / static_cast<double>(acc.second));
      ys.push_back(it->second);
    }
  } else {
    for (const auto& r : records)
      for (std::size_t i = 0; i < r.tokens.size(); ++i) {
        if (is_special(r.tokens[i])) continue;
        auto it = relevance.relevance.find(r.tokens[i]);
        if (it == relevance.relevance.end()) continue;
        xs.push_back(r.scores[i]);
        ys.push_back(it->second);
      }
  }
  if (points) *points = xs.size();
  try {
    return pearson_correlation(xs, ys);
  } catch (const ContractError& e) {
    warn(std::string("correlation undefined: ") + e.what());
    return std::nullopt;
  }
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  if (labels.size() != values.size()) throw DimensionError("bar_chart_svg: labels and values differ in length");
  const double bar = 28.0, gap = 6.0, left = 40.0, top = 30.0, height = 200.0;
  const double width = left + static_cast<double>(values.size()) * (bar + gap) + 20.0;
  double hi = 0.0, lo = 0.0;
  for (double v : values) {
    hi = std::max(hi, v);
    lo = std::min(lo, v);
  }
  const double span = hi - lo > 0.0 ? hi - lo : 1.0;
  const double zero_y = top + height * (hi / span);
  auto escape = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out.push_back(c);
      }
    }
    return out;
  };
  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 90.0
      << "\">\n";
  svg << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << escape(title)
      << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << zero_y << "\" x2=\"" << width - 10.0 << "\" y2=\"" << zero_y
      << "\" stroke=\"#444\"/>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = left + static_cast<double>(i) * (bar + gap);
    const double h = height * std::abs(values[i]) / span;
    const double y = values[i] >= 0.0 ? zero_y - h : zero_y;
    svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar << "\" height=\"" << h
        << "\" fill=\"#4c72b0\"><title>" << escape(labels[i]) << ": " << values[i] << "</title></rect>\n";
    svg << "<text x=\"" << x + bar / 2.0 << "\" y=\"" << top + height + 14.0
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\" transform=\"rotate(-60 "
        << x + bar / 2.0 << ' ' << top + height + 14.0 << ")\">" << escape(labels[i]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

AttributionReport write_attribution_report(const std::filesystem::path& out_dir,
                                           const std::map<std::string, std::vector<AttributionRecord>>& by_model,
                                           const RelevanceTable& target_relevance,
                                           const RelevanceTable& label_relevance, const ReportOptions& options) {
  std::filesystem::create_directories(out_dir);
  std::ostringstream rows;
  AttributionReport report;
  nlohmann::json summary = {{"dataset", options.dataset},
                            {"aggregation", options.level == CorrelationLevel::token_type ? "type" : "occurrence"},
                            {"scale", 100},
                            {"correlations", nlohmann::json::object()}};
  for (const auto& [model, records] : by_model) {
    for (const auto& r : records)
      for (std::size_t i = 0; i < r.tokens.size(); ++i)
        rows << nlohmann::json{{"instance_id", r.instance_id}, {"model", model}, {"token", r.tokens[i]},
                               {"score", r.scores[i]}}
                    .dump()
             << '\n';

    CorrelationEntry entry;
    entry.model = model;
    entry.self_target = attribution_relevance_correlation(records, target_relevance, options.level, &entry.target_points);
    entry.self_label = attribution_relevance_correlation(records, label_relevance, options.level, &entry.label_points);
    auto scaled = [](const std::optional<double>& v) { return v ? nlohmann::json(*v * 100.0) : nlohmann::json(); };
    summary["correlations"][model] = {{"self*target", scaled(entry.self_target)},
                                      {"self*label", scaled(entry.self_label)},
                                      {"target_points", entry.target_points},
                                      {"label_points", entry.label_points}};
    report.correlations.push_back(entry);

    for (std::size_t n = 0; n < std::min(options.max_plots, records.size()); ++n) {
      const auto& r = records[n];
      std::string safe_id;
      for (char c : r.instance_id) safe_id.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
      write_file_atomic(out_dir / ("attribution_" + model + "_" + safe_id + ".svg"),
                        bar_chart_svg(model + " / " + r.instance_id + " (" + to_string(r.kind) + ", layer " +
                                          std::to_string(r.layer) + ")",
                                      r.tokens, r.scores));
    }
  }
  write_file_atomic(out_dir / "attributions.jsonl", rows.str());
  write_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
  return report;
}

}  // namespace inject
