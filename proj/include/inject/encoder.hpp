#pragma once

// Post-norm transformer encoder (embeddings, multi-head attention, feed-forward
// blocks, first-token pooler).
//
// Parameter names follow the common BERT checkpoint layout so externally
// converted weights load by name:
//   embeddings.{word_embeddings,position_embeddings,token_type_embeddings}.weight
//   embeddings.LayerNorm.{weight,bias}
//   encoder.layer.<i>.attention.self.{query,key,value}.{weight,bias}
//   encoder.layer.<i>.attention.output.dense.{weight,bias}
//   encoder.layer.<i>.attention.output.LayerNorm.{weight,bias}
//   encoder.layer.<i>.intermediate.dense.{weight,bias}
//   encoder.layer.<i>.output.dense.{weight,bias}
//   encoder.layer.<i>.output.LayerNorm.{weight,bias}
//   pooler.dense.{weight,bias}
// Linear weights are stored [out, in].

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "inject/archive.hpp"
#include "inject/rng.hpp"
#include "inject/tensor.hpp"
#include "inject/text.hpp"

namespace inject {

struct EncoderConfig {
  int num_layers = 2;
  int num_heads = 2;
  int hidden_size = 32;
  int ff_size = 64;
  int max_seq_len = 16;
  int vocab_size = 0;
  int type_vocab_size = 2;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;

  int head_dim() const { return hidden_size / num_heads; }
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Per-call forward settings. Dropout is active only when training.
struct ForwardMode {
  bool training = false;
  Rng* dropout_rng = nullptr;
  bool trace = false;
};

/// A batch of equally long token sequences laid out [batch, seq].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;
  std::vector<int> segment_ids;
  std::vector<std::uint8_t> mask;

  static TokenBatch stack(const std::vector<TokenSequence>& seqs);
  /// Keep-mask over key positions shaped [batch, 1, 1, seq] for attention scores.
  Mask key_mask() const;
};

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
  double eps = 1e-12;
  Tensor operator()(const Tensor& x) const;
};

/// Attention sublayer: projections, output dense and the residual norm.
struct AttentionParams {
  Linear query, key, value, output;
  LayerNormParams norm;
};

struct FeedForwardParams {
  Linear intermediate, output;
  LayerNormParams norm;
};

struct EncoderLayerParams {
  AttentionParams attention;
  FeedForwardParams ffn;
};

struct EmbeddingParams {
  Tensor word, position, segment;
  LayerNormParams norm;
};

struct AttentionResult {
  Tensor out;      // [batch, q_len, d], after the output projection
  Tensor weights;  // [batch, heads, q_len, kv_len]
  Tensor values;   // [batch, heads, kv_len, head_dim], value projections
};

struct LayerActivations {
  Tensor hidden;         // layer output
  Tensor self_attn_out;  // post-attention sublayer state, before the FFN
  Tensor attn_weights;
  Tensor attn_values;
};

Linear make_linear(int in, int out, double init_std, Rng& rng);
LayerNormParams make_layer_norm(int width, double eps);
AttentionParams make_attention(const EncoderConfig& cfg, Rng& rng);
FeedForwardParams make_feed_forward(const EncoderConfig& cfg, Rng& rng);

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const Linear& l);
void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const LayerNormParams& n);
/// Names: prefix + "self.{query,key,value}", "output.dense", "output.LayerNorm".
void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const AttentionParams& a);
void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const FeedForwardParams& f);

Tensor embed(const TokenBatch& batch, const EmbeddingParams& params, const EncoderConfig& cfg, ForwardMode& mode);

/// softmax(Q K^T / sqrt(d/H) | mask) V over heads, then the output projection.
/// q_src == kv_src gives self-attention.
AttentionResult multi_head_attention(const Tensor& q_src, const Tensor& kv_src, const Mask& kv_mask,
                                     const AttentionParams& params, const EncoderConfig& cfg, ForwardMode& mode);

/// norm(q_src + dropout(attention(q_src, kv_src)))
Tensor attention_sublayer(const Tensor& q_src, const Tensor& kv_src, const Mask& kv_mask, const AttentionParams& params,
                          const EncoderConfig& cfg, ForwardMode& mode, AttentionResult* trace = nullptr);

/// norm(x + dropout(W2 gelu(W1 x)))
Tensor feed_forward_sublayer(const Tensor& x, const FeedForwardParams& params, const EncoderConfig& cfg,
                             ForwardMode& mode);

LayerActivations encoder_layer_forward(const Tensor& hidden, const Mask& mask, const EncoderLayerParams& params,
                                       const EncoderConfig& cfg, ForwardMode& mode);

/// tanh(W h[:, 0] + b)
Tensor pool_first_token(const Tensor& hidden, const Linear& pooler);

class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Rng& rng, bool with_pooler = true);

  const EncoderConfig& config() const noexcept { return cfg_; }
  const EmbeddingParams& embeddings() const noexcept { return embeddings_; }
  const std::vector<EncoderLayerParams>& layers() const noexcept { return layers_; }
  const std::optional<Linear>& pooler() const noexcept { return pooler_; }

  struct Output {
    Tensor hidden;  // final layer
    std::vector<LayerActivations> layers;  // filled when mode.trace
  };

  /// Runs embeddings and every layer.
  Output forward(const TokenBatch& batch, ForwardMode& mode) const;
  Tensor pool(const Tensor& hidden) const;

  std::vector<NamedTensor> named_parameters(const std::string& prefix = {}) const;

 private:
  EncoderConfig cfg_;
  EmbeddingParams embeddings_;
  std::vector<EncoderLayerParams> layers_;
  std::optional<Linear> pooler_;
};

}  // namespace inject
