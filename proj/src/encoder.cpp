#include "inject/encoder.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "inject/errors.hpp"
#include "inject/ops.hpp"

namespace inject {

void EncoderConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || hidden_size < 1 || ff_size < 1 || max_seq_len < 1 || vocab_size < 1 ||
      type_vocab_size < 1)
    throw ContractError("encoder config: all sizes must be >= 1");
  if (hidden_size % num_heads != 0)
    throw ContractError("encoder config: hidden_size " + std::to_string(hidden_size) + " not divisible by " +
                        std::to_string(num_heads) + " heads");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ContractError("encoder config: dropout_rate must be in [0, 1)");
  if (layer_norm_eps <= 0.0) throw ContractError("encoder config: layer_norm_eps must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"num_layers", c.num_layers},       {"num_heads", c.num_heads},
       {"hidden_size", c.hidden_size},     {"ff_size", c.ff_size},
       {"max_seq_len", c.max_seq_len},     {"vocab_size", c.vocab_size},
       {"type_vocab_size", c.type_vocab_size}, {"dropout_rate", c.dropout_rate},
       {"layer_norm_eps", c.layer_norm_eps}, {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.num_layers = j.value("num_layers", d.num_layers);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.hidden_size = j.value("hidden_size", d.hidden_size);
  c.ff_size = j.value("ff_size", d.ff_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.type_vocab_size = j.value("type_vocab_size", d.type_vocab_size);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
  c.init_std = j.value("init_std", d.init_std);
}

TokenBatch TokenBatch::stack(const std::vector<TokenSequence>& seqs) {
  TokenBatch b;
  b.batch = seqs.size();
  if (seqs.empty()) return b;
  b.seq_len = seqs.front().size();
  for (const auto& s : seqs) {
    if (s.size() != b.seq_len)
      throw DimensionError("TokenBatch: sequences of length " + std::to_string(s.size()) + " and " +
                           std::to_string(b.seq_len));
    b.ids.insert(b.ids.end(), s.ids.begin(), s.ids.end());
    b.segment_ids.insert(b.segment_ids.end(), s.segment_ids.begin(), s.segment_ids.end());
    b.mask.insert(b.mask.end(), s.attention_mask.begin(), s.attention_mask.end());
  }
  return b;
}

Mask TokenBatch::key_mask() const { return Mask{{batch, 1, 1, seq_len}, mask}; }

Tensor Linear::operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

Tensor LayerNormParams::operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias, eps); }

namespace {

Tensor normal_tensor(Shape shape, double std, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.mutable_values()) v = std * rng.normal();
  return t;
}

}  // namespace

Linear make_linear(int in, int out, double init_std, Rng& rng) {
  return Linear{normal_tensor({static_cast<std::size_t>(out), static_cast<std::size_t>(in)}, init_std, rng),
                Tensor::zeros({static_cast<std::size_t>(out)}, true)};
}

LayerNormParams make_layer_norm(int width, double eps) {
  const auto w = static_cast<std::size_t>(width);
  return LayerNormParams{Tensor::full({w}, 1.0, true), Tensor::zeros({w}, true), eps};
}

AttentionParams make_attention(const EncoderConfig& cfg, Rng& rng) {
  const int d = cfg.hidden_size;
  AttentionParams a;
  a.query = make_linear(d, d, cfg.init_std, rng);
  a.key = make_linear(d, d, cfg.init_std, rng);
  a.value = make_linear(d, d, cfg.init_std, rng);
  a.output = make_linear(d, d, cfg.init_std, rng);
  a.norm = make_layer_norm(d, cfg.layer_norm_eps);
  return a;
}

FeedForwardParams make_feed_forward(const EncoderConfig& cfg, Rng& rng) {
  FeedForwardParams f;
  f.intermediate = make_linear(cfg.hidden_size, cfg.ff_size, cfg.init_std, rng);
  f.output = make_linear(cfg.ff_size, cfg.hidden_size, cfg.init_std, rng);
  f.norm = make_layer_norm(cfg.hidden_size, cfg.layer_norm_eps);
  return f;
}

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const Linear& l) {
  out.push_back({prefix + ".weight", l.weight});
  out.push_back({prefix + ".bias", l.bias});
}

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const LayerNormParams& n) {
  out.push_back({prefix + ".weight", n.gain});
  out.push_back({prefix + ".bias", n.bias});
}

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const AttentionParams& a) {
  append_params(out, prefix + "self.query", a.query);
  append_params(out, prefix + "self.key", a.key);
  append_params(out, prefix + "self.value", a.value);
  append_params(out, prefix + "output.dense", a.output);
  append_params(out, prefix + "output.LayerNorm", a.norm);
}

void append_params(std::vector<NamedTensor>& out, const std::string& prefix, const FeedForwardParams& f) {
  append_params(out, prefix + "intermediate.dense", f.intermediate);
  append_params(out, prefix + "output.dense", f.output);
  append_params(out, prefix + "output.LayerNorm", f.norm);
}

Tensor embed(const TokenBatch& batch, const EmbeddingParams& params, const EncoderConfig& cfg, ForwardMode& mode) {
  if (batch.seq_len > static_cast<std::size_t>(cfg.max_seq_len))
    throw DimensionError("embed: sequence length " + std::to_string(batch.seq_len) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
  const Shape lead{batch.batch, batch.seq_len};
  std::vector<int> positions(batch.batch * batch.seq_len);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % batch.seq_len);
  Tensor x = ops::embedding(params.word, batch.ids, lead);
  x = ops::add(x, ops::embedding(params.position, positions, lead));
  x = ops::add(x, ops::embedding(params.segment, batch.segment_ids, lead));
  x = params.norm(x);
  return ops::dropout(x, cfg.dropout_rate, mode.training, mode.dropout_rng);
}

namespace {

Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  return ops::permute(ops::reshape(x, {b, s, heads, d / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), s = x.dim(2), dh = x.dim(3);
  return ops::reshape(ops::permute(x, {0, 2, 1, 3}), {b, s, h * dh});
}

}  // namespace

AttentionResult multi_head_attention(const Tensor& q_src, const Tensor& kv_src, const Mask& kv_mask,
                                     const AttentionParams& params, const EncoderConfig& cfg, ForwardMode& mode) {
  if (q_src.rank() != 3 || kv_src.rank() != 3 || q_src.dim(2) != kv_src.dim(2) || q_src.dim(0) != kv_src.dim(0))
    throw DimensionError("attention: query source " + shape_str(q_src.shape()) + " and key/value source " +
                         shape_str(kv_src.shape()) + " are incompatible");
  const std::size_t batch = kv_src.dim(0), kv_len = kv_src.dim(1);
  if (kv_mask.shape != Shape{batch, 1, 1, kv_len})
    throw DimensionError("attention: mask " + shape_str(kv_mask.shape) + " does not cover key/value shape " +
                         shape_str(kv_src.shape()));
  const auto heads = static_cast<std::size_t>(cfg.num_heads);
  Tensor q = split_heads(params.query(q_src), heads);
  Tensor k = split_heads(params.key(kv_src), heads);
  Tensor v = split_heads(params.value(kv_src), heads);
  Tensor scores = ops::scale(ops::matmul(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
  Tensor weights = ops::softmax_lastdim(scores, &kv_mask);
  Tensor context = ops::matmul(ops::dropout(weights, cfg.dropout_rate, mode.training, mode.dropout_rng), v);
  return AttentionResult{params.output(merge_heads(context)), weights, v};
}

Tensor attention_sublayer(const Tensor& q_src, const Tensor& kv_src, const Mask& kv_mask, const AttentionParams& params,
                          const EncoderConfig& cfg, ForwardMode& mode, AttentionResult* trace) {
  AttentionResult attn = multi_head_attention(q_src, kv_src, kv_mask, params, cfg, mode);
  Tensor out = params.norm(ops::add(q_src, ops::dropout(attn.out, cfg.dropout_rate, mode.training, mode.dropout_rng)));
  if (trace) *trace = std::move(attn);
  return out;
}

Tensor feed_forward_sublayer(const Tensor& x, const FeedForwardParams& params, const EncoderConfig& cfg,
                             ForwardMode& mode) {
  Tensor inner = ops::gelu(params.intermediate(x));
  Tensor out = ops::dropout(params.output(inner), cfg.dropout_rate, mode.training, mode.dropout_rng);
  return params.norm(ops::add(x, out));
}

LayerActivations encoder_layer_forward(const Tensor& hidden, const Mask& mask, const EncoderLayerParams& params,
                                       const EncoderConfig& cfg, ForwardMode& mode) {
  AttentionResult attn;
  LayerActivations act;
  act.self_attn_out = attention_sublayer(hidden, hidden, mask, params.attention, cfg, mode, &attn);
  act.hidden = feed_forward_sublayer(act.self_attn_out, params.ffn, cfg, mode);
  act.attn_weights = attn.weights;
  act.attn_values = attn.values;
  return act;
}

Tensor pool_first_token(const Tensor& hidden, const Linear& pooler) {
  if (hidden.rank() != 3 || hidden.dim(1) < 1) throw DimensionError("pool_first_token: expected [batch, seq>=1, d]");
  return ops::tanh(pooler(ops::select_position(hidden, 0)));
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng, bool with_pooler) : cfg_(cfg) {
  cfg_.validate();
  const auto d = static_cast<std::size_t>(cfg_.hidden_size);
  embeddings_.word = normal_tensor({static_cast<std::size_t>(cfg_.vocab_size), d}, cfg_.init_std, rng);
  embeddings_.position = normal_tensor({static_cast<std::size_t>(cfg_.max_seq_len), d}, cfg_.init_std, rng);
  embeddings_.segment = normal_tensor({static_cast<std::size_t>(cfg_.type_vocab_size), d}, cfg_.init_std, rng);
  embeddings_.norm = make_layer_norm(cfg_.hidden_size, cfg_.layer_norm_eps);
  for (int i = 0; i < cfg_.num_layers; ++i) {
    EncoderLayerParams layer;
    layer.attention = make_attention(cfg_, rng);
    layer.ffn = make_feed_forward(cfg_, rng);
    layers_.push_back(std::move(layer));
  }
  if (with_pooler) pooler_ = make_linear(cfg_.hidden_size, cfg_.hidden_size, cfg_.init_std, rng);
}

Encoder::Output Encoder::forward(const TokenBatch& batch, ForwardMode& mode) const {
  Output out;
  const Mask mask = batch.key_mask();
  Tensor h = embed(batch, embeddings_, cfg_, mode);
  for (const auto& layer : layers_) {
    LayerActivations act = encoder_layer_forward(h, mask, layer, cfg_, mode);
    h = act.hidden;
    if (mode.trace) out.layers.push_back(std::move(act));
  }
  out.hidden = h;
  return out;
}

Tensor Encoder::pool(const Tensor& hidden) const {
  if (!pooler_) throw ContractError("encoder built without a pooler");
  return pool_first_token(hidden, *pooler_);
}

std::vector<NamedTensor> Encoder::named_parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  out.push_back({prefix + "embeddings.word_embeddings.weight", embeddings_.word});
  out.push_back({prefix + "embeddings.position_embeddings.weight", embeddings_.position});
  out.push_back({prefix + "embeddings.token_type_embeddings.weight", embeddings_.segment});
  append_params(out, prefix + "embeddings.LayerNorm", embeddings_.norm);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string lp = prefix + "encoder.layer." + std::to_string(i) + ".";
    append_params(out, lp + "attention.", layers_[i].attention);
    append_params(out, lp, layers_[i].ffn);
  }
  if (pooler_) append_params(out, prefix + "pooler.dense", *pooler_);
  return out;
}

}  // namespace inject
