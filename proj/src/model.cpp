#include "inject/model.hpp"

#include <nlohmann/json.hpp>

#include "inject/errors.hpp"
#include "inject/ops.hpp"

namespace inject {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::bert: return "bert";
    case ModelKind::bert_target: return "bert-target";
    case ModelKind::bert_context: return "bert-context";
    case ModelKind::inject: return "inject";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "bert") return ModelKind::bert;
  if (name == "bert-target" || name == "bert_target") return ModelKind::bert_target;
  if (name == "bert-context" || name == "bert_context") return ModelKind::bert_context;
  if (name == "inject") return ModelKind::inject;
  throw ContractError("unknown model kind '" + name + "'");
}

void InjectConfig::validate() const {
  encoder.validate();
  const int j = resolved_inject_layer();
  if (j < 1 || j > encoder.num_layers)
    throw ContractError("inject_layer " + std::to_string(j) + " outside [1, " + std::to_string(encoder.num_layers) + "]");
  if (num_contexts < 1) throw ContractError("num_contexts must be >= 1");
  if (num_labels < 2) throw ContractError("num_labels must be >= 2");
}

void to_json(nlohmann::json& j, const InjectConfig& c) {
  j = {{"encoder", c.encoder},
       {"inject_layer", c.resolved_inject_layer()},
       {"num_contexts", c.num_contexts},
       {"num_labels", c.num_labels}};
}

void from_json(const nlohmann::json& j, InjectConfig& c) {
  InjectConfig d;
  c.encoder = j.value("encoder", d.encoder);
  c.inject_layer = j.value("inject_layer", d.inject_layer);
  c.num_contexts = j.value("num_contexts", d.num_contexts);
  c.num_labels = j.value("num_labels", d.num_labels);
}

Tensor context_inject_block(const Tensor& input_self_attn, const Tensor& context_self_attn, const Mask& input_mask,
                            const AttentionParams& inject_params, const FeedForwardParams& ffn,
                            const EncoderConfig& cfg, ForwardMode& mode, AttentionResult* trace) {
  Tensor crossed = attention_sublayer(context_self_attn, input_self_attn, input_mask, inject_params, cfg, mode, trace);
  return feed_forward_sublayer(crossed, ffn, cfg, mode);
}

InputInjectResult input_inject_block(const std::vector<Tensor>& context_hidden, const Tensor& input_self_attn,
                                     const std::vector<Mask>& context_masks, const AttentionParams& inject_params,
                                     const FeedForwardParams& ffn, const EncoderConfig& cfg, ForwardMode& mode) {
  if (context_hidden.empty()) throw ContractError("input_inject_block: empty context list");
  if (context_masks.size() != context_hidden.size())
    throw ContractError("input_inject_block: " + std::to_string(context_masks.size()) + " masks for " +
                        std::to_string(context_hidden.size()) + " contexts");
  InputInjectResult result;
  for (std::size_t k = 0; k < context_hidden.size(); ++k) {
    AttentionResult attn =
        multi_head_attention(input_self_attn, context_hidden[k], context_masks[k], inject_params, cfg, mode);
    result.cross_attn.push_back(attn.out);
    if (mode.trace) result.traces.push_back(std::move(attn));
  }
  result.cross_attn_mean = ops::mean_of(result.cross_attn);
  Tensor merged = ops::add(input_self_attn,
                           ops::dropout(result.cross_attn_mean, cfg.dropout_rate, mode.training, mode.dropout_rng));
  result.hidden = feed_forward_sublayer(inject_params.norm(merged), ffn, cfg, mode);
  return result;
}

InjectModel::InjectModel(const InjectConfig& cfg, Rng& rng)
    : cfg_((cfg.validate(), cfg)),
      input_encoder_(cfg.encoder, rng, /*with_pooler=*/true),
      context_encoder_(cfg.encoder, rng, /*with_pooler=*/false),
      context_inject_(make_attention(cfg.encoder, rng)),
      input_inject_(make_attention(cfg.encoder, rng)),
      classifier_(make_linear(cfg.encoder.hidden_size, cfg.num_labels, cfg.encoder.init_std, rng)) {}

DualForwardState InjectModel::forward(const ModelInput& input, ForwardMode& mode) const {
  const auto m = static_cast<std::size_t>(cfg_.num_contexts);
  if (input.contexts.size() != m)
    throw ContractError("inject forward: expected " + std::to_string(m) + " contexts, got " +
                        std::to_string(input.contexts.size()));
  const EncoderConfig& ecfg = cfg_.encoder;
  const auto j = static_cast<std::size_t>(cfg_.resolved_inject_layer());
  const auto& in_layers = input_encoder_.layers();
  const auto& ctx_layers = context_encoder_.layers();

  DualForwardState state;
  const Mask input_mask = input.input.key_mask();
  std::vector<Mask> context_masks;
  for (const auto& c : input.contexts) {
    if (c.batch != input.input.batch)
      throw DimensionError("inject forward: context batch " + std::to_string(c.batch) + " vs input batch " +
                           std::to_string(input.input.batch));
    context_masks.push_back(c.key_mask());
  }
  if (mode.trace) state.context_layers.resize(m);

  Tensor x = embed(input.input, input_encoder_.embeddings(), ecfg, mode);
  std::vector<Tensor> ctx;
  for (const auto& c : input.contexts) ctx.push_back(embed(c, context_encoder_.embeddings(), ecfg, mode));

  for (std::size_t l = 0; l + 1 < j; ++l) {
    LayerActivations act = encoder_layer_forward(x, input_mask, in_layers[l], ecfg, mode);
    x = act.hidden;
    if (mode.trace) state.input_layers.push_back(std::move(act));
    for (std::size_t k = 0; k < m; ++k) {
      LayerActivations cact = encoder_layer_forward(ctx[k], context_masks[k], ctx_layers[l], ecfg, mode);
      ctx[k] = cact.hidden;
      if (mode.trace) state.context_layers[k].push_back(std::move(cact));
    }
  }

  // Inject layer: both encoders run self-attention, then the paired inject blocks.
  const std::size_t li = j - 1;
  AttentionResult input_attn;
  state.input_self_attn = attention_sublayer(x, x, input_mask, in_layers[li].attention, ecfg, mode, &input_attn);
  for (std::size_t k = 0; k < m; ++k) {
    AttentionResult cattn;
    Tensor e_cs = attention_sublayer(ctx[k], ctx[k], context_masks[k], ctx_layers[li].attention, ecfg, mode, &cattn);
    state.context_self_attn.push_back(e_cs);
    AttentionResult inject_trace;
    Tensor h_c = context_inject_block(state.input_self_attn, e_cs, input_mask, context_inject_, ctx_layers[li].ffn, ecfg,
                                      mode, &inject_trace);
    state.context_hidden.push_back(h_c);
    if (mode.trace) {
      state.context_layers[k].push_back(LayerActivations{h_c, e_cs, cattn.weights, cattn.values});
      state.context_inject_attention.push_back(std::move(inject_trace));
    }
  }
  InputInjectResult injected = input_inject_block(state.context_hidden, state.input_self_attn, context_masks,
                                                  input_inject_, in_layers[li].ffn, ecfg, mode);
  state.input_cross_attn = injected.cross_attn;
  state.input_cross_attn_mean = injected.cross_attn_mean;
  state.input_hidden = injected.hidden;
  if (mode.trace) {
    state.input_layers.push_back(
        LayerActivations{injected.hidden, state.input_self_attn, input_attn.weights, input_attn.values});
    state.input_inject_attention = std::move(injected.traces);
  }

  x = injected.hidden;
  ctx = state.context_hidden;
  for (std::size_t l = j; l < in_layers.size(); ++l) {
    LayerActivations act = encoder_layer_forward(x, input_mask, in_layers[l], ecfg, mode);
    x = act.hidden;
    if (mode.trace) state.input_layers.push_back(std::move(act));
    // Post-inject context layers do not reach the head; they run to keep both stacks complete.
    for (std::size_t k = 0; k < m; ++k) {
      LayerActivations cact = encoder_layer_forward(ctx[k], context_masks[k], ctx_layers[l], ecfg, mode);
      ctx[k] = cact.hidden;
      if (mode.trace) state.context_layers[k].push_back(std::move(cact));
    }
  }

  Tensor pooled = input_encoder_.pool(x);
  state.logits = classifier_(ops::dropout(pooled, ecfg.dropout_rate, mode.training, mode.dropout_rng));
  return state;
}

Tensor InjectModel::logits(const ModelInput& input, ForwardMode& mode) const { return forward(input, mode).logits; }

std::vector<NamedTensor> InjectModel::named_parameters() const {
  std::vector<NamedTensor> out = input_encoder_.named_parameters("input_encoder.");
  auto ctx = context_encoder_.named_parameters("context_encoder.");
  out.insert(out.end(), ctx.begin(), ctx.end());
  append_params(out, "inject_context.", context_inject_);
  append_params(out, "inject_input.", input_inject_);
  append_params(out, "head.classifier", classifier_);
  return out;
}

BaselineModel::BaselineModel(ModelKind kind, const InjectConfig& cfg, Rng& rng)
    : kind_(kind),
      cfg_((cfg.validate(), cfg)),
      encoder_(cfg.encoder, rng, /*with_pooler=*/true),
      classifier_(make_linear(cfg.encoder.hidden_size, cfg.num_labels, cfg.encoder.init_std, rng)) {
  if (kind == ModelKind::inject) throw ContractError("BaselineModel cannot be of kind inject");
}

Tensor BaselineModel::logits_traced(const ModelInput& input, ForwardMode& mode,
                                    std::vector<LayerActivations>* layers) const {
  Encoder::Output out = encoder_.forward(input.input, mode);
  if (layers) *layers = std::move(out.layers);
  Tensor pooled = encoder_.pool(out.hidden);
  return classifier_(ops::dropout(pooled, cfg_.encoder.dropout_rate, mode.training, mode.dropout_rng));
}

Tensor BaselineModel::logits(const ModelInput& input, ForwardMode& mode) const {
  return logits_traced(input, mode, nullptr);
}

std::vector<NamedTensor> BaselineModel::named_parameters() const {
  std::vector<NamedTensor> out = encoder_.named_parameters("input_encoder.");
  append_params(out, "head.classifier", classifier_);
  return out;
}

std::unique_ptr<StanceClassifier> make_model(ModelKind kind, const InjectConfig& cfg, Rng& rng) {
  if (kind == ModelKind::inject) return std::make_unique<InjectModel>(cfg, rng);
  return std::make_unique<BaselineModel>(kind, cfg, rng);
}

}  // namespace inject
