#pragma once

// Stance classifiers: the dual-encoder context-injection model and the
// single-encoder baselines.
//
// Checkpoint parameter prefixes: input_encoder., context_encoder.,
// inject_context., inject_input., head.

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "inject/encoder.hpp"

namespace inject {

enum class ModelKind { bert, bert_target, bert_context, inject };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct InjectConfig {
  EncoderConfig encoder;
  /// 1-based layer carrying the inject blocks; defaults to the last layer.
  int inject_layer = 0;
  int num_contexts = 2;
  int num_labels = 3;

  int resolved_inject_layer() const { return inject_layer == 0 ? encoder.num_layers : inject_layer; }
  void validate() const;
};

void to_json(nlohmann::json& j, const InjectConfig& c);
void from_json(const nlohmann::json& j, InjectConfig& c);

struct ModelInput {
  TokenBatch input;
  /// Exactly num_contexts batches for the dual encoder; empty for baselines.
  std::vector<TokenBatch> contexts;
};

class StanceClassifier {
 public:
  virtual ~StanceClassifier() = default;
  virtual Tensor logits(const ModelInput& input, ForwardMode& mode) const = 0;
  virtual std::vector<NamedTensor> named_parameters() const = 0;
  virtual ModelKind kind() const = 0;
  virtual const InjectConfig& config() const = 0;
};

/// Named activations of one dual-encoder forward pass.
struct DualForwardState {
  Tensor input_self_attn;                  // e_(X,s): input self-attention output at the inject layer
  std::vector<Tensor> context_self_attn;   // e_(C,s) per context
  std::vector<Tensor> context_hidden;      // h_C per context
  std::vector<Tensor> input_cross_attn;    // e_(X,c) per context
  Tensor input_cross_attn_mean;            // mean of input_cross_attn
  Tensor input_hidden;                     // h_X
  Tensor logits;                           // [batch, num_labels]

  // Filled when tracing.
  std::vector<LayerActivations> input_layers;
  std::vector<std::vector<LayerActivations>> context_layers;
  std::vector<AttentionResult> context_inject_attention;
  std::vector<AttentionResult> input_inject_attention;
};

/// Cross-attention with queries from the context and keys/values from the
/// input, then residual norm and the context layer's feed-forward sublayer.
Tensor context_inject_block(const Tensor& input_self_attn, const Tensor& context_self_attn, const Mask& input_mask,
                            const AttentionParams& inject_params, const FeedForwardParams& ffn,
                            const EncoderConfig& cfg, ForwardMode& mode, AttentionResult* trace = nullptr);

struct InputInjectResult {
  Tensor hidden;                       // h_X
  std::vector<Tensor> cross_attn;      // per context
  Tensor cross_attn_mean;
  std::vector<AttentionResult> traces;
};

/// Cross-attention with queries from the input and keys/values from each
/// context's new hidden state; the per-context outputs are averaged before the
/// residual norm and the input layer's feed-forward sublayer.
InputInjectResult input_inject_block(const std::vector<Tensor>& context_hidden, const Tensor& input_self_attn,
                                     const std::vector<Mask>& context_masks, const AttentionParams& inject_params,
                                     const FeedForwardParams& ffn, const EncoderConfig& cfg, ForwardMode& mode);

class InjectModel final : public StanceClassifier {
 public:
  InjectModel(const InjectConfig& cfg, Rng& rng);

  DualForwardState forward(const ModelInput& input, ForwardMode& mode) const;
  Tensor logits(const ModelInput& input, ForwardMode& mode) const override;
  std::vector<NamedTensor> named_parameters() const override;
  ModelKind kind() const override { return ModelKind::inject; }
  const InjectConfig& config() const override { return cfg_; }

  const Encoder& input_encoder() const { return input_encoder_; }
  const Encoder& context_encoder() const { return context_encoder_; }
  const AttentionParams& context_inject() const { return context_inject_; }
  const AttentionParams& input_inject() const { return input_inject_; }

 private:
  InjectConfig cfg_;
  Encoder input_encoder_;
  Encoder context_encoder_;
  AttentionParams context_inject_;
  AttentionParams input_inject_;
  Linear classifier_;
};

/// Single encoder + pooler + dropout + linear head.
class BaselineModel final : public StanceClassifier {
 public:
  BaselineModel(ModelKind kind, const InjectConfig& cfg, Rng& rng);

  Tensor logits(const ModelInput& input, ForwardMode& mode) const override;
  /// Same as logits, also returning per-layer activations when tracing.
  Tensor logits_traced(const ModelInput& input, ForwardMode& mode, std::vector<LayerActivations>* layers) const;
  std::vector<NamedTensor> named_parameters() const override;
  ModelKind kind() const override { return kind_; }
  const InjectConfig& config() const override { return cfg_; }

  const Encoder& encoder() const { return encoder_; }

 private:
  ModelKind kind_;
  InjectConfig cfg_;
  Encoder encoder_;
  Linear classifier_;
};

std::unique_ptr<StanceClassifier> make_model(ModelKind kind, const InjectConfig& cfg, Rng& rng);

}  // namespace inject
