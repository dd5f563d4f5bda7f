#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transbert/ops.hpp"
#include "transbert/params.hpp"
#include "transbert/rng.hpp"
#include "transbert/tensor.hpp"
#include "transbert/tokenizer.hpp"

namespace transbert {

/// Encoder geometry. Defaults are a desk-scale model; the BASE geometry is
/// 12 layers, 768 hidden, 12 heads, 3072 ffn.
struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_size = 256;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 128;
  std::size_t segment_types = 2;
  double dropout_keep = 0.9;

  /// Throws UsageError on any violated invariant.
  void validate() const;
  std::size_t head_size() const { return hidden_size / num_heads; }

  bool operator==(const ModelConfig&) const = default;
};

/// Train/eval switch plus the dropout stream (required when training with
/// dropout_keep < 1).
struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;
};

/// Lexicon encoder and transformer stack parameters, stored as one named
/// ParamSet. This is exactly the tensor set carried between stages.
template <typename T>
class EncoderParams {
 public:
  struct LayerSlots {
    std::size_t query_w, query_b, key_w, key_b, value_w, value_b, attn_out_w, attn_out_b;
    std::size_t attn_norm_gain, attn_norm_bias;
    std::size_t ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
    std::size_t ffn_norm_gain, ffn_norm_bias;
  };

  /// Weights zero, layer-norm gains one.
  explicit EncoderParams(const ModelConfig& config);

  /// Weights ~ N(0, stddev^2), biases zero, layer-norm gains one.
  static EncoderParams initialized(const ModelConfig& config, Rng& rng, double stddev = 0.02);

  const ModelConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  const BasicTensor<T>& value(std::size_t slot) const { return params_.value(slot); }
  BasicTensor<T>& value(std::size_t slot) { return params_.value(slot); }
  BasicTensor<T>& grad(std::size_t slot) { return params_.grad(slot); }

  std::size_t word_slot() const { return word_; }
  std::size_t position_slot() const { return position_; }
  std::size_t segment_slot() const { return segment_; }
  std::size_t embed_norm_gain_slot() const { return embed_norm_gain_; }
  std::size_t embed_norm_bias_slot() const { return embed_norm_bias_; }
  const LayerSlots& layer(std::size_t i) const { return layers_[i]; }

  template <typename U>
  EncoderParams<U> cast() const {
    EncoderParams<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params().value(i) = params_.value(i).template cast<U>();
    }
    return out;
  }

 private:
  ModelConfig config_;
  ParamSet<T> params_;
  std::size_t word_ = 0, position_ = 0, segment_ = 0, embed_norm_gain_ = 0, embed_norm_bias_ = 0;
  std::vector<LayerSlots> layers_;
};

/// Activations retained for the backward pass of one transformer block.
template <typename T>
struct LayerCache {
  BasicTensor<T> input;
  BasicTensor<T> query, key, value;
  BasicTensor<T> probs;  // heads x n x n, before dropout
  ops::DropoutMask<T> probs_mask;
  BasicTensor<T> context;
  ops::DropoutMask<T> attn_out_mask;
  ops::LayerNormCache<T> attn_norm;
  BasicTensor<T> attn_norm_out;
  BasicTensor<T> ffn_pre;
  BasicTensor<T> ffn_act;
  ops::DropoutMask<T> ffn_out_mask;
  ops::LayerNormCache<T> ffn_norm;
};

template <typename T>
struct EncoderCache {
  std::vector<TokenId> ids;
  std::vector<TokenId> segments;
  std::vector<TokenId> mask;
  ops::LayerNormCache<T> embed_norm;
  ops::DropoutMask<T> embed_mask;
  std::vector<LayerCache<T>> layers;
};

/// Contextual embeddings, stored position-major: row i is the d-dimensional
/// vector for position i, so `states` is the n x d transpose of V and v1 is
/// row 0.
template <typename T>
struct ContextualSequence {
  BasicTensor<T> states;

  std::size_t length() const { return states.rows(); }
  std::span<const T> v1() const { return states.row(0); }
};

/// word + position + segment embeddings per position, before normalization.
template <typename T>
BasicTensor<T> embedding_sum(const EncodedInput& input, const EncoderParams<T>& params);

/// Lexicon encoder: embedding_sum, layer norm, dropout (train mode only).
template <typename T>
BasicTensor<T> embed(const EncodedInput& input, const EncoderParams<T>& params,
                     const ForwardContext& ctx = {}, EncoderCache<T>* cache = nullptr);

/// Full forward pass. Padded keys are masked with -inf before the softmax.
template <typename T>
ContextualSequence<T> encode(const EncodedInput& input, const EncoderParams<T>& params,
                             const ForwardContext& ctx = {}, EncoderCache<T>* cache = nullptr);

/// Accumulates parameter gradients given dLoss/dstates (n x d).
template <typename T>
void encode_backward(const EncoderCache<T>& cache, const BasicTensor<T>& grad_states,
                     EncoderParams<T>& params);

// ---- task heads (L3) -------------------------------------------------------

enum class HeadKind { classification, multiple_choice };

const char* head_kind_name(HeadKind kind);

/// Stage-specific linear layer over v1. Classification holds W (d x C) and
/// b (C); multiple choice holds w (d x 1) and b (1).
template <typename T>
class TaskHead {
 public:
  static TaskHead classification(std::size_t hidden_size, std::size_t num_classes);
  static TaskHead multiple_choice(std::size_t hidden_size);

  /// Weights ~ N(0, stddev^2), bias zero.
  void init(Rng& rng, double stddev = 0.02);

  HeadKind kind() const { return kind_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t hidden_size() const { return params_.value(0).rows(); }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  BasicTensor<T>& weight() { return params_.value(0); }
  const BasicTensor<T>& weight() const { return params_.value(0); }
  BasicTensor<T>& bias() { return params_.value(1); }
  const BasicTensor<T>& bias() const { return params_.value(1); }

  template <typename U>
  TaskHead<U> cast() const {
    TaskHead<U> out = kind_ == HeadKind::classification
                          ? TaskHead<U>::classification(hidden_size(), num_classes_)
                          : TaskHead<U>::multiple_choice(hidden_size());
    out.weight() = weight().template cast<U>();
    out.bias() = bias().template cast<U>();
    return out;
  }

 private:
  TaskHead() = default;

  HeadKind kind_ = HeadKind::classification;
  std::size_t num_classes_ = 0;
  ParamSet<T> params_;
};

template <typename T>
std::vector<T> classify_logits(const ContextualSequence<T>& seq, const TaskHead<T>& head);

/// softmax(W^T v1 + b). Throws UsageError for a multiple-choice head.
template <typename T>
std::vector<T> classify(const ContextualSequence<T>& seq, const TaskHead<T>& head);

/// S = w^T v1 + b. Throws UsageError for a classification head.
template <typename T>
T score_choice(const ContextualSequence<T>& seq, const TaskHead<T>& head);

/// First index of the maximum score.
std::size_t argmax_first(std::span<const double> scores);

struct ChoicePrediction {
  std::size_t index = 0;
  std::vector<double> scores;
};

/// Encodes (context joined with single spaces, choice) for every choice and
/// returns the argmax of S. Ties go to the lowest index.
template <typename T>
ChoicePrediction predict_choice(const std::vector<std::string>& context,
                                const std::vector<std::string>& choices,
                                const EncoderParams<T>& params, const TaskHead<T>& head,
                                const Vocab& vocab, std::size_t max_len);

/// Segment A text for a story context.
std::string join_context(const std::vector<std::string>& context);

// ---- losses with backward ------------------------------------------------

/// Cross-entropy of the classification head on one input. When
/// accumulate_grad is set, `scale` * dLoss/dparam is added to encoder and
/// head gradients. Returns the unscaled loss.
template <typename T>
T classification_loss(const EncodedInput& input, std::size_t label, EncoderParams<T>& params,
                      TaskHead<T>& head, const ForwardContext& ctx, T scale, bool accumulate_grad,
                      std::size_t* predicted = nullptr);

/// Softmax over per-choice scores, cross-entropy on the answer index.
template <typename T>
T multiple_choice_loss(std::span<const EncodedInput> choices, std::size_t answer,
                       EncoderParams<T>& params, TaskHead<T>& head, const ForwardContext& ctx,
                       T scale, bool accumulate_grad, std::size_t* predicted = nullptr);

}  // namespace transbert
