#include "transbert/encoder.hpp"

#include <cmath>
#include <limits>

#include "transbert/errors.hpp"

namespace transbert {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("model config: " + msg); };
  if (num_heads == 0) fail("num_heads must be positive");
  if (hidden_size == 0) fail("hidden_size must be positive");
  if (hidden_size % num_heads != 0) {
    fail("hidden_size " + std::to_string(hidden_size) + " is not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (ffn_size < hidden_size) fail("ffn_size must be >= hidden_size");
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (max_positions == 0) fail("max_positions must be positive");
  if (segment_types != 2) fail("segment_types must be 2");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) fail("dropout_keep must be in (0, 1]");
}

// ---- parameters ------------------------------------------------------------

template <typename T>
EncoderParams<T>::EncoderParams(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config.hidden_size;
  word_ = params_.add("embeddings.word", {config.vocab_size, d});
  position_ = params_.add("embeddings.position", {config.max_positions, d});
  segment_ = params_.add("embeddings.segment", {config.segment_types, d});
  embed_norm_gain_ = params_.add("embeddings.norm.gain", {d}, false);
  embed_norm_bias_ = params_.add("embeddings.norm.bias", {d}, false);
  params_.value(embed_norm_gain_).fill(T{1});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerSlots s{};
    s.query_w = params_.add(p + "attention.query.weight", {d, d});
    s.query_b = params_.add(p + "attention.query.bias", {d}, false);
    s.key_w = params_.add(p + "attention.key.weight", {d, d});
    s.key_b = params_.add(p + "attention.key.bias", {d}, false);
    s.value_w = params_.add(p + "attention.value.weight", {d, d});
    s.value_b = params_.add(p + "attention.value.bias", {d}, false);
    s.attn_out_w = params_.add(p + "attention.output.weight", {d, d});
    s.attn_out_b = params_.add(p + "attention.output.bias", {d}, false);
    s.attn_norm_gain = params_.add(p + "attention.norm.gain", {d}, false);
    s.attn_norm_bias = params_.add(p + "attention.norm.bias", {d}, false);
    s.ffn_in_w = params_.add(p + "ffn.in.weight", {d, config.ffn_size});
    s.ffn_in_b = params_.add(p + "ffn.in.bias", {config.ffn_size}, false);
    s.ffn_out_w = params_.add(p + "ffn.out.weight", {config.ffn_size, d});
    s.ffn_out_b = params_.add(p + "ffn.out.bias", {d}, false);
    s.ffn_norm_gain = params_.add(p + "ffn.norm.gain", {d}, false);
    s.ffn_norm_bias = params_.add(p + "ffn.norm.bias", {d}, false);
    params_.value(s.attn_norm_gain).fill(T{1});
    params_.value(s.ffn_norm_gain).fill(T{1});
    layers_.push_back(s);
  }
}

template <typename T>
EncoderParams<T> EncoderParams<T>::initialized(const ModelConfig& config, Rng& rng,
                                               double stddev) {
  EncoderParams out(config);
  for (auto& slot : out.params_) {
    // Matrices (and embedding tables) are the only rank-2 slots.
    if (slot.value.rank() == 2) {
      for (auto& v : slot.value.values()) v = static_cast<T>(rng.normal() * stddev);
    }
  }
  return out;
}

// ---- forward ---------------------------------------------------------------

namespace {

template <typename T>
void check_input(const EncodedInput& input, const ModelConfig& config) {
  const std::size_t n = input.ids.size();
  if (n == 0) throw UsageError("encoder: empty input");
  if (input.segments.size() != n || input.mask.size() != n) {
    throw UsageError("encoder: ids, segments and mask lengths differ");
  }
  if (n > config.max_positions) {
    throw UsageError("encoder: sequence length " + std::to_string(n) + " exceeds max_positions " +
                     std::to_string(config.max_positions));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (input.ids[i] < 0 || static_cast<std::size_t>(input.ids[i]) >= config.vocab_size) {
      throw UsageError("encoder: token id " + std::to_string(input.ids[i]) + " at position " +
                       std::to_string(i) + " out of range for vocab size " +
                       std::to_string(config.vocab_size));
    }
    if (input.segments[i] < 0 || static_cast<std::size_t>(input.segments[i]) >= config.segment_types) {
      throw UsageError("encoder: segment id out of range at position " + std::to_string(i));
    }
  }
  if (input.mask[0] == 0) throw UsageError("encoder: position 0 must be a real token");
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  BasicTensor<T> y = ops::matmul(x, w);
  ops::add_row_bias(y, b);
  return y;
}

template <typename T>
void linear_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                     const BasicTensor<T>& w, BasicTensor<T>& grad_w, BasicTensor<T>& grad_b,
                     BasicTensor<T>& grad_x) {
  ops::matmul_backward(grad_out, x, w, &grad_x, &grad_w);
  ops::row_bias_backward(grad_out, grad_b);
}

template <typename T>
BasicTensor<T> block_forward(const BasicTensor<T>& x, const EncoderParams<T>& params,
                             const typename EncoderParams<T>::LayerSlots& s,
                             std::span<const TokenId> key_mask, const ForwardContext& ctx,
                             LayerCache<T>* cache) {
  const auto& cfg = params.config();
  const std::size_t n = x.rows();
  const std::size_t d = cfg.hidden_size;
  const std::size_t heads = cfg.num_heads;
  const std::size_t dh = cfg.head_size();
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const double keep = cfg.dropout_keep;
  const T eps = static_cast<T>(ops::kLayerNormEps);

  BasicTensor<T> q = linear(x, params.value(s.query_w), params.value(s.query_b));
  // The key bias only adds a per-query constant to the logits, which the
  // softmax cancels; it is stored but not applied.
  BasicTensor<T> k = ops::matmul(x, params.value(s.key_w));
  BasicTensor<T> v = linear(x, params.value(s.value_w), params.value(s.value_b));

  BasicTensor<T> probs({heads, n, n});
  BasicTensor<T> context({n, d});
  ops::DropoutMask<T> probs_mask;
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t h = 0; h < heads; ++h) {
    T* p = probs.data() + h * n * n;
    const std::size_t off = h * dh;
    ops::gemm<T>(false, true, n, n, dh, scale, q.data() + off, d, k.data() + off, d, T{0}, p, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (key_mask[j] == 0) p[i * n + j] = neg_inf;
      }
    }
    ops::softmax_rows_inplace<T>(std::span<T>(p, n * n), n);
  }
  BasicTensor<T> dropped = probs;
  ops::dropout_inplace<T>(dropped.values(), keep, ctx.train, ctx.rng, &probs_mask);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    ops::gemm<T>(false, false, n, dh, n, T{1}, dropped.data() + h * n * n, n, v.data() + off, d,
                 T{0}, context.data() + off, d);
  }

  ops::DropoutMask<T> attn_out_mask;
  BasicTensor<T> attn_out = linear(context, params.value(s.attn_out_w), params.value(s.attn_out_b));
  ops::dropout_inplace<T>(attn_out.values(), keep, ctx.train, ctx.rng, &attn_out_mask);
  ops::LayerNormCache<T> attn_norm;
  BasicTensor<T> x1 = ops::layer_norm(ops::add(x, attn_out), params.value(s.attn_norm_gain),
                                      params.value(s.attn_norm_bias), eps,
                                      cache ? &attn_norm : nullptr);

  BasicTensor<T> ffn_pre = linear(x1, params.value(s.ffn_in_w), params.value(s.ffn_in_b));
  BasicTensor<T> ffn_act = ops::gelu(ffn_pre);
  BasicTensor<T> ffn_out = linear(ffn_act, params.value(s.ffn_out_w), params.value(s.ffn_out_b));
  ops::DropoutMask<T> ffn_out_mask;
  ops::dropout_inplace<T>(ffn_out.values(), keep, ctx.train, ctx.rng, &ffn_out_mask);
  ops::LayerNormCache<T> ffn_norm;
  BasicTensor<T> out = ops::layer_norm(ops::add(x1, ffn_out), params.value(s.ffn_norm_gain),
                                       params.value(s.ffn_norm_bias), eps,
                                       cache ? &ffn_norm : nullptr);

  if (cache) {
    cache->input = x;
    cache->query = std::move(q);
    cache->key = std::move(k);
    cache->value = std::move(v);
    cache->probs = std::move(probs);
    cache->probs_mask = std::move(probs_mask);
    cache->context = std::move(context);
    cache->attn_out_mask = std::move(attn_out_mask);
    cache->attn_norm = std::move(attn_norm);
    cache->attn_norm_out = std::move(x1);
    cache->ffn_pre = std::move(ffn_pre);
    cache->ffn_act = std::move(ffn_act);
    cache->ffn_out_mask = std::move(ffn_out_mask);
    cache->ffn_norm = std::move(ffn_norm);
  }
  return out;
}

template <typename T>
BasicTensor<T> block_backward(const LayerCache<T>& c, const BasicTensor<T>& grad_out,
                              EncoderParams<T>& params,
                              const typename EncoderParams<T>::LayerSlots& s) {
  const auto& cfg = params.config();
  const std::size_t n = grad_out.rows();
  const std::size_t d = cfg.hidden_size;
  const std::size_t heads = cfg.num_heads;
  const std::size_t dh = cfg.head_size();
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  // out = LN(x1 + dropout(ffn(x1)))
  BasicTensor<T> d_sum2 = ops::layer_norm_backward(grad_out, params.value(s.ffn_norm_gain),
                                                   c.ffn_norm, params.grad(s.ffn_norm_gain),
                                                   params.grad(s.ffn_norm_bias));
  BasicTensor<T> d_ffn_out = ops::dropout_backward(d_sum2, c.ffn_out_mask);
  BasicTensor<T> d_ffn_act(c.ffn_act.shape());
  linear_backward(d_ffn_out, c.ffn_act, params.value(s.ffn_out_w), params.grad(s.ffn_out_w),
                  params.grad(s.ffn_out_b), d_ffn_act);
  BasicTensor<T> d_ffn_pre = ops::gelu_backward(d_ffn_act, c.ffn_pre);
  BasicTensor<T> d_x1 = d_sum2;
  linear_backward(d_ffn_pre, c.attn_norm_out, params.value(s.ffn_in_w), params.grad(s.ffn_in_w),
                  params.grad(s.ffn_in_b), d_x1);

  // x1 = LN(x + dropout(attn(x)))
  BasicTensor<T> d_sum1 = ops::layer_norm_backward(d_x1, params.value(s.attn_norm_gain),
                                                   c.attn_norm, params.grad(s.attn_norm_gain),
                                                   params.grad(s.attn_norm_bias));
  BasicTensor<T> d_attn_out = ops::dropout_backward(d_sum1, c.attn_out_mask);
  BasicTensor<T> d_context({n, d});
  linear_backward(d_attn_out, c.context, params.value(s.attn_out_w), params.grad(s.attn_out_w),
                  params.grad(s.attn_out_b), d_context);

  BasicTensor<T> dropped = c.probs;
  if (!c.probs_mask.empty()) {
    for (std::size_t i = 0; i < dropped.size(); ++i) dropped[i] *= c.probs_mask[i];
  }
  BasicTensor<T> dq({n, d}), dk({n, d}), dv({n, d});
  std::vector<T> d_dropped(n * n), d_scores(n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    const T* ph = dropped.data() + h * n * n;
    ops::gemm<T>(false, true, n, n, dh, T{1}, d_context.data() + off, d, c.value.data() + off, d,
                 T{0}, d_dropped.data(), n);
    ops::gemm<T>(true, false, n, dh, n, T{1}, ph, n, d_context.data() + off, d, T{0},
                 dv.data() + off, d);
    if (!c.probs_mask.empty()) {
      const T* m = c.probs_mask.data() + h * n * n;
      for (std::size_t i = 0; i < n * n; ++i) d_dropped[i] *= m[i];
    }
    ops::softmax_rows_backward<T>(d_dropped, std::span<const T>(c.probs.data() + h * n * n, n * n),
                                  d_scores, n);
    ops::gemm<T>(false, false, n, dh, n, scale, d_scores.data(), n, c.key.data() + off, d, T{0},
                 dq.data() + off, d);
    ops::gemm<T>(true, false, n, dh, n, scale, d_scores.data(), n, c.query.data() + off, d, T{0},
                 dk.data() + off, d);
  }

  BasicTensor<T> d_x = d_sum1;
  linear_backward(dq, c.input, params.value(s.query_w), params.grad(s.query_w),
                  params.grad(s.query_b), d_x);
  ops::matmul_backward(dk, c.input, params.value(s.key_w), &d_x, &params.grad(s.key_w));
  linear_backward(dv, c.input, params.value(s.value_w), params.grad(s.value_w),
                  params.grad(s.value_b), d_x);
  return d_x;
}

}  // namespace

template <typename T>
BasicTensor<T> embedding_sum(const EncodedInput& input, const EncoderParams<T>& params) {
  check_input<T>(input, params.config());
  const std::size_t n = input.ids.size();
  const std::size_t d = params.config().hidden_size;
  BasicTensor<T> sum = ops::embedding_lookup(params.value(params.word_slot()),
                                             std::span<const TokenId>(input.ids));
  const BasicTensor<T>& pos = params.value(params.position_slot());
  const BasicTensor<T>& seg = params.value(params.segment_slot());
  for (std::size_t i = 0; i < n; ++i) {
    T* row = sum.data() + i * d;
    const T* p = pos.data() + i * d;
    const T* s = seg.data() + static_cast<std::size_t>(input.segments[i]) * d;
    for (std::size_t c = 0; c < d; ++c) row[c] += p[c] + s[c];
  }
  return sum;
}

template <typename T>
BasicTensor<T> embed(const EncodedInput& input, const EncoderParams<T>& params,
                     const ForwardContext& ctx, EncoderCache<T>* cache) {
  BasicTensor<T> sum = embedding_sum(input, params);
  ops::LayerNormCache<T> norm_cache;
  BasicTensor<T> out = ops::layer_norm(sum, params.value(params.embed_norm_gain_slot()),
                                       params.value(params.embed_norm_bias_slot()),
                                       static_cast<T>(ops::kLayerNormEps),
                                       cache ? &norm_cache : nullptr);
  ops::DropoutMask<T> mask;
  ops::dropout_inplace<T>(out.values(), params.config().dropout_keep, ctx.train, ctx.rng, &mask);
  if (cache) {
    cache->ids = input.ids;
    cache->segments = input.segments;
    cache->mask = input.mask;
    cache->embed_norm = std::move(norm_cache);
    cache->embed_mask = std::move(mask);
  }
  return out;
}

template <typename T>
ContextualSequence<T> encode(const EncodedInput& input, const EncoderParams<T>& params,
                             const ForwardContext& ctx, EncoderCache<T>* cache) {
  BasicTensor<T> x = embed(input, params, ctx, cache);
  const std::size_t layers = params.config().num_layers;
  if (cache) cache->layers.assign(layers, LayerCache<T>{});
  for (std::size_t l = 0; l < layers; ++l) {
    x = block_forward(x, params, params.layer(l), std::span<const TokenId>(input.mask), ctx,
                      cache ? &cache->layers[l] : nullptr);
  }
  return ContextualSequence<T>{std::move(x)};
}

template <typename T>
void encode_backward(const EncoderCache<T>& cache, const BasicTensor<T>& grad_states,
                     EncoderParams<T>& params) {
  const std::size_t d = params.config().hidden_size;
  const std::size_t n = cache.ids.size();
  if (grad_states.rows() != n || grad_states.cols() != d) {
    throw UsageError("encode_backward: gradient shape " + shape_to_string(grad_states.shape()) +
                     " does not match sequence " + shape_to_string({n, d}));
  }
  if (cache.layers.size() != params.config().num_layers) {
    throw UsageError("encode_backward: cache was not recorded for this model");
  }
  BasicTensor<T> grad = grad_states;
  for (std::size_t l = params.config().num_layers; l-- > 0;) {
    grad = block_backward(cache.layers[l], grad, params, params.layer(l));
  }
  ops::dropout_backward_inplace<T>(grad.values(), cache.embed_mask);
  BasicTensor<T> d_sum = ops::layer_norm_backward(
      grad, params.value(params.embed_norm_gain_slot()), cache.embed_norm,
      params.grad(params.embed_norm_gain_slot()), params.grad(params.embed_norm_bias_slot()));
  ops::embedding_backward(d_sum, std::span<const TokenId>(cache.ids),
                          params.grad(params.word_slot()));
  BasicTensor<T>& d_pos = params.grad(params.position_slot());
  BasicTensor<T>& d_seg = params.grad(params.segment_slot());
  for (std::size_t i = 0; i < n; ++i) {
    const T* src = d_sum.data() + i * d;
    T* p = d_pos.data() + i * d;
    T* s = d_seg.data() + static_cast<std::size_t>(cache.segments[i]) * d;
    for (std::size_t c = 0; c < d; ++c) {
      p[c] += src[c];
      s[c] += src[c];
    }
  }
}

// ---- heads -----------------------------------------------------------------

const char* head_kind_name(HeadKind kind) {
  return kind == HeadKind::classification ? "classification" : "multiple_choice";
}

template <typename T>
TaskHead<T> TaskHead<T>::classification(std::size_t hidden_size, std::size_t num_classes) {
  if (num_classes < 2) throw UsageError("classification head needs at least 2 classes");
  TaskHead head;
  head.kind_ = HeadKind::classification;
  head.num_classes_ = num_classes;
  head.params_.add("head.classifier.weight", {hidden_size, num_classes});
  head.params_.add("head.classifier.bias", {num_classes}, false);
  return head;
}

template <typename T>
TaskHead<T> TaskHead<T>::multiple_choice(std::size_t hidden_size) {
  TaskHead head;
  head.kind_ = HeadKind::multiple_choice;
  head.num_classes_ = 1;
  head.params_.add("head.scorer.weight", {hidden_size, 1});
  head.params_.add("head.scorer.bias", {1}, false);
  return head;
}

template <typename T>
void TaskHead<T>::init(Rng& rng, double stddev) {
  for (auto& v : weight().values()) v = static_cast<T>(rng.normal() * stddev);
  bias().zero();
}

namespace {

template <typename T>
void require_head(const TaskHead<T>& head, HeadKind kind, std::size_t hidden, const char* op) {
  if (head.kind() != kind) {
    throw UsageError(std::string(op) + ": expected a " + head_kind_name(kind) + " head, got " +
                     head_kind_name(head.kind()));
  }
  if (head.hidden_size() != hidden) {
    throw UsageError(std::string(op) + ": head hidden size " + std::to_string(head.hidden_size()) +
                     " does not match encoder hidden size " + std::to_string(hidden));
  }
}

template <typename T>
std::vector<T> head_logits(std::span<const T> v1, const TaskHead<T>& head, bool with_bias = true) {
  const std::size_t classes = head.weight().cols();
  std::vector<T> logits(head.bias().values().begin(), head.bias().values().end());
  if (!with_bias) std::fill(logits.begin(), logits.end(), T{0});
  const auto& w = head.weight();
  for (std::size_t i = 0; i < v1.size(); ++i) {
    const T* row = w.data() + i * classes;
    for (std::size_t c = 0; c < classes; ++c) logits[c] += v1[i] * row[c];
  }
  return logits;
}

/// grad_w += v1 (x) g ; grad_b += g ; returns dL/dv1 = W g.
template <typename T>
std::vector<T> head_backward(std::span<const T> v1, std::span<const T> g, TaskHead<T>& head,
                             bool with_bias = true) {
  const std::size_t classes = head.weight().cols();
  auto& gw = head.params().grad(0);
  auto& gb = head.params().grad(1);
  const auto& w = head.weight();
  std::vector<T> dv1(v1.size(), T{0});
  for (std::size_t i = 0; i < v1.size(); ++i) {
    T* grow = gw.data() + i * classes;
    const T* wrow = w.data() + i * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      grow[c] += v1[i] * g[c];
      dv1[i] += wrow[c] * g[c];
    }
  }
  if (with_bias) {
    for (std::size_t c = 0; c < classes; ++c) gb[c] += g[c];
  }
  return dv1;
}

}  // namespace

template <typename T>
std::vector<T> classify_logits(const ContextualSequence<T>& seq, const TaskHead<T>& head) {
  require_head(head, HeadKind::classification, seq.states.cols(), "classify");
  return head_logits(seq.v1(), head);
}

template <typename T>
std::vector<T> classify(const ContextualSequence<T>& seq, const TaskHead<T>& head) {
  std::vector<T> probs = classify_logits(seq, head);
  ops::softmax_rows_inplace<T>(probs, probs.size());
  return probs;
}

template <typename T>
T score_choice(const ContextualSequence<T>& seq, const TaskHead<T>& head) {
  require_head(head, HeadKind::multiple_choice, seq.states.cols(), "score_choice");
  return head_logits(seq.v1(), head)[0];
}

std::size_t argmax_first(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("argmax over an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::string join_context(const std::vector<std::string>& context) {
  std::string out;
  for (const auto& s : context) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

template <typename T>
ChoicePrediction predict_choice(const std::vector<std::string>& context,
                                const std::vector<std::string>& choices,
                                const EncoderParams<T>& params, const TaskHead<T>& head,
                                const Vocab& vocab, std::size_t max_len) {
  if (choices.empty()) throw UsageError("predict_choice: empty choice list");
  require_head(head, HeadKind::multiple_choice, params.config().hidden_size, "predict_choice");
  const auto context_tokens = tokenize(join_context(context), vocab);
  ChoicePrediction out;
  for (const auto& choice : choices) {
    const EncodedInput input = encode_pair(context_tokens, tokenize(choice, vocab), vocab, max_len);
    out.scores.push_back(static_cast<double>(score_choice(encode(input, params), head)));
  }
  out.index = argmax_first(out.scores);
  return out;
}

template <typename T>
T classification_loss(const EncodedInput& input, std::size_t label, EncoderParams<T>& params,
                      TaskHead<T>& head, const ForwardContext& ctx, T scale, bool accumulate_grad,
                      std::size_t* predicted) {
  require_head(head, HeadKind::classification, params.config().hidden_size, "classification_loss");
  EncoderCache<T> cache;
  const auto seq = encode(input, params, ctx, accumulate_grad ? &cache : nullptr);
  const std::vector<T> logits = head_logits(seq.v1(), head);
  std::vector<T> g(logits.size(), T{0});
  const T loss = ops::cross_entropy_row<T>(logits, label,
                                           accumulate_grad ? std::span<T>(g) : std::span<T>{},
                                           scale);
  if (predicted) {
    std::vector<double> as_double(logits.begin(), logits.end());
    *predicted = argmax_first(as_double);
  }
  if (accumulate_grad) {
    const auto dv1 = head_backward<T>(seq.v1(), g, head);
    BasicTensor<T> grad_states(seq.states.shape());
    std::copy(dv1.begin(), dv1.end(), grad_states.row(0).begin());
    encode_backward(cache, grad_states, params);
  }
  return loss;
}

template <typename T>
T multiple_choice_loss(std::span<const EncodedInput> choices, std::size_t answer,
                       EncoderParams<T>& params, TaskHead<T>& head, const ForwardContext& ctx,
                       T scale, bool accumulate_grad, std::size_t* predicted) {
  require_head(head, HeadKind::multiple_choice, params.config().hidden_size,
               "multiple_choice_loss");
  if (choices.empty()) throw UsageError("multiple_choice_loss: empty choice list");
  // Shifts shared by every choice (head bias, final layer-norm bias) cancel
  // in the softmax over choices, so the loss scores w . (gain * normalized).
  std::vector<EncoderCache<T>> caches(choices.size());
  std::vector<ContextualSequence<T>> seqs;
  std::vector<T> scores;
  std::vector<T> unbiased;
  const auto& final_gain = params.value(params.layer(params.config().num_layers - 1).ffn_norm_gain);
  for (std::size_t i = 0; i < choices.size(); ++i) {
    seqs.push_back(encode(choices[i], params, ctx, &caches[i]));
    scores.push_back(head_logits(seqs.back().v1(), head)[0]);
    const auto normalized = caches[i].layers.back().ffn_norm.normalized.row(0);
    std::vector<T> centered(normalized.size());
    for (std::size_t k = 0; k < centered.size(); ++k) {
      centered[k] = final_gain.data()[k] * normalized[k];
    }
    unbiased.push_back(head_logits<T>(centered, head, false)[0]);
  }
  std::vector<T> g(scores.size(), T{0});
  const T loss = ops::cross_entropy_row<T>(unbiased, answer,
                                           accumulate_grad ? std::span<T>(g) : std::span<T>{},
                                           scale);
  if (predicted) {
    std::vector<double> as_double(scores.begin(), scores.end());
    *predicted = argmax_first(as_double);
  }
  if (accumulate_grad) {
    for (std::size_t i = 0; i < choices.size(); ++i) {
      const T gi[1] = {g[i]};
      const auto dv1 = head_backward<T>(seqs[i].v1(), std::span<const T>(gi, 1), head, false);
      BasicTensor<T> grad_states(seqs[i].states.shape());
      std::copy(dv1.begin(), dv1.end(), grad_states.row(0).begin());
      encode_backward(caches[i], grad_states, params);
    }
  }
  return loss;
}

#define TRANSBERT_INSTANTIATE_ENCODER(T)                                                        \
  template class EncoderParams<T>;                                                             \
  template class TaskHead<T>;                                                                  \
  template BasicTensor<T> embedding_sum<T>(const EncodedInput&, const EncoderParams<T>&);      \
  template BasicTensor<T> embed<T>(const EncodedInput&, const EncoderParams<T>&,               \
                                   const ForwardContext&, EncoderCache<T>*);                   \
  template ContextualSequence<T> encode<T>(const EncodedInput&, const EncoderParams<T>&,       \
                                           const ForwardContext&, EncoderCache<T>*);           \
  template void encode_backward<T>(const EncoderCache<T>&, const BasicTensor<T>&,              \
                                   EncoderParams<T>&);                                         \
  template std::vector<T> classify_logits<T>(const ContextualSequence<T>&, const TaskHead<T>&); \
  template std::vector<T> classify<T>(const ContextualSequence<T>&, const TaskHead<T>&);       \
  template T score_choice<T>(const ContextualSequence<T>&, const TaskHead<T>&);                \
  template ChoicePrediction predict_choice<T>(                                                 \
      const std::vector<std::string>&, const std::vector<std::string>&,                       \
      const EncoderParams<T>&, const TaskHead<T>&, const Vocab&, std::size_t);                 \
  template T classification_loss<T>(const EncodedInput&, std::size_t, EncoderParams<T>&,       \
                                    TaskHead<T>&, const ForwardContext&, T, bool,              \
                                    std::size_t*);                                             \
  template T multiple_choice_loss<T>(std::span<const EncodedInput>, std::size_t,               \
                                     EncoderParams<T>&, TaskHead<T>&, const ForwardContext&,   \
                                     T, bool, std::size_t*);

TRANSBERT_INSTANTIATE_ENCODER(float)
TRANSBERT_INSTANTIATE_ENCODER(double)

#undef TRANSBERT_INSTANTIATE_ENCODER

}  // namespace transbert
