#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "transbert/encoder.hpp"
#include "transbert/rng.hpp"
#include "transbert/tokenizer.hpp"

namespace transbert {

/// Unlabeled text: documents of ordered sentences.
struct SentenceCorpus {
  std::vector<std::vector<std::string>> documents;

  std::size_t sentence_count() const;
};

/// One sentence per line, blank line(s) between documents.
SentenceCorpus parse_corpus(std::string_view text);
SentenceCorpus load_corpus(const std::filesystem::path& path);

struct SentencePair {
  std::string first;
  std::string second;
  bool is_next = false;
};

/// With probability 0.5 returns a sentence and its in-document successor;
/// otherwise pairs it with a sentence from a different document (for a
/// single-document corpus: any sentence other than itself and its successor).
/// `force_next` pins the branch. Throws DataError when the requested branch
/// (or, unforced, either branch) cannot be drawn.
SentencePair sample_sentence_pair(const SentenceCorpus& corpus, Rng& rng,
                                  std::optional<bool> force_next = std::nullopt);

enum class Corruption { mask, random, keep };

struct MaskingPolicy {
  double mask_rate = 0.15;
  double mask_prob = 0.8;    // replace with [MASK]
  double random_prob = 0.1;  // replace with a random non-special token
};

struct PretrainExample {
  EncodedInput input;
  std::vector<std::size_t> masked_positions;
  std::vector<TokenId> masked_labels;
  std::vector<Corruption> corruption;
  bool is_next = false;
};

/// Selects each maskable position (real, not [CLS]/[SEP]) with probability
/// mask_rate, forcing at least one, and corrupts selected positions per the
/// policy. Throws UsageError if no position is maskable.
PretrainExample apply_mlm_mask(const EncodedInput& input, const Vocab& vocab, Rng& rng,
                               const MaskingPolicy& policy = {});

/// sample_sentence_pair -> tokenize -> encode_pair -> apply_mlm_mask.
PretrainExample make_pretrain_example(const SentenceCorpus& corpus, const Vocab& vocab,
                                      std::size_t max_len, Rng& rng,
                                      const MaskingPolicy& policy = {});

/// `count` examples; example i uses its own stream derived from (seed, i), so
/// the result does not depend on generation order.
std::vector<PretrainExample> generate_pretrain_examples(const SentenceCorpus& corpus,
                                                        const Vocab& vocab, std::size_t max_len,
                                                        std::size_t count, std::uint64_t seed,
                                                        const MaskingPolicy& policy = {});

/// MLM output layer: logits = h * word_embeddings^T + bias. Only the bias is
/// owned here; the projection is tied to the encoder's word table.
template <typename T>
class MlmHead {
 public:
  explicit MlmHead(std::size_t vocab_size) { params_.add("head.mlm.bias", {vocab_size}, false); }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const BasicTensor<T>& bias() const { return params_.value(0); }
  BasicTensor<T>& bias() { return params_.value(0); }

 private:
  ParamSet<T> params_;
};

struct PretrainStats {
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
  std::size_t masked_total = 0;
  std::size_t mlm_correct = 0;
  std::size_t nsp_correct = 0;
  std::size_t examples = 0;
};

/// Mean MLM cross-entropy over all masked positions in the batch plus mean
/// NSP cross-entropy over examples, both weighted 1.0. With accumulate_grad
/// the gradient of the returned value is added to all three parameter sets.
template <typename T>
T pretrain_loss(std::span<const PretrainExample> batch, EncoderParams<T>& params,
                MlmHead<T>& mlm_head, TaskHead<T>& nsp_head, const ForwardContext& ctx,
                bool accumulate_grad, PretrainStats* stats = nullptr);

}  // namespace transbert
