#include "transbert/pretraining.hpp"

#include <fstream>
#include <sstream>

#include "transbert/errors.hpp"

namespace transbert {
namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

struct SentenceRef {
  std::size_t doc;
  std::size_t index;
};

}  // namespace

std::size_t SentenceCorpus::sentence_count() const {
  std::size_t n = 0;
  for (const auto& d : documents) n += d.size();
  return n;
}

SentenceCorpus parse_corpus(std::string_view text) {
  SentenceCorpus corpus;
  std::vector<std::string> current;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(pos, end - pos));
    if (line.empty()) {
      if (!current.empty()) corpus.documents.push_back(std::move(current));
      current.clear();
    } else {
      current.emplace_back(line);
    }
    pos = end + 1;
  }
  if (!current.empty()) corpus.documents.push_back(std::move(current));
  return corpus;
}

SentenceCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("corpus: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str());
}

SentencePair sample_sentence_pair(const SentenceCorpus& corpus, Rng& rng,
                                  std::optional<bool> force_next) {
  const auto& docs = corpus.documents;
  std::vector<SentenceRef> with_successor;
  std::vector<SentenceRef> all;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      all.push_back({d, i});
      if (i + 1 < docs[d].size()) with_successor.push_back({d, i});
    }
  }
  const bool can_positive = !with_successor.empty();
  const bool can_negative = docs.size() >= 2 || all.size() >= 3;
  if (!force_next && !(can_positive && can_negative)) {
    throw DataError("corpus too small for next-sentence sampling (need >=2 documents or >=3 "
                    "sentences, and at least one document with two sentences)");
  }
  const bool positive = force_next ? *force_next : rng.bernoulli(0.5);
  if (positive) {
    if (!can_positive) throw DataError("corpus too small: no document has two sentences");
    const auto ref = with_successor[rng.below(with_successor.size())];
    return {docs[ref.doc][ref.index], docs[ref.doc][ref.index + 1], true};
  }
  if (!can_negative) throw DataError("corpus too small for a negative next-sentence pair");
  if (docs.size() >= 2) {
    const auto a = all[rng.below(all.size())];
    std::size_t other = rng.below(docs.size() - 1);
    if (other >= a.doc) ++other;
    const auto& od = docs[other];
    return {docs[a.doc][a.index], od[rng.below(od.size())], false};
  }
  const auto& doc = docs.front();
  const std::size_t a = rng.below(doc.size());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    if (i != a && i != a + 1) candidates.push_back(i);
  }
  return {doc[a], doc[candidates[rng.below(candidates.size())]], false};
}

PretrainExample apply_mlm_mask(const EncodedInput& input, const Vocab& vocab, Rng& rng,
                               const MaskingPolicy& policy) {
  if (policy.mask_rate < 0.0 || policy.mask_rate > 1.0 || policy.mask_prob < 0.0 ||
      policy.random_prob < 0.0 || policy.mask_prob + policy.random_prob > 1.0 + 1e-12) {
    throw UsageError("apply_mlm_mask: invalid masking policy");
  }
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < input.ids.size(); ++i) {
    const TokenId id = input.ids[i];
    if (input.mask[i] == 1 && id != vocab.cls_id() && id != vocab.sep_id() &&
        id != vocab.pad_id()) {
      maskable.push_back(i);
    }
  }
  if (maskable.empty()) throw UsageError("apply_mlm_mask: input has no maskable tokens");

  std::vector<TokenId> ordinary;
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (!vocab.is_special(static_cast<TokenId>(id))) ordinary.push_back(static_cast<TokenId>(id));
  }

  PretrainExample ex;
  ex.input = input;
  for (auto pos : maskable) {
    if (rng.bernoulli(policy.mask_rate)) ex.masked_positions.push_back(pos);
  }
  if (ex.masked_positions.empty()) ex.masked_positions.push_back(maskable[rng.below(maskable.size())]);

  for (auto pos : ex.masked_positions) {
    ex.masked_labels.push_back(input.ids[pos]);
    const double u = rng.uniform();
    if (u < policy.mask_prob) {
      ex.input.ids[pos] = vocab.mask_id();
      ex.corruption.push_back(Corruption::mask);
    } else if (u < policy.mask_prob + policy.random_prob) {
      ex.input.ids[pos] = ordinary.empty() ? input.ids[pos] : ordinary[rng.below(ordinary.size())];
      ex.corruption.push_back(Corruption::random);
    } else {
      ex.corruption.push_back(Corruption::keep);
    }
  }
  return ex;
}

PretrainExample make_pretrain_example(const SentenceCorpus& corpus, const Vocab& vocab,
                                      std::size_t max_len, Rng& rng,
                                      const MaskingPolicy& policy) {
  const SentencePair pair = sample_sentence_pair(corpus, rng);
  const EncodedInput input =
      encode_pair(tokenize(pair.first, vocab), tokenize(pair.second, vocab), vocab, max_len);
  PretrainExample ex = apply_mlm_mask(input, vocab, rng, policy);
  ex.is_next = pair.is_next;
  return ex;
}

std::vector<PretrainExample> generate_pretrain_examples(const SentenceCorpus& corpus,
                                                        const Vocab& vocab, std::size_t max_len,
                                                        std::size_t count, std::uint64_t seed,
                                                        const MaskingPolicy& policy) {
  std::vector<PretrainExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    out.push_back(make_pretrain_example(corpus, vocab, max_len, rng, policy));
  }
  return out;
}

template <typename T>
T pretrain_loss(std::span<const PretrainExample> batch, EncoderParams<T>& params,
                MlmHead<T>& mlm_head, TaskHead<T>& nsp_head, const ForwardContext& ctx,
                bool accumulate_grad, PretrainStats* stats) {
  const auto& cfg = params.config();
  if (mlm_head.bias().size() != cfg.vocab_size) {
    throw UsageError("pretrain_loss: MLM head is not sized to the vocabulary");
  }
  if (nsp_head.kind() != HeadKind::classification || nsp_head.num_classes() != 2) {
    throw UsageError("pretrain_loss: NSP head must be a 2-class classification head");
  }
  if (batch.empty()) throw UsageError("pretrain_loss: empty batch");
  std::size_t masked_total = 0;
  for (const auto& ex : batch) {
    if (ex.masked_positions.size() != ex.masked_labels.size()) {
      throw UsageError("pretrain_loss: masked positions and labels differ in length");
    }
    masked_total += ex.masked_positions.size();
  }
  if (masked_total == 0) throw UsageError("pretrain_loss: batch has no masked positions");

  const std::size_t d = cfg.hidden_size;
  const std::size_t vocab = cfg.vocab_size;
  const T mlm_scale = T{1} / static_cast<T>(masked_total);
  const T nsp_scale = T{1} / static_cast<T>(batch.size());
  const BasicTensor<T>& word = params.value(params.word_slot());

  double mlm_sum = 0.0;
  double nsp_sum = 0.0;
  std::size_t mlm_correct = 0;
  std::size_t nsp_correct = 0;
  for (const auto& ex : batch) {
    EncoderCache<T> cache;
    const auto seq = encode(ex.input, params, ctx, accumulate_grad ? &cache : nullptr);
    const std::size_t m = ex.masked_positions.size();

    BasicTensor<T> rows({m, d});
    for (std::size_t j = 0; j < m; ++j) {
      const auto src = seq.states.row(ex.masked_positions[j]);
      std::copy(src.begin(), src.end(), rows.row(j).begin());
    }
    BasicTensor<T> logits({m, vocab});
    ops::gemm<T>(false, true, m, vocab, d, T{1}, rows.data(), d, word.data(), d, T{0},
                 logits.data(), vocab);
    ops::add_row_bias(logits, mlm_head.bias());
    BasicTensor<T> g_logits({m, vocab});
    for (std::size_t j = 0; j < m; ++j) {
      const auto label = static_cast<std::size_t>(ex.masked_labels[j]);
      mlm_sum += ops::cross_entropy_row<T>(
          logits.row(j), label, accumulate_grad ? g_logits.row(j) : std::span<T>{}, mlm_scale);
      const auto row = logits.row(j);
      std::vector<double> as_double(row.begin(), row.end());
      if (argmax_first(as_double) == label) ++mlm_correct;
    }

    std::vector<T> nsp_logits = classify_logits(seq, nsp_head);
    std::vector<T> g_nsp(2, T{0});
    const std::size_t nsp_label = ex.is_next ? 0 : 1;
    nsp_sum += ops::cross_entropy_row<T>(
        nsp_logits, nsp_label, accumulate_grad ? std::span<T>(g_nsp) : std::span<T>{}, nsp_scale);
    if ((nsp_logits[0] >= nsp_logits[1] ? 0u : 1u) == nsp_label) ++nsp_correct;

    if (!accumulate_grad) continue;
    BasicTensor<T> grad_states(seq.states.shape());
    // d rows = G * W ; dW += G^T * rows ; d bias += column sums of G
    BasicTensor<T> d_rows({m, d});
    ops::gemm<T>(false, false, m, d, vocab, T{1}, g_logits.data(), vocab, word.data(), d, T{0},
                 d_rows.data(), d);
    ops::gemm<T>(true, false, vocab, d, m, T{1}, g_logits.data(), vocab, rows.data(), d, T{1},
                 params.grad(params.word_slot()).data(), d);
    ops::row_bias_backward(g_logits, mlm_head.params().grad(0));
    for (std::size_t j = 0; j < m; ++j) {
      auto dst = grad_states.row(ex.masked_positions[j]);
      const auto src = d_rows.row(j);
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    // NSP head on v1
    auto& nw = nsp_head.params().grad(0);
    auto& nb = nsp_head.params().grad(1);
    const auto v1 = seq.v1();
    auto dv1 = grad_states.row(0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        nw[i * 2 + c] += v1[i] * g_nsp[c];
        dv1[i] += nsp_head.weight()[i * 2 + c] * g_nsp[c];
      }
    }
    nb[0] += g_nsp[0];
    nb[1] += g_nsp[1];
    encode_backward(cache, grad_states, params);
  }

  const double mlm_loss = mlm_sum / static_cast<double>(masked_total);
  const double nsp_loss = nsp_sum / static_cast<double>(batch.size());
  if (stats) {
    stats->mlm_loss = mlm_loss;
    stats->nsp_loss = nsp_loss;
    stats->masked_total = masked_total;
    stats->mlm_correct = mlm_correct;
    stats->nsp_correct = nsp_correct;
    stats->examples = batch.size();
  }
  return static_cast<T>(mlm_loss + nsp_loss);
}

template float pretrain_loss<float>(std::span<const PretrainExample>, EncoderParams<float>&,
                                MlmHead<float>&, TaskHead<float>&, const ForwardContext&, bool,
                                PretrainStats*);
template double pretrain_loss<double>(std::span<const PretrainExample>, EncoderParams<double>&,
                                 MlmHead<double>&, TaskHead<double>&, const ForwardContext&, bool,
                                 PretrainStats*);

}  // namespace transbert
