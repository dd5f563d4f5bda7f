#include "transbert/diagnostics.hpp"

#include "transbert/pretraining.hpp"
#include "transbert/synthetic.hpp"
#include "transbert/tokenizer.hpp"

namespace transbert {

const char* grad_check_target_name(GradCheckTarget target) {
  switch (target) {
    case GradCheckTarget::classification: return "classification";
    case GradCheckTarget::multiple_choice: return "multiple_choice";
    case GradCheckTarget::pretrain: return "pretrain";
  }
  return "?";
}

GradCheckResult check_model_gradients(GradCheckTarget target, const ModelGradCheckOptions& opt) {
  const Vocab vocab = train_vocab(synth::lexicon_text(), 160, false);
  ModelConfig model = opt.model;
  model.vocab_size = vocab.size();
  model.validate();

  Rng init_rng(derive_seed(opt.seed, 1));
  auto encoder = EncoderParams<double>::initialized(model, init_rng, 0.1);
  Rng head_rng(derive_seed(opt.seed, 2));
  const std::uint64_t dropout_seed = derive_seed(opt.seed, 3);
  const auto scale = 1.0 / static_cast<double>(opt.batch_size);

  // Every evaluation replays the same dropout masks.
  auto context = [&](Rng& rng) { return ForwardContext{true, &rng}; };

  switch (target) {
    case GradCheckTarget::classification: {
      auto head = TaskHead<double>::classification(model.hidden_size, 3);
      head.init(head_rng, 0.1);
      std::vector<std::pair<EncodedInput, std::size_t>> batch;
      for (const auto& ex : synth::nli(opt.batch_size, opt.seed)) {
        batch.emplace_back(encode_pair(tokenize(ex.text_a, vocab), tokenize(ex.text_b, vocab), vocab,
                                       opt.max_len),
                           ex.label);
      }
      auto loss = [&](bool grad) {
        Rng rng(dropout_seed);
        double total = 0.0;
        for (const auto& [input, label] : batch) {
          total += scale * classification_loss(input, label, encoder, head, context(rng), scale, grad);
        }
        return total;
      };
      return grad_check(loss, {&encoder.params(), &head.params()}, opt.probes, 1e-4, opt.seed);
    }
    case GradCheckTarget::multiple_choice: {
      auto head = TaskHead<double>::multiple_choice(model.hidden_size);
      head.init(head_rng, 0.1);
      std::vector<std::pair<std::vector<EncodedInput>, std::size_t>> batch;
      for (const auto& ex : synth::stories(opt.batch_size, opt.seed)) {
        std::vector<EncodedInput> choices;
        for (const auto& c : ex.choices) {
          choices.push_back(encode_pair(tokenize(join_context(ex.context_sentences), vocab),
                                        tokenize(c, vocab), vocab, opt.max_len));
        }
        batch.emplace_back(std::move(choices), ex.answer_index);
      }
      auto loss = [&](bool grad) {
        Rng rng(dropout_seed);
        double total = 0.0;
        for (const auto& [choices, answer] : batch) {
          total += scale * multiple_choice_loss<double>(choices, answer, encoder, head, context(rng),
                                                        scale, grad);
        }
        return total;
      };
      return grad_check(loss, {&encoder.params(), &head.params()}, opt.probes, 1e-4, opt.seed);
    }
    case GradCheckTarget::pretrain: {
      MlmHead<double> mlm(model.vocab_size);
      mlm.params().init_normal(head_rng, 0.1);
      auto nsp = TaskHead<double>::classification(model.hidden_size, 2);
      nsp.init(head_rng, 0.1);
      const auto corpus = synth::corpus(4, opt.seed);
      const auto batch =
          generate_pretrain_examples(corpus, vocab, opt.max_len, opt.batch_size, opt.seed);
      auto loss = [&](bool grad) {
        Rng rng(dropout_seed);
        return pretrain_loss<double>(batch, encoder, mlm, nsp, context(rng), grad);
      };
      return grad_check(loss, {&encoder.params(), &mlm.params(), &nsp.params()}, opt.probes, 1e-4,
                        opt.seed);
    }
  }
  return {};
}

}  // namespace transbert
