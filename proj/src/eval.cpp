#include "transbert/eval.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "transbert/errors.hpp"

namespace transbert {

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold) {
  if (predictions.size() != gold.size()) {
    throw UsageError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(gold.size()) + " gold labels");
  }
  if (gold.empty()) throw UsageError("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predictions[i] == gold[i];
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

namespace {

ChoiceEvaluation finish(std::vector<ChoiceRecord> records) {
  if (records.empty()) throw UsageError("evaluation: empty dataset");
  std::size_t correct = 0;
  for (const auto& r : records) correct += r.correct;
  return {static_cast<double>(correct) / static_cast<double>(records.size()), std::move(records)};
}

}  // namespace

ChoiceEvaluation evaluate_sct(const EncoderParams<float>& encoder, const TaskHead<float>& head,
                              const std::vector<ChoiceExample>& dataset, const Vocab& vocab,
                              std::size_t max_len) {
  std::vector<ChoiceRecord> records;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ex = dataset[i];
    auto pred = predict_choice(ex.context_sentences, ex.choices, encoder, head, vocab, max_len);
    records.push_back({i, std::move(pred.scores), pred.index, ex.answer_index,
                       pred.index == ex.answer_index});
  }
  return finish(std::move(records));
}

std::string subset_label(const std::vector<std::size_t>& keep) {
  if (keep.empty()) return "ending only";
  std::string out = "(";
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(keep[i]);
  }
  return out + ")";
}

std::vector<std::vector<std::size_t>> standard_context_sweep() {
  return {{}, {4}, {3, 4}, {2, 3, 4}, {1, 2, 3, 4}};
}

std::vector<AblationRow> ablate_context(const EncoderParams<float>& encoder,
                                        const TaskHead<float>& head,
                                        const std::vector<ChoiceExample>& dataset,
                                        const std::vector<std::vector<std::size_t>>& subsets,
                                        const Vocab& vocab, std::size_t max_len) {
  if (subsets.empty()) throw UsageError("ablate_context: no subsets");
  std::vector<AblationRow> rows;
  for (const auto& keep : subsets) {
    std::vector<ChoiceExample> reduced;
    reduced.reserve(dataset.size());
    for (const auto& ex : dataset) reduced.push_back(subset_context(ex, keep));
    rows.push_back({subset_label(keep), keep,
                    evaluate_sct(encoder, head, reduced, vocab, max_len).accuracy});
  }
  return rows;
}

double zero_shot_score(std::span<const double> class_probs, ZeroShotStatistic statistic) {
  if (class_probs.size() != 3) throw UsageError("zero-shot score needs 3 class probabilities");
  const double entail = class_probs[static_cast<std::size_t>(NliLabel::entailment)];
  if (statistic == ZeroShotStatistic::entailment) return entail;
  return entail - class_probs[static_cast<std::size_t>(NliLabel::contradiction)];
}

ChoiceEvaluation zero_shot_nli_sct(const EncoderParams<float>& encoder, const TaskHead<float>& head,
                                   const std::vector<ChoiceExample>& dataset, const Vocab& vocab,
                                   std::size_t max_len, ZeroShotStatistic statistic) {
  if (head.kind() != HeadKind::classification || head.num_classes() != 3) {
    throw UsageError("zero-shot probe needs a 3-class NLI classification head, got " +
                     std::string(head_kind_name(head.kind())) + " with " +
                     std::to_string(head.num_classes()) + " classes");
  }
  std::vector<ChoiceRecord> records;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ex = dataset[i];
    if (ex.choices.empty()) throw DataError("zero-shot: example " + std::to_string(i) + " has no endings");
    const auto context_tokens = tokenize(join_context(ex.context_sentences), vocab);
    ChoiceRecord r{i, {}, 0, ex.answer_index, false};
    for (const auto& ending : ex.choices) {
      const auto input = encode_pair(context_tokens, tokenize(ending, vocab), vocab, max_len);
      const auto probs = classify(encode(input, encoder), head);
      const std::vector<double> p(probs.begin(), probs.end());
      r.scores.push_back(zero_shot_score(p, statistic));
    }
    r.prediction = argmax_first(r.scores);
    r.correct = r.prediction == r.gold;
    records.push_back(std::move(r));
  }
  return finish(std::move(records));
}

std::string format_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "setting\taccuracy\n";
  for (const auto& r : rows) out << r.label << '\t' << format_percent(r.accuracy) << '\n';
  return out.str();
}

std::string records_to_jsonl(const std::vector<ChoiceRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    const nlohmann::json j = {{"example", r.example},       {"scores", r.scores},
                              {"prediction", r.prediction}, {"gold", r.gold},
                              {"correct", r.correct}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace transbert
