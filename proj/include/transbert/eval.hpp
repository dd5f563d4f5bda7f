#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "transbert/encoder.hpp"
#include "transbert/tokenizer.hpp"
#include "transbert/transfer_data.hpp"

namespace transbert {

/// Fraction of matching positions. Throws UsageError on empty or unequal inputs.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold);

/// Fraction rendered as a percentage with one decimal ("88.1").
std::string format_percent(double fraction);

struct ChoiceRecord {
  std::size_t example = 0;
  std::vector<double> scores;
  std::size_t prediction = 0;
  std::size_t gold = 0;
  bool correct = false;
};

struct ChoiceEvaluation {
  double accuracy = 0.0;  // fraction
  std::vector<ChoiceRecord> records;
};

/// predict_choice over every example with a multiple-choice head.
ChoiceEvaluation evaluate_sct(const EncoderParams<float>& encoder, const TaskHead<float>& head,
                              const std::vector<ChoiceExample>& dataset, const Vocab& vocab,
                              std::size_t max_len);

/// "ending only" for an empty keep-set, otherwise "(3,4)" style.
std::string subset_label(const std::vector<std::size_t>& keep);

/// ending only, (4), (3,4), (2,3,4), (1,2,3,4).
std::vector<std::vector<std::size_t>> standard_context_sweep();

struct AblationRow {
  std::string label;
  std::vector<std::size_t> keep;
  double accuracy = 0.0;
};

/// One evaluate_sct per keep-set after subset_context.
std::vector<AblationRow> ablate_context(const EncoderParams<float>& encoder,
                                        const TaskHead<float>& head,
                                        const std::vector<ChoiceExample>& dataset,
                                        const std::vector<std::vector<std::size_t>>& subsets,
                                        const Vocab& vocab, std::size_t max_len);

enum class ZeroShotStatistic { entailment, entailment_minus_contradiction };

/// Per-ending statistic from (entailment, neutral, contradiction) probabilities.
double zero_shot_score(std::span<const double> class_probs, ZeroShotStatistic statistic);

/// Scores each ending by the NLI head applied to (context, ending) and picks
/// the highest; ties go to index 0. The head must have exactly three classes
/// in entailment, neutral, contradiction order.
ChoiceEvaluation zero_shot_nli_sct(const EncoderParams<float>& encoder, const TaskHead<float>& head,
                                   const std::vector<ChoiceExample>& dataset, const Vocab& vocab,
                                   std::size_t max_len,
                                   ZeroShotStatistic statistic = ZeroShotStatistic::entailment);

/// "setting<TAB>accuracy" header plus one row per entry.
std::string format_table(const std::vector<AblationRow>& rows);

/// One JSON object per line.
std::string records_to_jsonl(const std::vector<ChoiceRecord>& records);

}  // namespace transbert
