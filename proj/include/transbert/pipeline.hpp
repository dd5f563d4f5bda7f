#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "transbert/checkpoint.hpp"
#include "transbert/encoder.hpp"
#include "transbert/pretraining.hpp"
#include "transbert/stage_config.hpp"
#include "transbert/tokenizer.hpp"
#include "transbert/transfer_data.hpp"

namespace transbert {

/// Training datasets for one stage. Which members are used depends on the
/// task: pair tasks read *_pairs, choice tasks *_choices, pretrain *_corpus.
/// An empty dev set means "evaluate on the training set".
struct StageData {
  std::vector<PairExample> train_pairs, dev_pairs;
  std::vector<ChoiceExample> train_choices, dev_choices;
  SentenceCorpus train_corpus, dev_corpus;
  std::size_t num_classes = 0;  // pair tasks only
};

/// Reads the files named by `config`. mc_nli accepts either a recast choice
/// CSV or a raw NLI TSV (recast on load with config.seed).
StageData load_stage_data(const StageConfig& config);

/// Choice examples for a choice task. sct reads the story CSV unless the
/// header starts with "context" (generic choice CSV); mc_nli recasts a .tsv.
std::vector<ChoiceExample> load_choice_dataset(TaskKind task, const std::filesystem::path& path,
                                               std::uint64_t seed = 0);

struct TrainReport {
  std::string task;
  std::string selection_metric;
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> dev_metric;  // one per dev evaluation
  std::size_t evals_per_epoch = 1;
  std::size_t best_epoch = 0;      // 1-based
  std::size_t best_eval = 0;       // 1-based index into dev_metric
  double best_dev_metric = 0.0;
  std::size_t train_examples = 0;
  std::size_t dev_examples = 0;
  std::size_t steps = 0;
  double wall_time_seconds = 0.0;
};

/// Structured-text rendering. Wall time is the only non-deterministic field
/// and can be left out for comparisons.
std::string report_to_json(const TrainReport& report, bool include_wall_time = true);
std::string reports_to_json(const std::vector<TrainReport>& reports, bool include_wall_time = true);

struct StageResult {
  Checkpoint checkpoint;   // encoder at the best dev evaluation
  TaskHead<float> head;    // head at the same point (NSP head for pretrain)
  TrainReport report;
};

/// Trains a fresh head for config.task jointly with the encoder. `init`
/// null means fresh initialization from config.model and config.seed.
StageResult run_stage(const StageConfig& config, const StageData& data, const Vocab& vocab,
                      const Checkpoint* init = nullptr);

/// File-driven variant: vocabulary from config.vocab (or the init
/// checkpoint when unset), data from load_stage_data.
StageResult run_stage(const StageConfig& config, const Checkpoint* init = nullptr);

/// Rejects a path that would apply more than one supervised transfer task,
/// counting those already in `provenance`.
void check_transfer_guard(const std::vector<StageRecord>& provenance,
                          const std::vector<TaskKind>& upcoming, bool allow_multiple);

struct StageSpec {
  StageConfig config;
  StageData data;
};

struct PathResult {
  Checkpoint checkpoint;
  TaskHead<float> head;  // head of the last stage
  std::vector<TrainReport> reports;
};

/// Folds run_stage over `stages`, threading the encoder only.
PathResult run_path(const std::vector<StageSpec>& stages, const Vocab& vocab,
                    const Checkpoint* start = nullptr, bool allow_multiple_transfer = false);

/// Vocabulary for a stage: config.vocab when set, else the init checkpoint's.
Vocab stage_vocab(const StageConfig& config, const Checkpoint* init);

}  // namespace transbert
