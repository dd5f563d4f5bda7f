#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "transbert/encoder.hpp"

namespace transbert {

enum class TaskKind { pretrain, nli, mc_nli, sentiment, next_action, sct };
enum class SelectionMetric { accuracy, loss };

const char* task_name(TaskKind task);
TaskKind parse_task(std::string_view name);
const char* metric_name(SelectionMetric metric);
SelectionMetric parse_metric(std::string_view name);

/// Supervised intermediate tasks (between pretraining and the target).
bool is_transfer_task(TaskKind task);
/// Pair tasks get a classification head, choice tasks a multiple-choice head.
HeadKind head_kind_for(TaskKind task);

/// One training stage. Keys of the key=value config file are the field
/// names below (paths: train, dev, vocab).
struct StageConfig {
  TaskKind task = TaskKind::sct;
  std::filesystem::path train_path;
  std::filesystem::path dev_path;  // empty: evaluate on the training data
  std::filesystem::path vocab_path;
  bool cased = false;

  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double learning_rate = 3e-5;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  std::size_t max_len = 128;
  std::uint64_t seed = 0;
  std::optional<SelectionMetric> selection_metric;  // default: loss for pretrain, else accuracy
  std::size_t evals_per_epoch = 1;

  // Geometry used for a fresh start; must match an initial checkpoint.
  ModelConfig model;
  bool geometry_set = false;  // a geometry key was given explicitly
  double init_std = 0.02;

  // pretrain
  double mask_rate = 0.15;
  std::size_t pretrain_examples = 0;  // per epoch; 0 = one per corpus sentence

  // nli: keep only two categories, "EN", "EC" or "NC"
  std::string nli_categories;

  // run_path guard override
  bool allow_multiple_transfer = false;

  SelectionMetric effective_metric() const;
  /// Throws UsageError for violated invariants.
  void validate() const;
};

/// Sets one field from its config-file key. Throws UsageError for unknown
/// keys or unparsable values.
void set_config_value(StageConfig& config, std::string_view key, std::string_view value);

/// Parses key=value lines; '#' starts a comment. Relative paths resolve
/// against `base_dir`.
StageConfig parse_stage_config(std::string_view text, const std::filesystem::path& base_dir = {});
StageConfig load_stage_config(const std::filesystem::path& path);

/// Renders every field as key=value lines (parse_stage_config round-trips it).
std::string format_stage_config(const StageConfig& config);

}  // namespace transbert
