#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "transbert/checkpoint.hpp"
#include "transbert/csv.hpp"
#include "transbert/diagnostics.hpp"
#include "transbert/errors.hpp"
#include "transbert/eval.hpp"
#include "transbert/pipeline.hpp"
#include "transbert/synthetic.hpp"
#include "transbert/tokenizer.hpp"
#include "transbert/transfer_data.hpp"

namespace fs = std::filesystem;
using namespace transbert;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;
constexpr double kGradTolerance = 1e-5;

struct StageFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string init;
  std::string out;
  std::string report;
  bool allow_multiple = false;
};

void add_stage_flags(CLI::App* cmd, StageFlags& f, bool with_init) {
  cmd->add_option("--config", f.config, "Stage config file (key=value lines)")->required();
  cmd->add_option("--set", f.sets, "Override one config key, as key=value (repeatable)");
  cmd->add_option("--seed", f.seed, "Override the config seed");
  if (with_init) cmd->add_option("--init", f.init, "Initial checkpoint (omit for fresh init)");
  cmd->add_option("--out", f.out, "Output checkpoint path")->required();
  cmd->add_option("--report", f.report, "Report path (default <out>.report.json)");
}

StageConfig stage_config_from(const StageFlags& f) {
  StageConfig config = load_stage_config(f.config);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) config.seed = *f.seed;
  return config;
}

void print_report(const TrainReport& r) {
  std::cout << "eval\tepoch\t" << r.selection_metric << '\n';
  for (std::size_t i = 0; i < r.dev_metric.size(); ++i) {
    std::cout << i + 1 << '\t' << i / r.evals_per_epoch + 1 << '\t' << r.dev_metric[i] << '\n';
  }
  std::cout << "best_epoch\t" << r.best_epoch << "\nbest_dev_metric\t" << r.best_dev_metric << '\n';
}

int run_training(const StageFlags& f, std::optional<TaskKind> forced_task) {
  StageConfig config = stage_config_from(f);
  if (forced_task) config.task = *forced_task;
  std::optional<Checkpoint> init;
  if (!f.init.empty()) init = load_checkpoint(f.init);
  if (is_transfer_task(config.task)) {
    check_transfer_guard(init ? init->provenance : std::vector<StageRecord>{}, {config.task},
                         f.allow_multiple || config.allow_multiple_transfer);
  }
  const StageResult result = run_stage(config, init ? &*init : nullptr);
  save_checkpoint(result.checkpoint, f.out);
  save_head(result.head, head_path_for(f.out));
  const fs::path report = f.report.empty() ? fs::path(f.out + ".report.json") : fs::path(f.report);
  csv::write_text_atomic(report, report_to_json(result.report, false) + "\n");
  print_report(result.report);
  return 0;
}

int run_eval(const std::string& ck_path, const std::string& data, const std::string& head_path,
             const std::optional<std::string>& subset, bool sweep, bool zero_shot,
             const std::string& statistic, std::optional<std::size_t> max_len,
             const std::string& records_path) {
  const Checkpoint ck = load_checkpoint(ck_path);
  const TaskHead<float> head = load_head(head_path.empty() ? head_path_for(ck_path) : fs::path(head_path));
  const Vocab vocab = ck.vocab();
  const std::size_t len = max_len.value_or(std::min<std::size_t>(128, ck.config().max_positions));
  const auto dataset = load_choice_dataset(TaskKind::sct, data);

  ZeroShotStatistic stat = ZeroShotStatistic::entailment;
  if (statistic == "entailment-minus-contradiction") {
    stat = ZeroShotStatistic::entailment_minus_contradiction;
  } else if (statistic != "entailment") {
    throw UsageError("unknown --statistic '" + statistic + "'");
  }
  if (sweep && subset) throw UsageError("--sweep and --subset are mutually exclusive");
  if (sweep && !records_path.empty()) throw UsageError("--records needs a single evaluation row");

  auto evaluate = [&](const std::vector<ChoiceExample>& ds) {
    return zero_shot ? zero_shot_nli_sct(ck.encoder, head, ds, vocab, len, stat)
                     : evaluate_sct(ck.encoder, head, ds, vocab, len);
  };
  auto reduce = [&](const std::vector<std::size_t>& keep) {
    std::vector<ChoiceExample> out;
    for (const auto& ex : dataset) out.push_back(subset_context(ex, keep));
    return out;
  };

  std::vector<AblationRow> rows;
  if (sweep) {
    for (const auto& keep : standard_context_sweep()) {
      rows.push_back({subset_label(keep), keep, evaluate(reduce(keep)).accuracy});
    }
  } else {
    std::vector<std::size_t> keep;
    std::string label = "full context";
    if (subset) {
      keep = parse_keep_set(*subset);
      label = subset_label(keep);
    }
    const auto result = evaluate(subset ? reduce(keep) : dataset);
    rows.push_back({label, keep, result.accuracy});
    if (!records_path.empty()) csv::write_text_atomic(records_path, records_to_jsonl(result.records));
  }
  std::cout << format_table(rows);
  return 0;
}

int run_gradcheck(const std::string& config_path, std::size_t probes, const std::string& target) {
  ModelGradCheckOptions opt;
  if (!config_path.empty()) {
    const StageConfig c = load_stage_config(config_path);
    opt.model = c.model;
    opt.max_len = c.max_len;
    opt.batch_size = c.batch_size;
    opt.seed = c.seed;
  }
  opt.probes = probes;
  std::vector<GradCheckTarget> targets;
  for (auto t : {GradCheckTarget::classification, GradCheckTarget::multiple_choice,
                 GradCheckTarget::pretrain}) {
    if (target == "all" || target == grad_check_target_name(t)) targets.push_back(t);
  }
  if (targets.empty()) throw UsageError("unknown --target '" + target + "'");

  double worst = 0.0;
  std::cout << "target\tmax_rel_error\tworst_param\n";
  for (auto t : targets) {
    const auto r = check_model_gradients(t, opt);
    std::printf("%s\t%.3e\t%s[%zu]\n", grad_check_target_name(t), r.max_rel_error,
                r.worst_param.c_str(), r.worst_index);
    worst = std::max(worst, r.max_rel_error);
  }
  std::printf("max_relative_error\t%.3e\n", worst);
  std::fflush(stdout);
  return worst < kGradTolerance ? 0 : kExitNumeric;
}

int run_synth(const std::string& kind, std::size_t count, std::uint64_t seed, const std::string& out) {
  if (kind == "stories") {
    save_sct(out, synth::stories(count, seed));
  } else if (kind == "nli") {
    save_pair_tsv(out, synth::nli(count, seed), PairSchema::nli);
  } else if (kind == "sentiment") {
    save_pair_tsv(out, synth::sentiment(count, seed), PairSchema::sentiment);
  } else if (kind == "next-action") {
    save_choice_csv(out, synth::next_action(count, seed));
  } else if (kind == "corpus") {
    csv::write_text_atomic(out, synth::corpus_text(synth::corpus(count, seed)));
  } else if (kind == "lexicon") {
    csv::write_text_atomic(out, synth::lexicon_text());
  } else {
    throw UsageError("unknown synth kind '" + kind + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Three-stage transfer training for story-ending selection"};
  app.require_subcommand(1);

  std::string corpus, vocab_out;
  std::size_t vocab_size = 0;
  bool cased = false;
  auto* vocab_cmd = app.add_subcommand("vocab-train", "Learn a subword vocabulary from a corpus");
  vocab_cmd->add_option("--corpus", corpus, "Training text")->required();
  vocab_cmd->add_option("--size", vocab_size, "Target vocabulary size")->required();
  vocab_cmd->add_option("--out", vocab_out, "Vocabulary file to write")->required();
  vocab_cmd->add_flag("--cased", cased, "Keep letter case");

  StageFlags pretrain_flags, transfer_flags, finetune_flags;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Stage 1: masked LM + next-sentence pretraining");
  add_stage_flags(pretrain_cmd, pretrain_flags, true);

  std::string transfer_task;
  auto* transfer_cmd = app.add_subcommand("transfer", "Stage 2: supervised transfer task");
  transfer_cmd->add_option("--task", transfer_task, "nli, mc_nli, sentiment or next_action")
      ->required();
  add_stage_flags(transfer_cmd, transfer_flags, true);
  transfer_cmd->add_flag("--allow-multiple-transfer", transfer_flags.allow_multiple,
                         "Permit more than one transfer stage on a path");

  auto* finetune_cmd = app.add_subcommand("finetune", "Stage 3: fine-tune on the story cloze task");
  add_stage_flags(finetune_cmd, finetune_flags, true);

  std::string eval_ck, eval_data, eval_head, eval_statistic = "entailment", eval_records;
  std::optional<std::string> eval_subset;
  std::optional<std::size_t> eval_max_len;
  bool eval_sweep = false, eval_zero_shot = false;
  auto* eval_cmd = app.add_subcommand("eval", "Story-ending accuracy, context ablations, zero-shot NLI");
  eval_cmd->add_option("--ck", eval_ck, "Checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "Story CSV or generic choice CSV")->required();
  eval_cmd->add_option("--head", eval_head, "Head file (default <ck>.head)");
  eval_cmd->add_option("--subset", eval_subset, "Context sentences to keep, e.g. \"3,4\"; \"\" = ending only");
  eval_cmd->add_flag("--sweep", eval_sweep, "Evaluate the five standard context subsets");
  eval_cmd->add_flag("--zero-shot-nli", eval_zero_shot, "Score endings with a 3-class NLI head");
  eval_cmd->add_option("--statistic", eval_statistic,
                       "Zero-shot score: entailment or entailment-minus-contradiction");
  eval_cmd->add_option("--max-len", eval_max_len, "Sequence length (default min(128, max_positions))");
  eval_cmd->add_option("--records", eval_records, "Write one JSON record per example");

  auto* recast_cmd = app.add_subcommand("recast", "Derive transfer datasets from NLI data");
  recast_cmd->require_subcommand(1);
  std::string mc_in, mc_out, filter_in, filter_out, filter_keep;
  std::uint64_t mc_seed = 0;
  auto* mc_cmd = recast_cmd->add_subcommand("mc-nli", "NLI TSV to two-way choice CSV");
  mc_cmd->add_option("--in", mc_in, "NLI TSV")->required();
  mc_cmd->add_option("--out", mc_out, "Choice CSV")->required();
  mc_cmd->add_option("--seed", mc_seed, "Choice-order seed");
  auto* filter_cmd = recast_cmd->add_subcommand("filter", "Keep two NLI categories");
  filter_cmd->add_option("--keep", filter_keep, "EN, EC or NC")->required();
  filter_cmd->add_option("--in", filter_in, "NLI TSV")->required();
  filter_cmd->add_option("--out", filter_out, "Filtered TSV")->required();

  std::string gc_config, gc_target = "all";
  std::size_t gc_probes = 200;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check in 64-bit mode");
  gc_cmd->add_option("--config", gc_config, "Config supplying geometry, max_len, batch_size, seed");
  gc_cmd->add_option("--probes", gc_probes, "Coordinates probed per target");
  gc_cmd->add_option("--target", gc_target, "classification, multiple_choice, pretrain or all");

  std::string split_in, split_train, split_dev;
  std::uint64_t split_seed = 0;
  auto* split_cmd = app.add_subcommand("split-sct", "Split the 1,871-row SCT file into train/dev");
  split_cmd->add_option("--in", split_in, "SCT CSV")->required();
  split_cmd->add_option("--seed", split_seed, "Shuffle seed");
  split_cmd->add_option("--out-train", split_train, "Training CSV (1,771 rows)")->required();
  split_cmd->add_option("--out-dev", split_dev, "Development CSV (100 rows)")->required();

  std::string synth_kind, synth_out;
  std::size_t synth_count = 100;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset");
  synth_cmd->add_option("--kind", synth_kind, "stories, nli, sentiment, next-action, corpus or lexicon")
      ->required();
  synth_cmd->add_option("--count", synth_count, "Examples (documents for corpus)");
  synth_cmd->add_option("--seed", synth_seed, "Generator seed");
  synth_cmd->add_option("--out", synth_out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (vocab_cmd->parsed()) {
      std::ifstream in(corpus);
      if (!in) throw DataError("cannot open corpus " + corpus);
      const Vocab v = train_vocab(in, vocab_size, cased);
      v.save(vocab_out);
      std::cout << "vocab_size\t" << v.size() << '\n';
      return 0;
    }
    if (pretrain_cmd->parsed()) return run_training(pretrain_flags, TaskKind::pretrain);
    if (transfer_cmd->parsed()) {
      const TaskKind task = parse_task(transfer_task);
      if (!is_transfer_task(task)) {
        throw UsageError("--task must be nli, mc_nli, sentiment or next_action");
      }
      return run_training(transfer_flags, task);
    }
    if (finetune_cmd->parsed()) return run_training(finetune_flags, TaskKind::sct);
    if (eval_cmd->parsed()) {
      return run_eval(eval_ck, eval_data, eval_head, eval_subset, eval_sweep, eval_zero_shot,
                      eval_statistic, eval_max_len, eval_records);
    }
    if (mc_cmd->parsed()) {
      const auto loaded = load_pair_tsv(mc_in, PairSchema::nli);
      const auto recast = recast_mc_nli(loaded.examples, mc_seed);
      save_choice_csv(mc_out, recast);
      std::cout << "pairs\t" << loaded.examples.size() << "\nskipped\t" << loaded.skipped
                << "\nchoice_examples\t" << recast.size() << '\n';
      return 0;
    }
    if (filter_cmd->parsed()) {
      const auto loaded = load_pair_tsv(filter_in, PairSchema::nli);
      const auto kept = filter_nli_categories(loaded.examples, parse_category_pair(filter_keep));
      save_pair_tsv(filter_out, kept, PairSchema::nli);
      std::cout << "kept\t" << kept.size() << '\n';
      return 0;
    }
    if (gc_cmd->parsed()) return run_gradcheck(gc_config, gc_probes, gc_target);
    if (split_cmd->parsed()) {
      const auto split = split_sct_v10(load_sct(split_in), split_seed);
      save_sct(split_train, split.train);
      save_sct(split_dev, split.dev);
      std::cout << "train\t" << split.train.size() << "\ndev\t" << split.dev.size() << '\n';
      return 0;
    }
    if (synth_cmd->parsed()) return run_synth(synth_kind, synth_count, synth_seed, synth_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
