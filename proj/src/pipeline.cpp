#include "transbert/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include "json.hpp"
#include "transbert/errors.hpp"
#include "transbert/optim.hpp"

namespace transbert {
namespace {

using json = nlohmann::json;

// Stream ids for derive_seed; each consumer of randomness owns one.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kOrderStream = 3;
constexpr std::uint64_t kDropoutStream = 4;
constexpr std::uint64_t kPretrainDevStream = 5;
constexpr std::uint64_t kPretrainEpochStream = 1000;

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

// One task family's view of the data: batch losses with backward, dev scoring.
class TaskRunner {
 public:
  virtual ~TaskRunner() = default;
  virtual std::size_t train_size() const = 0;
  virtual std::size_t dev_size() const = 0;
  virtual void begin_epoch(std::size_t /*epoch*/) {}
  /// Mean loss over the batch; with accumulate_grad adds its gradient.
  virtual double batch_loss(std::span<const std::size_t> batch, const ForwardContext& ctx) = 0;
  virtual Evaluation evaluate() = 0;
  virtual std::vector<ParamSet<float>*> head_params() = 0;
  virtual TaskHead<float>& reported_head() = 0;
};

EncodedInput encode_texts(const std::string& a, const std::string& b, const Vocab& vocab,
                          std::size_t max_len) {
  return encode_pair(tokenize(a, vocab), tokenize(b, vocab), vocab, max_len);
}

class PairRunner : public TaskRunner {
 public:
  PairRunner(const std::vector<PairExample>& train, const std::vector<PairExample>& dev,
             std::size_t num_classes, const Vocab& vocab, std::size_t max_len,
             EncoderParams<float>& encoder, Rng& head_rng, double init_std)
      : encoder_(encoder),
        head_(TaskHead<float>::classification(encoder.config().hidden_size, num_classes)) {
    head_.init(head_rng, init_std);
    auto encode_all = [&](const std::vector<PairExample>& src, std::vector<Item>& dst) {
      for (const auto& ex : src) {
        if (ex.label >= num_classes) {
          throw DataError("pair example label " + std::to_string(ex.label) + " outside " +
                          std::to_string(num_classes) + " classes");
        }
        dst.push_back({encode_texts(ex.text_a, ex.text_b, vocab, max_len), ex.label});
      }
    };
    encode_all(train, train_);
    encode_all(dev.empty() ? train : dev, dev_);
  }

  std::size_t train_size() const override { return train_.size(); }
  std::size_t dev_size() const override { return dev_.size(); }

  double batch_loss(std::span<const std::size_t> batch, const ForwardContext& ctx) override {
    const float scale = 1.0f / static_cast<float>(batch.size());
    double total = 0.0;
    for (std::size_t i : batch) {
      total += classification_loss(train_[i].input, train_[i].label, encoder_, head_, ctx, scale,
                                   true);
    }
    return total / static_cast<double>(batch.size());
  }

  Evaluation evaluate() override {
    std::size_t correct = 0;
    double loss = 0.0;
    for (const auto& item : dev_) {
      std::size_t predicted = 0;
      loss += classification_loss(item.input, item.label, encoder_, head_, ForwardContext{}, 1.0f,
                                  false, &predicted);
      correct += predicted == item.label;
    }
    const auto n = static_cast<double>(dev_.size());
    return {static_cast<double>(correct) / n, loss / n};
  }

  std::vector<ParamSet<float>*> head_params() override { return {&head_.params()}; }
  TaskHead<float>& reported_head() override { return head_; }

 private:
  struct Item {
    EncodedInput input;
    std::size_t label;
  };
  EncoderParams<float>& encoder_;
  TaskHead<float> head_;
  std::vector<Item> train_, dev_;
};

class ChoiceRunner : public TaskRunner {
 public:
  ChoiceRunner(const std::vector<ChoiceExample>& train, const std::vector<ChoiceExample>& dev,
               const Vocab& vocab, std::size_t max_len, EncoderParams<float>& encoder,
               Rng& head_rng, double init_std)
      : encoder_(encoder), head_(TaskHead<float>::multiple_choice(encoder.config().hidden_size)) {
    head_.init(head_rng, init_std);
    auto encode_all = [&](const std::vector<ChoiceExample>& src, std::vector<Item>& dst) {
      for (const auto& ex : src) {
        if (ex.choices.empty() || ex.answer_index >= ex.choices.size()) {
          throw DataError("choice example with answer index " + std::to_string(ex.answer_index) +
                          " and " + std::to_string(ex.choices.size()) + " choices");
        }
        Item item{{}, ex.answer_index};
        const auto context_tokens = tokenize(join_context(ex.context_sentences), vocab);
        for (const auto& choice : ex.choices) {
          item.choices.push_back(encode_pair(context_tokens, tokenize(choice, vocab), vocab, max_len));
        }
        dst.push_back(std::move(item));
      }
    };
    encode_all(train, train_);
    encode_all(dev.empty() ? train : dev, dev_);
  }

  std::size_t train_size() const override { return train_.size(); }
  std::size_t dev_size() const override { return dev_.size(); }

  double batch_loss(std::span<const std::size_t> batch, const ForwardContext& ctx) override {
    const float scale = 1.0f / static_cast<float>(batch.size());
    double total = 0.0;
    for (std::size_t i : batch) {
      total += multiple_choice_loss<float>(train_[i].choices, train_[i].answer, encoder_, head_,
                                           ctx, scale, true);
    }
    return total / static_cast<double>(batch.size());
  }

  Evaluation evaluate() override {
    std::size_t correct = 0;
    double loss = 0.0;
    for (const auto& item : dev_) {
      std::size_t predicted = 0;
      loss += multiple_choice_loss<float>(item.choices, item.answer, encoder_, head_,
                                          ForwardContext{}, 1.0f, false, &predicted);
      correct += predicted == item.answer;
    }
    const auto n = static_cast<double>(dev_.size());
    return {static_cast<double>(correct) / n, loss / n};
  }

  std::vector<ParamSet<float>*> head_params() override { return {&head_.params()}; }
  TaskHead<float>& reported_head() override { return head_; }

 private:
  struct Item {
    std::vector<EncodedInput> choices;
    std::size_t answer;
  };
  EncoderParams<float>& encoder_;
  TaskHead<float> head_;
  std::vector<Item> train_, dev_;
};

// Masking is redrawn every epoch; the dev set is drawn once.
class PretrainRunner : public TaskRunner {
 public:
  PretrainRunner(const StageConfig& config, const SentenceCorpus& train, const SentenceCorpus& dev,
                 const Vocab& vocab, EncoderParams<float>& encoder, Rng& head_rng)
      : config_(config),
        corpus_(train),
        vocab_(vocab),
        encoder_(encoder),
        mlm_(vocab.size()),
        nsp_(TaskHead<float>::classification(encoder.config().hidden_size, 2)) {
    nsp_.init(head_rng, config.init_std);
    policy_.mask_rate = config.mask_rate;
    count_ = config.pretrain_examples ? config.pretrain_examples : train.sentence_count();
    const SentenceCorpus& dev_corpus = dev.documents.empty() ? train : dev;
    dev_ = generate_pretrain_examples(dev_corpus, vocab, config.max_len,
                                      std::min<std::size_t>(count_, dev_corpus.sentence_count()),
                                      derive_seed(config.seed, kPretrainDevStream), policy_);
  }

  std::size_t train_size() const override { return count_; }
  std::size_t dev_size() const override { return dev_.size(); }

  void begin_epoch(std::size_t epoch) override {
    train_ = generate_pretrain_examples(corpus_, vocab_, config_.max_len, count_,
                                        derive_seed(config_.seed, kPretrainEpochStream + epoch),
                                        policy_);
  }

  double batch_loss(std::span<const std::size_t> batch, const ForwardContext& ctx) override {
    std::vector<PretrainExample> examples;
    examples.reserve(batch.size());
    for (std::size_t i : batch) examples.push_back(train_[i]);
    return pretrain_loss<float>(examples, encoder_, mlm_, nsp_, ctx, true);
  }

  Evaluation evaluate() override {
    PretrainStats total;
    double loss = 0.0;
    const std::size_t chunk = std::max<std::size_t>(config_.batch_size, 1);
    for (std::size_t start = 0; start < dev_.size(); start += chunk) {
      const std::size_t n = std::min(chunk, dev_.size() - start);
      PretrainStats stats;
      loss += static_cast<double>(n) *
              pretrain_loss<float>(std::span<const PretrainExample>(dev_).subspan(start, n),
                                   encoder_, mlm_, nsp_, ForwardContext{}, false, &stats);
      total.masked_total += stats.masked_total;
      total.mlm_correct += stats.mlm_correct;
    }
    return {static_cast<double>(total.mlm_correct) / static_cast<double>(total.masked_total),
            loss / static_cast<double>(dev_.size())};
  }

  std::vector<ParamSet<float>*> head_params() override { return {&mlm_.params(), &nsp_.params()}; }
  TaskHead<float>& reported_head() override { return nsp_; }

 private:
  const StageConfig& config_;
  const SentenceCorpus& corpus_;
  const Vocab& vocab_;
  EncoderParams<float>& encoder_;
  MlmHead<float> mlm_;
  TaskHead<float> nsp_;
  MaskingPolicy policy_;
  std::size_t count_ = 0;
  std::vector<PretrainExample> train_, dev_;
};

std::unique_ptr<TaskRunner> make_runner(const StageConfig& config, const StageData& data,
                                        const Vocab& vocab, EncoderParams<float>& encoder,
                                        Rng& head_rng) {
  const char* task = task_name(config.task);
  switch (config.task) {
    case TaskKind::pretrain:
      if (data.train_corpus.sentence_count() == 0) {
        throw DataError(std::string(task) + ": empty training corpus");
      }
      return std::make_unique<PretrainRunner>(config, data.train_corpus, data.dev_corpus, vocab,
                                              encoder, head_rng);
    case TaskKind::nli:
    case TaskKind::sentiment: {
      if (data.train_pairs.empty()) throw DataError(std::string(task) + ": empty training set");
      const std::size_t classes =
          data.num_classes ? data.num_classes : (config.task == TaskKind::nli ? 3 : 2);
      return std::make_unique<PairRunner>(data.train_pairs, data.dev_pairs, classes, vocab,
                                          config.max_len, encoder, head_rng, config.init_std);
    }
    case TaskKind::mc_nli:
    case TaskKind::next_action:
    case TaskKind::sct:
      if (data.train_choices.empty()) throw DataError(std::string(task) + ": empty training set");
      return std::make_unique<ChoiceRunner>(data.train_choices, data.dev_choices, vocab,
                                            config.max_len, encoder, head_rng, config.init_std);
  }
  throw UsageError("unsupported task");
}

std::vector<BasicTensor<float>> snapshot(const std::vector<ParamSet<float>*>& sets) {
  std::vector<BasicTensor<float>> out;
  for (const auto* set : sets) {
    for (const auto& slot : *set) out.push_back(slot.value);
  }
  return out;
}

void restore(const std::vector<ParamSet<float>*>& sets, const std::vector<BasicTensor<float>>& values) {
  std::size_t k = 0;
  for (auto* set : sets) {
    for (auto& slot : *set) slot.value = values[k++];
  }
}

bool first_line_starts_with(const std::filesystem::path& path, std::string_view prefix) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  return line.rfind(prefix, 0) == 0;
}

ModelConfig effective_geometry(const StageConfig& config, const Vocab& vocab, const Checkpoint* init) {
  ModelConfig model = config.model;
  model.vocab_size = vocab.size();
  if (!init) return model;
  if (!config.geometry_set) return init->config();
  if (!(init->config() == model)) {
    throw UsageError("geometry mismatch: stage config and initial checkpoint disagree on the "
                     "encoder geometry");
  }
  return model;
}

}  // namespace

std::vector<ChoiceExample> load_choice_dataset(TaskKind task, const std::filesystem::path& path,
                                               std::uint64_t seed) {
  if (task == TaskKind::mc_nli && path.extension() == ".tsv") {
    return recast_mc_nli(load_pair_tsv(path, PairSchema::nli).examples, seed);
  }
  if (task == TaskKind::sct && !first_line_starts_with(path, "context")) return load_sct(path);
  return load_choice_csv(path);
}

StageData load_stage_data(const StageConfig& config) {
  if (config.train_path.empty()) throw UsageError("config: 'train' is required");
  StageData data;
  switch (config.task) {
    case TaskKind::pretrain:
      data.train_corpus = load_corpus(config.train_path);
      if (!config.dev_path.empty()) data.dev_corpus = load_corpus(config.dev_path);
      break;
    case TaskKind::nli:
    case TaskKind::sentiment: {
      const auto schema = config.task == TaskKind::nli ? PairSchema::nli : PairSchema::sentiment;
      data.train_pairs = load_pair_tsv(config.train_path, schema).examples;
      if (!config.dev_path.empty()) data.dev_pairs = load_pair_tsv(config.dev_path, schema).examples;
      data.num_classes = label_names(schema).size();
      if (!config.nli_categories.empty()) {
        const auto keep = parse_category_pair(config.nli_categories);
        data.train_pairs = filter_nli_categories(data.train_pairs, keep);
        data.dev_pairs = filter_nli_categories(data.dev_pairs, keep);
        data.num_classes = 2;
      }
      break;
    }
    case TaskKind::mc_nli:
    case TaskKind::next_action:
    case TaskKind::sct:
      data.train_choices = load_choice_dataset(config.task, config.train_path, config.seed);
      if (!config.dev_path.empty()) {
        data.dev_choices = load_choice_dataset(config.task, config.dev_path, config.seed);
      }
      break;
  }
  return data;
}

Vocab stage_vocab(const StageConfig& config, const Checkpoint* init) {
  if (!config.vocab_path.empty()) {
    Vocab vocab = Vocab::load(config.vocab_path, config.cased);
    if (init && !(vocab == init->vocab())) {
      throw UsageError("vocabulary " + config.vocab_path.string() +
                       " differs from the initial checkpoint's vocabulary");
    }
    return vocab;
  }
  if (init) return init->vocab();
  throw UsageError("config: 'vocab' is required when starting from scratch");
}

StageResult run_stage(const StageConfig& config, const StageData& data, const Vocab& vocab,
                      const Checkpoint* init) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const ModelConfig model = effective_geometry(config, vocab, init);
  model.validate();
  if (config.max_len > model.max_positions) {
    throw UsageError("max_len " + std::to_string(config.max_len) + " exceeds max_positions " +
                     std::to_string(model.max_positions));
  }
  if (init && init->vocab_tokens != vocab.tokens()) {
    throw UsageError("vocabulary differs from the initial checkpoint's vocabulary");
  }

  EncoderParams<float> encoder(model);
  if (init) {
    for (std::size_t i = 0; i < encoder.params().size(); ++i) {
      encoder.value(i) = init->encoder.value(i);
    }
  } else {
    Rng init_rng(derive_seed(config.seed, kInitStream));
    encoder = EncoderParams<float>::initialized(model, init_rng, config.init_std);
  }

  Rng head_rng(derive_seed(config.seed, kHeadStream));
  auto runner = make_runner(config, data, vocab, encoder, head_rng);
  std::vector<ParamSet<float>*> sets{&encoder.params()};
  for (auto* p : runner->head_params()) sets.push_back(p);

  const SelectionMetric metric = config.effective_metric();
  const std::size_t n = runner->train_size();
  if (n == 0) throw DataError(std::string(task_name(config.task)) + ": empty training set");
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  const LinearWarmupDecay schedule(config.learning_rate, config.epochs * batches,
                                   config.warmup_fraction);
  AdamConfig adam;
  adam.weight_decay = config.weight_decay;

  std::vector<std::size_t> eval_after;
  for (std::size_t k = 1; k <= config.evals_per_epoch; ++k) {
    const std::size_t b = std::max<std::size_t>(1, k * batches / config.evals_per_epoch);
    if (eval_after.empty() || eval_after.back() != b) eval_after.push_back(b);
  }

  TrainReport report;
  report.task = task_name(config.task);
  report.selection_metric = metric_name(metric);
  report.evals_per_epoch = eval_after.size();
  report.train_examples = n;
  report.dev_examples = runner->dev_size();

  Rng order_rng(derive_seed(config.seed, kOrderStream));
  Rng dropout_rng(derive_seed(config.seed, kDropoutStream));
  const ForwardContext train_ctx{true, &dropout_rng};
  std::vector<std::size_t> order(n);
  std::vector<BasicTensor<float>> best;
  std::optional<double> best_value;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    runner->begin_epoch(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t next_eval = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t count = std::min(config.batch_size, n - begin);
      for (auto* set : sets) set->zero_grad();
      const double loss =
          runner->batch_loss(std::span<const std::size_t>(order).subspan(begin, count), train_ctx);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                           ", step " + std::to_string(step + 1));
      }
      epoch_loss += loss * static_cast<double>(count);
      adam.learning_rate = schedule.at(step);
      adam_step(sets, adam);
      ++step;

      if (next_eval < eval_after.size() && b + 1 == eval_after[next_eval]) {
        ++next_eval;
        const Evaluation ev = runner->evaluate();
        const double value = metric == SelectionMetric::accuracy ? ev.accuracy : ev.loss;
        report.dev_metric.push_back(value);
        const bool better = !best_value || (metric == SelectionMetric::accuracy
                                                ? value > *best_value
                                                : value < *best_value);
        if (better) {
          best_value = value;
          best = snapshot(sets);
          report.best_epoch = epoch + 1;
          report.best_eval = report.dev_metric.size();
        }
      }
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  report.steps = step;
  report.best_dev_metric = *best_value;
  restore(sets, best);

  EncoderParams<float> out(model);
  for (std::size_t i = 0; i < out.params().size(); ++i) out.value(i) = encoder.value(i);
  const TaskHead<float>& trained_head = runner->reported_head();
  TaskHead<float> head = trained_head.cast<float>();

  Checkpoint ck{std::move(out), vocab.tokens(), vocab.cased(),
                init ? init->provenance : std::vector<StageRecord>{}};
  ck.provenance.push_back({task_name(config.task), init ? "checkpoint" : "scratch", config.seed,
                           config.epochs, report.best_epoch, metric_name(metric),
                           report.best_dev_metric});
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(ck), std::move(head), std::move(report)};
}

StageResult run_stage(const StageConfig& config, const Checkpoint* init) {
  const Vocab vocab = stage_vocab(config, init);
  return run_stage(config, load_stage_data(config), vocab, init);
}

void check_transfer_guard(const std::vector<StageRecord>& provenance,
                          const std::vector<TaskKind>& upcoming, bool allow_multiple) {
  if (allow_multiple) return;
  std::size_t count = 0;
  for (const auto& r : provenance) count += is_transfer_task(parse_task(r.task));
  for (auto t : upcoming) count += is_transfer_task(t);
  if (count > 1) {
    throw UsageError("path applies " + std::to_string(count) +
                     " supervised transfer stages; at most one is allowed unless "
                     "allow_multiple_transfer is set");
  }
}

PathResult run_path(const std::vector<StageSpec>& stages, const Vocab& vocab,
                    const Checkpoint* start, bool allow_multiple_transfer) {
  if (stages.empty()) throw UsageError("run_path: no stages");
  std::vector<TaskKind> tasks;
  for (const auto& s : stages) {
    tasks.push_back(s.config.task);
    allow_multiple_transfer = allow_multiple_transfer || s.config.allow_multiple_transfer;
  }
  check_transfer_guard(start ? start->provenance : std::vector<StageRecord>{}, tasks,
                       allow_multiple_transfer);

  std::optional<StageResult> current;
  std::vector<TrainReport> reports;
  for (const auto& s : stages) {
    const Checkpoint* init = current ? &current->checkpoint : start;
    StageResult next = run_stage(s.config, s.data, vocab, init);
    reports.push_back(next.report);
    current.emplace(std::move(next));
  }
  return {std::move(current->checkpoint), std::move(current->head), std::move(reports)};
}

std::string report_to_json(const TrainReport& r, bool include_wall_time) {
  json j = {{"task", r.task},
            {"selection_metric", r.selection_metric},
            {"train_loss", r.train_loss},
            {"dev_metric", r.dev_metric},
            {"evals_per_epoch", r.evals_per_epoch},
            {"best_epoch", r.best_epoch},
            {"best_eval", r.best_eval},
            {"best_dev_metric", r.best_dev_metric},
            {"train_examples", r.train_examples},
            {"dev_examples", r.dev_examples},
            {"steps", r.steps}};
  if (include_wall_time) j["wall_time_seconds"] = r.wall_time_seconds;
  return j.dump(2);
}

std::string reports_to_json(const std::vector<TrainReport>& reports, bool include_wall_time) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(json::parse(report_to_json(r, include_wall_time)));
  return arr.dump(2);
}

}  // namespace transbert
