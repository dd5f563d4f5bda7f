#include "transbert/stage_config.hpp"

#include <charconv>
#include <sstream>

#include "transbert/csv.hpp"
#include "transbert/errors.hpp"
#include "transbert/transfer_data.hpp"

namespace transbert {
namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError("config: '" + std::string(key) + "' expects a non-negative integer, got '" +
                     std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw UsageError("config: '" + std::string(key) + "' expects a number, got '" +
                     std::string(v) + "'");
  }
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config: '" + std::string(key) + "' expects true/false, got '" +
                   std::string(v) + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

const char* task_name(TaskKind task) {
  switch (task) {
    case TaskKind::pretrain: return "pretrain";
    case TaskKind::nli: return "nli";
    case TaskKind::mc_nli: return "mc_nli";
    case TaskKind::sentiment: return "sentiment";
    case TaskKind::next_action: return "next_action";
    case TaskKind::sct: return "sct";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  for (auto t : {TaskKind::pretrain, TaskKind::nli, TaskKind::mc_nli, TaskKind::sentiment,
                 TaskKind::next_action, TaskKind::sct}) {
    if (name == task_name(t)) return t;
  }
  throw UsageError("unknown task '" + std::string(name) +
                   "' (expected pretrain, nli, mc_nli, sentiment, next_action or sct)");
}

const char* metric_name(SelectionMetric metric) {
  return metric == SelectionMetric::accuracy ? "accuracy" : "loss";
}

SelectionMetric parse_metric(std::string_view name) {
  if (name == "accuracy") return SelectionMetric::accuracy;
  if (name == "loss") return SelectionMetric::loss;
  throw UsageError("unknown selection metric '" + std::string(name) + "'");
}

bool is_transfer_task(TaskKind task) {
  return task == TaskKind::nli || task == TaskKind::mc_nli || task == TaskKind::sentiment ||
         task == TaskKind::next_action;
}

HeadKind head_kind_for(TaskKind task) {
  return task == TaskKind::nli || task == TaskKind::sentiment || task == TaskKind::pretrain
             ? HeadKind::classification
             : HeadKind::multiple_choice;
}

SelectionMetric StageConfig::effective_metric() const {
  if (selection_metric) return *selection_metric;
  return task == TaskKind::pretrain ? SelectionMetric::loss : SelectionMetric::accuracy;
}

void StageConfig::validate() const {
  if (epochs < 1) throw UsageError("config: epochs must be >= 1");
  if (batch_size < 1) throw UsageError("config: batch_size must be >= 1");
  if (evals_per_epoch < 1) throw UsageError("config: evals_per_epoch must be >= 1");
  if (!(learning_rate >= 0.0)) throw UsageError("config: learning_rate must be >= 0");
  if (max_len < 3) throw UsageError("config: max_len must be >= 3");
  if (max_len > model.max_positions) {
    throw UsageError("config: max_len " + std::to_string(max_len) + " exceeds max_positions " +
                     std::to_string(model.max_positions));
  }
  if (!nli_categories.empty()) {
    if (task != TaskKind::nli) throw UsageError("config: nli_categories applies only to task=nli");
    parse_category_pair(nli_categories);
  }
}

void set_config_value(StageConfig& c, std::string_view key, std::string_view value) {
  const std::string_view v = trim(value);
  if (key == "task") {
    c.task = parse_task(v);
  } else if (key == "train") {
    c.train_path = std::string(v);
  } else if (key == "dev") {
    c.dev_path = std::string(v);
  } else if (key == "vocab") {
    c.vocab_path = std::string(v);
  } else if (key == "cased") {
    c.cased = parse_bool(key, v);
  } else if (key == "epochs") {
    c.epochs = parse_u64(key, v);
  } else if (key == "batch_size") {
    c.batch_size = parse_u64(key, v);
  } else if (key == "learning_rate") {
    c.learning_rate = parse_double(key, v);
  } else if (key == "warmup_fraction") {
    c.warmup_fraction = parse_double(key, v);
  } else if (key == "weight_decay") {
    c.weight_decay = parse_double(key, v);
  } else if (key == "max_len") {
    c.max_len = parse_u64(key, v);
  } else if (key == "seed") {
    c.seed = parse_u64(key, v);
  } else if (key == "selection_metric") {
    c.selection_metric = parse_metric(v);
  } else if (key == "evals_per_epoch") {
    c.evals_per_epoch = parse_u64(key, v);
  } else if (key == "num_layers") {
    c.model.num_layers = parse_u64(key, v);
    c.geometry_set = true;
  } else if (key == "hidden_size") {
    c.model.hidden_size = parse_u64(key, v);
    c.geometry_set = true;
  } else if (key == "num_heads") {
    c.model.num_heads = parse_u64(key, v);
    c.geometry_set = true;
  } else if (key == "ffn_size") {
    c.model.ffn_size = parse_u64(key, v);
    c.geometry_set = true;
  } else if (key == "max_positions") {
    c.model.max_positions = parse_u64(key, v);
    c.geometry_set = true;
  } else if (key == "dropout_keep") {
    c.model.dropout_keep = parse_double(key, v);
    c.geometry_set = true;
  } else if (key == "init_std") {
    c.init_std = parse_double(key, v);
  } else if (key == "mask_rate") {
    c.mask_rate = parse_double(key, v);
  } else if (key == "pretrain_examples") {
    c.pretrain_examples = parse_u64(key, v);
  } else if (key == "nli_categories") {
    c.nli_categories = std::string(v);
  } else if (key == "allow_multiple_transfer") {
    c.allow_multiple_transfer = parse_bool(key, v);
  } else {
    throw UsageError("config: unknown key '" + std::string(key) + "'");
  }
}

StageConfig parse_stage_config(std::string_view text, const std::filesystem::path& base_dir) {
  StageConfig c;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    set_config_value(c, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  if (!base_dir.empty()) {
    for (auto* p : {&c.train_path, &c.dev_path, &c.vocab_path}) {
      if (!p->empty() && p->is_relative()) *p = base_dir / *p;
    }
  }
  return c;
}

StageConfig load_stage_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = csv::read_text(path);
  } catch (const DataError&) {
    throw UsageError("cannot read config file " + path.string());
  }
  return parse_stage_config(text, path.parent_path());
}

std::string format_stage_config(const StageConfig& c) {
  std::ostringstream out;
  out << "task=" << task_name(c.task) << '\n'
      << "train=" << c.train_path.string() << '\n'
      << "dev=" << c.dev_path.string() << '\n'
      << "vocab=" << c.vocab_path.string() << '\n'
      << "cased=" << (c.cased ? "true" : "false") << '\n'
      << "epochs=" << c.epochs << '\n'
      << "batch_size=" << c.batch_size << '\n'
      << "learning_rate=" << format_double(c.learning_rate) << '\n'
      << "warmup_fraction=" << format_double(c.warmup_fraction) << '\n'
      << "weight_decay=" << format_double(c.weight_decay) << '\n'
      << "max_len=" << c.max_len << '\n'
      << "seed=" << c.seed << '\n'
      << "selection_metric=" << metric_name(c.effective_metric()) << '\n'
      << "evals_per_epoch=" << c.evals_per_epoch << '\n'
      << "num_layers=" << c.model.num_layers << '\n'
      << "hidden_size=" << c.model.hidden_size << '\n'
      << "num_heads=" << c.model.num_heads << '\n'
      << "ffn_size=" << c.model.ffn_size << '\n'
      << "max_positions=" << c.model.max_positions << '\n'
      << "dropout_keep=" << format_double(c.model.dropout_keep) << '\n'
      << "init_std=" << format_double(c.init_std) << '\n'
      << "mask_rate=" << format_double(c.mask_rate) << '\n'
      << "pretrain_examples=" << c.pretrain_examples << '\n'
      << "nli_categories=" << c.nli_categories << '\n'
      << "allow_multiple_transfer=" << (c.allow_multiple_transfer ? "true" : "false") << '\n';
  return out.str();
}

}  // namespace transbert
