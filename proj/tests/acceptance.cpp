// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "test_support.hpp"
#include "transbert/checkpoint.hpp"
#include "transbert/diagnostics.hpp"
#include "transbert/eval.hpp"
#include "transbert/ops.hpp"
#include "transbert/pipeline.hpp"
#include "transbert/synthetic.hpp"

using namespace transbert;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ",") + fmt("%.3f", x);
  return out;
}

const Vocab& toy_vocab() {
  static const Vocab v = train_vocab(synth::lexicon_text(), 200, false);
  return v;
}

// Geometry shared by the transfer, ablation and determinism checks.
StageConfig toy_stage(TaskKind task, std::uint64_t seed) {
  StageConfig c;
  c.task = task;
  c.seed = seed;
  c.learning_rate = 1e-3;
  c.max_len = 48;
  c.model.num_layers = 2;
  c.model.hidden_size = 32;
  c.model.num_heads = 2;
  c.model.ffn_size = 64;
  c.model.max_positions = 64;
  c.geometry_set = true;
  switch (task) {
    case TaskKind::pretrain:
      c.epochs = 3;
      c.batch_size = 16;
      break;
    case TaskKind::nli:
      c.epochs = 8;
      c.batch_size = 32;
      break;
    default:
      c.epochs = 10;
      c.batch_size = 8;
      break;
  }
  return c;
}

// ---- AC-1 ----------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelGradCheckOptions opt;  // 2 layers, d=32, 2 heads, batch of 4
  double worst = 0.0;
  std::string detail;
  for (auto target : {GradCheckTarget::classification, GradCheckTarget::multiple_choice,
                      GradCheckTarget::pretrain}) {
    const auto r = check_model_gradients(target, opt);
    worst = std::max(worst, r.max_rel_error);
    detail += std::string(grad_check_target_name(target)) + "=" + fmt("%.2e", r.max_rel_error) + " ";
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 120.0, detail + "runtime=" + fmt("%.1fs", secs)};
}

// ---- AC-2 ----------------------------------------------------------------

Outcome trainability() {
  const auto t0 = std::chrono::steady_clock::now();
  StageConfig c;
  c.task = TaskKind::sct;
  c.seed = 0;
  c.epochs = 200;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  c.max_len = 48;
  c.model.num_layers = 2;
  c.model.hidden_size = 64;
  c.model.num_heads = 4;
  c.model.ffn_size = 128;
  c.model.max_positions = 64;
  c.geometry_set = true;
  StageData data;
  data.train_choices = synth::stories(32, 0);  // empty dev: evaluated on the training set
  const auto r = run_stage(c, data, toy_vocab()).report;
  const auto hit = std::find(r.dev_metric.begin(), r.dev_metric.end(), 1.0);
  const double secs = seconds_since(t0);
  const bool pass = hit != r.dev_metric.end() && secs < 300.0;
  const std::string when =
      pass ? "first at epoch " + std::to_string(hit - r.dev_metric.begin() + 1) : "never";
  return {pass, "train accuracy " + fmt("%.3f", r.best_dev_metric) + ", 100% " + when +
                    ", runtime=" + fmt("%.1fs", secs)};
}

// ---- AC-3 and AC-6 share trained target models ---------------------------

struct TransferRun {
  std::vector<double> transfer, baseline;
  std::vector<Checkpoint> models;
  std::vector<TaskHead<float>> heads;
  std::vector<ChoiceExample> dev;
  double seconds = 0.0;
};

const TransferRun& transfer_run() {
  static const TransferRun run = [] {
    const auto t0 = std::chrono::steady_clock::now();
    TransferRun out;
    StageData pre;
    pre.train_corpus = synth::corpus(60, 0);
    const auto pretrained = run_stage(toy_stage(TaskKind::pretrain, 0), pre, toy_vocab());

    StageData nli;
    nli.train_pairs = synth::nli(2400, 1);
    nli.dev_pairs = synth::nli(150, 2);
    nli.num_classes = 3;
    StageData sct;
    sct.train_choices = synth::stories(40, 3);
    sct.dev_choices = synth::stories(200, 4);
    out.dev = sct.dev_choices;

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto path = run_path({{toy_stage(TaskKind::nli, seed), nli},
                                  {toy_stage(TaskKind::sct, seed), sct}},
                                 toy_vocab(), &pretrained.checkpoint);
      const auto direct = run_stage(toy_stage(TaskKind::sct, seed), sct, toy_vocab(),
                                    &pretrained.checkpoint);
      out.transfer.push_back(path.reports.back().best_dev_metric);
      out.baseline.push_back(direct.report.best_dev_metric);
      out.models.push_back(path.checkpoint);
      out.heads.push_back(path.head);
    }
    out.seconds = seconds_since(t0);
    return out;
  }();
  return run;
}

Outcome transfer_effect() {
  const auto& r = transfer_run();
  const double t = mean(r.transfer);
  const double b = mean(r.baseline);
  return {t >= b, "[nli->sct] mean " + fmt("%.3f", t) + " (" + list(r.transfer) + ") vs [sct] mean " +
                      fmt("%.3f", b) + " (" + list(r.baseline) + "), runtime=" +
                      fmt("%.1fs", r.seconds)};
}

// ---- AC-4 ----------------------------------------------------------------

using RecastKey = std::tuple<std::string, std::string, std::string>;  // premise, right, wrong

// Independent re-derivation: scan every premise, take the earliest row per
// label by position, and apply the three ordering rules.
std::multiset<RecastKey> brute_force_recast(const std::vector<PairExample>& rows) {
  std::set<std::string> premises;
  for (const auto& r : rows) premises.insert(r.text_a);
  std::multiset<RecastKey> out;
  for (const auto& p : premises) {
    std::string first[3];
    bool seen[3] = {false, false, false};
    for (const auto& r : rows) {
      if (r.text_a == p && !seen[r.label]) {
        seen[r.label] = true;
        first[r.label] = r.text_b;
      }
    }
    const int rules[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& rule : rules) {
      if (seen[rule[0]] && seen[rule[1]]) out.insert({p, first[rule[0]], first[rule[1]]});
    }
  }
  return out;
}

Outcome recast_oracle() {
  Rng rng(42);
  std::vector<PairExample> rows;
  for (int p = 0; p < 49; ++p) {  // plus the all-label premise below
    const std::string premise = "premise " + std::to_string(p) + " .";
    const int hyps = 1 + static_cast<int>(rng.below(6));
    for (int h = 0; h < hyps; ++h) {
      rows.push_back({premise, "hyp " + std::to_string(p) + "-" + std::to_string(h) + " .",
                      rng.below(3), nli_label_names()});
    }
  }
  rng.shuffle(std::span<PairExample>(rows));
  const std::vector<PairExample> all_three = {
      {"full .", "n .", 1, nli_label_names()},
      {"full .", "c .", 2, nli_label_names()},
      {"full .", "e .", 0, nli_label_names()}};
  rows.insert(rows.end(), all_three.begin(), all_three.end());

  const auto recast = recast_mc_nli(rows, 7);
  std::multiset<RecastKey> got;
  for (const auto& c : recast) {
    if (c.choices.size() != 2 || c.context_sentences.size() != 1) return {false, "malformed choice"};
    got.insert({c.context_sentences[0], c.choices[c.answer_index], c.choices[1 - c.answer_index]});
  }
  const auto want = brute_force_recast(rows);
  const bool match = got == want;

  std::map<std::string, std::size_t> label_of = {{"e .", 0}, {"n .", 1}, {"c .", 2}};
  std::string answers;
  for (const auto& c : recast) {
    if (c.context_sentences[0] == "full .") {
      answers += "ENC"[label_of[c.choices[c.answer_index]]];
    }
  }
  return {match && answers == "EEN",
          std::to_string(got.size()) + " recast examples " + (match ? "match" : "differ from") +
              " the oracle; all-label premise answers " + answers};
}

// ---- AC-5 ----------------------------------------------------------------

Outcome checkpoint_integrity() {
  test_support::TempDir dir;
  Rng rng(5);
  std::size_t identical = 0;
  bool head_free = true;
  for (int i = 0; i < 20; ++i) {
    ModelConfig m;
    m.num_heads = 1 + rng.below(4);
    m.hidden_size = m.num_heads * (2 + rng.below(7));
    m.num_layers = 1 + rng.below(3);
    m.ffn_size = m.hidden_size + rng.below(40);
    m.max_positions = 8 + rng.below(40);
    m.dropout_keep = 0.5 + 0.5 * rng.uniform();
    std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    const std::size_t extra = 1 + rng.below(60);
    for (std::size_t t = 0; t < extra; ++t) tokens.push_back("w" + std::to_string(t));
    m.vocab_size = tokens.size();
    Rng init(derive_seed(5, i));
    Checkpoint ck{EncoderParams<float>::initialized(m, init, 0.5), tokens, rng.bernoulli(0.5),
                  {{"pretrain", "scratch", static_cast<std::uint64_t>(i), 3, 2, "loss", 0.25 * i}}};
    const auto a = dir / ("a" + std::to_string(i) + ".ck");
    const auto b = dir / ("b" + std::to_string(i) + ".ck");
    save_checkpoint(ck, a);
    save_checkpoint(load_checkpoint(a), b);
    identical += test_support::read_file(a) == test_support::read_file(b);
    for (const auto& e : read_checkpoint_manifest(a)) {
      if (e.name.find("head") != std::string::npos) head_free = false;
    }
  }

  const std::string bytes = test_support::read_file(dir / "a0.ck");
  std::string magic = bytes;
  magic[1] = '?';
  test_support::write_file(dir / "magic.ck", magic);
  test_support::write_file(dir / "short.ck", bytes.substr(0, bytes.size() - 3));
  auto kind_of = [](const std::filesystem::path& p) -> std::string {
    try {
      (void)load_checkpoint(p);
      return "loaded";
    } catch (const CheckpointError& e) {
      switch (e.kind()) {
        case CheckpointError::Kind::bad_magic: return "bad_magic";
        case CheckpointError::Kind::truncated_payload: return "truncated_payload";
        default: return "other";
      }
    }
  };
  const auto k1 = kind_of(dir / "magic.ck");
  const auto k2 = kind_of(dir / "short.ck");
  const bool pass = identical == 20 && head_free && k1 == "bad_magic" && k2 == "truncated_payload";
  return {pass, std::to_string(identical) + "/20 byte-identical round trips; corrupt magic -> " + k1 +
                    ", truncated -> " + k2 + "; manifests " +
                    (head_free ? "head-free" : "contain head tensors")};
}

// ---- AC-6 ----------------------------------------------------------------

Outcome ablation_harness() {
  const auto& r = transfer_run();
  const auto sweep = standard_context_sweep();
  const std::vector<std::string> want = {"ending only", "(4)", "(3,4)", "(2,3,4)", "(1,2,3,4)"};
  bool labels_ok = true;
  bool full_equal = true;
  std::vector<double> ending, full;
  for (std::size_t s = 0; s < r.models.size(); ++s) {
    const auto rows =
        ablate_context(r.models[s].encoder, r.heads[s], r.dev, sweep, toy_vocab(), 48);
    if (rows.size() != want.size()) return {false, "sweep emitted " + std::to_string(rows.size()) + " rows"};
    for (std::size_t i = 0; i < rows.size(); ++i) labels_ok &= rows[i].label == want[i];
    const double plain =
        evaluate_sct(r.models[s].encoder, r.heads[s], r.dev, toy_vocab(), 48).accuracy;
    full_equal &= rows.back().accuracy == plain;
    ending.push_back(rows.front().accuracy);
    full.push_back(rows.back().accuracy);
  }
  const bool direction = mean(ending) <= mean(full);
  return {labels_ok && full_equal && direction,
          std::string("labels ") + (labels_ok ? "ok" : "wrong") + ", keep={1,2,3,4} " +
              (full_equal ? "==" : "!=") + " evaluate_sct, ending-only mean " +
              fmt("%.3f", mean(ending)) + " vs full " + fmt("%.3f", mean(full))};
}

// ---- AC-7 ----------------------------------------------------------------

Outcome category_filter() {
  const auto rows = synth::nli(301, 8);
  std::size_t total = 0;
  bool labels_ok = true;
  bool rows_ok = true;
  std::string sizes;
  for (const char* code : {"EN", "NC", "EC"}) {
    const auto kept_pair = parse_category_pair(code);
    const auto kept = filter_nli_categories(rows, kept_pair);
    std::vector<const PairExample*> expected;
    for (const auto& r : rows) {
      if (r.label == static_cast<std::size_t>(kept_pair.first) ||
          r.label == static_cast<std::size_t>(kept_pair.second)) {
        expected.push_back(&r);
      }
    }
    rows_ok &= expected.size() == kept.size();
    for (std::size_t i = 0; rows_ok && i < kept.size(); ++i) {
      const std::size_t want = expected[i]->label == static_cast<std::size_t>(kept_pair.first) ? 0 : 1;
      rows_ok &= kept[i].text_a == expected[i]->text_a && kept[i].text_b == expected[i]->text_b;
      labels_ok &= kept[i].label == want;
    }
    total += kept.size();
    sizes += std::string(code) + "=" + std::to_string(kept.size()) + " ";
  }
  return {total == 2 * rows.size() && labels_ok && rows_ok,
          sizes + "sum=" + std::to_string(total) + " (2N=" + std::to_string(2 * rows.size()) +
              "), labels " + (labels_ok ? "in {0,1}" : "wrong")};
}

// ---- AC-8 ----------------------------------------------------------------

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  auto full_path = [] {
    StageSpec pre{toy_stage(TaskKind::pretrain, 1), {}};
    pre.data.train_corpus = synth::corpus(20, 10);
    StageSpec nli{toy_stage(TaskKind::nli, 2), {}};
    nli.config.epochs = 2;
    nli.data.train_pairs = synth::nli(300, 11);
    nli.data.dev_pairs = synth::nli(60, 12);
    nli.data.num_classes = 3;
    StageSpec sct{toy_stage(TaskKind::sct, 3), {}};
    sct.config.epochs = 3;
    sct.data.train_choices = synth::stories(24, 13);
    sct.data.dev_choices = synth::stories(40, 14);
    return run_path({pre, nli, sct}, toy_vocab());
  };
  test_support::TempDir dir;
  const auto a = full_path();
  const auto b = full_path();
  save_head(a.head, dir / "a.head");
  save_head(b.head, dir / "b.head");
  const bool ck = serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint);
  const bool head = test_support::read_file(dir / "a.head") == test_support::read_file(dir / "b.head");
  const bool reports = reports_to_json(a.reports, false) == reports_to_json(b.reports, false);
  const double secs = seconds_since(t0);
  return {ck && head && reports && secs < 600.0,
          std::string("checkpoints ") + (ck ? "identical" : "differ") + ", heads " +
              (head ? "identical" : "differ") + ", reports " + (reports ? "identical" : "differ") +
              ", runtime=" + fmt("%.1fs", secs)};
}

// ---- AC-9 ----------------------------------------------------------------

Outcome invariance_suite() {
  std::vector<std::string> failures;

  Rng rng(9);
  BasicTensor<float> logits(Shape{64, 7});
  for (auto& x : logits.values()) x = static_cast<float>(20.0 * (rng.uniform() - 0.5));
  const auto probs = ops::softmax_rows(logits);
  double worst_sum = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += probs.values()[i * 7 + j];
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  if (worst_sum > 1e-5) failures.push_back("softmax row sum off by " + fmt("%.2e", worst_sum));

  const auto& run = transfer_run();
  const auto& enc = run.models.front().encoder;
  const auto& head = run.heads.front();
  std::size_t pad_mismatch = 0;
  std::size_t transform_mismatch = 0;
  double worst_score = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& ex = run.dev[i];
    const auto a = predict_choice(ex.context_sentences, ex.choices, enc, head, toy_vocab(), 48);
    const auto b = predict_choice(ex.context_sentences, ex.choices, enc, head, toy_vocab(), 64);
    pad_mismatch += a.index != b.index;
    for (std::size_t k = 0; k < a.scores.size(); ++k) {
      worst_score = std::max(worst_score, std::abs(a.scores[k] - b.scores[k]));
    }
    const std::vector<std::function<double(double)>> transforms = {
        [](double s) { return 3.0 * s + 1.0; }, [](double s) { return std::exp(s); },
        [](double s) { return std::tanh(s); }, [](double s) { return s * s * s; }};
    for (const auto& f : transforms) {
      std::vector<double> t;
      for (double s : a.scores) t.push_back(f(s));
      transform_mismatch += argmax_first(t) != a.index;
    }
  }
  if (pad_mismatch || worst_score > 1e-5) {
    failures.push_back("padding changed " + std::to_string(pad_mismatch) + " predictions (score diff " +
                       fmt("%.2e", worst_score) + ")");
  }
  if (transform_mismatch) failures.push_back("monotone transform changed an argmax");

  const Vocab& v = toy_vocab();
  const auto corpus = synth::corpus(30, 15);
  std::size_t special_hits = 0;
  std::size_t counts[3] = {0, 0, 0};
  std::size_t draws = 0;
  Rng mask_rng(16);
  while (draws < 10000) {
    const auto ex = make_pretrain_example(corpus, v, 48, mask_rng);
    for (std::size_t k = 0; k < ex.masked_positions.size() && draws < 10000; ++k) {
      const TokenId original = ex.masked_labels[k];
      if (original == v.cls_id() || original == v.sep_id() || original == v.pad_id()) ++special_hits;
      ++counts[static_cast<int>(ex.corruption[k])];
      ++draws;
    }
  }
  if (special_hits) failures.push_back(std::to_string(special_hits) + " special tokens masked");
  const double f_mask = counts[0] / 10000.0;
  const double f_rand = counts[1] / 10000.0;
  const double f_keep = counts[2] / 10000.0;
  if (std::abs(f_mask - 0.8) > 0.02 || std::abs(f_rand - 0.1) > 0.02 || std::abs(f_keep - 0.1) > 0.02) {
    failures.push_back("corruption frequencies out of tolerance");
  }

  std::string detail = "softmax max |sum-1|=" + fmt("%.1e", worst_sum) + ", padding score diff " +
                       fmt("%.1e", worst_score) + ", corruption " + fmt("%.3f", f_mask) + "/" +
                       fmt("%.3f", f_rand) + "/" + fmt("%.3f", f_keep) + " over 10000 draws";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"AC-1", gradient_correctness}, {"AC-2", trainability},    {"AC-3", transfer_effect},
      {"AC-4", recast_oracle},        {"AC-5", checkpoint_integrity}, {"AC-6", ablation_harness},
      {"AC-7", category_filter},      {"AC-8", determinism},     {"AC-9", invariance_suite}};
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
