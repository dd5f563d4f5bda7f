#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "transbert/errors.hpp"
#include "transbert/eval.hpp"
#include "transbert/pipeline.hpp"
#include "transbert/synthetic.hpp"

using namespace transbert;

namespace {

const Vocab& lexicon_vocab() {
  static const Vocab v = train_vocab(synth::lexicon_text(), 160, false);
  return v;
}

StageConfig small_config(TaskKind task, std::uint64_t seed = 0) {
  StageConfig c;
  c.task = task;
  c.epochs = 3;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  c.max_len = 48;
  c.seed = seed;
  c.model.num_layers = 1;
  c.model.hidden_size = 16;
  c.model.num_heads = 2;
  c.model.ffn_size = 32;
  c.model.max_positions = 64;
  c.geometry_set = true;
  return c;
}

StageData sct_data(std::uint64_t seed = 1) {
  StageData d;
  d.train_choices = synth::stories(16, seed);
  d.dev_choices = synth::stories(12, seed + 100);
  return d;
}

StageData nli_data() {
  StageData d;
  d.train_pairs = synth::nli(48, 2);
  d.dev_pairs = synth::nli(24, 3);
  d.num_classes = 3;
  return d;
}

StageData pretrain_data() {
  StageData d;
  d.train_corpus = synth::corpus(8, 4);
  return d;
}

Checkpoint random_checkpoint(const ModelConfig& model, std::uint64_t seed) {
  Rng rng(seed);
  return Checkpoint{EncoderParams<float>::initialized(model, rng, 0.02), lexicon_vocab().tokens(),
                    false, {{"pretrain", "scratch", seed, 2, 1, "loss", 1.5}}};
}

ModelConfig small_model() {
  ModelConfig m = small_config(TaskKind::sct).model;
  m.vocab_size = lexicon_vocab().size();
  return m;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

CheckpointError::Kind load_error_kind(const std::filesystem::path& p) {
  try {
    (void)load_checkpoint(p);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("expected CheckpointError");
  return CheckpointError::Kind::io;
}

}  // namespace

TEST_SUITE("stage config") {
  TEST_CASE("key=value parsing with comments and relative paths") {
    const auto c = parse_stage_config(
        "# sct stage\ntask = sct\ntrain = data/train.csv  # inline\nepochs=5\n"
        "learning_rate=2e-5\nselection_metric=loss\nhidden_size=64\n",
        "/base");
    CHECK(c.task == TaskKind::sct);
    CHECK(c.train_path == std::filesystem::path("/base/data/train.csv"));
    CHECK(c.epochs == 5);
    CHECK(c.learning_rate == doctest::Approx(2e-5));
    CHECK(c.effective_metric() == SelectionMetric::loss);
    CHECK(c.model.hidden_size == 64);
    CHECK(c.geometry_set);
  }

  TEST_CASE("defaults") {
    const auto c = parse_stage_config("task=pretrain\n");
    CHECK(c.epochs == 3);
    CHECK(c.batch_size == 32);
    CHECK(c.learning_rate == doctest::Approx(3e-5));
    CHECK(c.max_len == 128);
    CHECK(c.effective_metric() == SelectionMetric::loss);
    CHECK_FALSE(c.geometry_set);
    CHECK(parse_stage_config("task=nli\n").effective_metric() == SelectionMetric::accuracy);
  }

  TEST_CASE("overrides replace file values") {
    auto c = parse_stage_config("task=sct\nepochs=5\n");
    set_config_value(c, "epochs", "2");
    set_config_value(c, "task", "mc_nli");
    CHECK(c.epochs == 2);
    CHECK(c.task == TaskKind::mc_nli);
  }

  TEST_CASE("unknown keys and bad values are usage errors") {
    CHECK_THROWS_AS(parse_stage_config("colour=blue\n"), UsageError);
    CHECK_THROWS_AS(parse_stage_config("epochs=three\n"), UsageError);
    CHECK_THROWS_AS(parse_stage_config("task=translation\n"), UsageError);
    CHECK_THROWS_AS(parse_stage_config("no equals sign\n"), UsageError);
    CHECK_THROWS_AS(load_stage_config("/nonexistent/stage.cfg"), UsageError);
  }

  TEST_CASE("formatted configs parse back") {
    auto c = small_config(TaskKind::nli, 9);
    c.nli_categories = "EN";
    c.train_path = "/x/train.tsv";
    const auto back = parse_stage_config(format_stage_config(c));
    CHECK(format_stage_config(back) == format_stage_config(c));
  }

  TEST_CASE("validation") {
    auto c = small_config(TaskKind::sct);
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = small_config(TaskKind::sct);
    c.nli_categories = "EN";
    CHECK_THROWS_AS(c.validate(), UsageError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("serialize round trip is byte identical") {
    const auto ck = random_checkpoint(small_model(), 1);
    const auto bytes = serialize_checkpoint(ck);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.provenance == ck.provenance);
    CHECK(back.vocab() == lexicon_vocab());
  }

  TEST_CASE("file round trip and manifest contents") {
    test_support::TempDir dir;
    const auto ck = random_checkpoint(small_model(), 2);
    save_checkpoint(ck, dir / "a.ck");
    CHECK(read_bytes(dir / "a.ck").substr(0, 4) == "TBCK");
    CHECK(serialize_checkpoint(load_checkpoint(dir / "a.ck")) == serialize_checkpoint(ck));
    const auto manifest = read_checkpoint_manifest(dir / "a.ck");
    CHECK(manifest.size() == ck.encoder.params().size());
    for (const auto& e : manifest) {
      CHECK(e.name.find("head") == std::string::npos);
      CHECK(ck.encoder.params().contains(e.name));
    }
  }

  TEST_CASE("corrupt files raise distinct errors") {
    test_support::TempDir dir;
    const auto bytes = serialize_checkpoint(random_checkpoint(small_model(), 3));

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    write_bytes(dir / "magic.ck", bad_magic);
    CHECK(load_error_kind(dir / "magic.ck") == CheckpointError::Kind::bad_magic);

    std::string bad_version = bytes;
    bad_version[4] = 7;
    write_bytes(dir / "version.ck", bad_version);
    CHECK(load_error_kind(dir / "version.ck") == CheckpointError::Kind::version_mismatch);

    write_bytes(dir / "short.ck", bytes.substr(0, bytes.size() - 5));
    CHECK(load_error_kind(dir / "short.ck") == CheckpointError::Kind::truncated_payload);

    write_bytes(dir / "tiny.ck", bytes.substr(0, 10));
    CHECK(load_error_kind(dir / "tiny.ck") != CheckpointError::Kind::bad_magic);

    CHECK(load_error_kind(dir / "missing.ck") == CheckpointError::Kind::io);
  }

  TEST_CASE("head files round trip beside the checkpoint") {
    test_support::TempDir dir;
    auto head = TaskHead<float>::classification(16, 3);
    Rng rng(4);
    head.init(rng, 0.3);
    const auto path = head_path_for(dir / "m.ck");
    CHECK(path == dir / "m.ck.head");
    save_head(head, path);
    const auto back = load_head(path);
    CHECK(back.kind() == HeadKind::classification);
    CHECK(back.num_classes() == 3);
    for (std::size_t i = 0; i < head.params().size(); ++i) {
      CHECK(back.params().value(i) == head.params().value(i));
    }
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
}

TEST_SUITE("run_stage") {
  TEST_CASE("same seed, same bytes and same report") {
    const auto config = small_config(TaskKind::sct, 5);
    const auto data = sct_data();
    const auto a = run_stage(config, data, lexicon_vocab());
    const auto b = run_stage(config, data, lexicon_vocab());
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
    CHECK(report_to_json(a.report, false) == report_to_json(b.report, false));
    const auto c = run_stage(small_config(TaskKind::sct, 6), data, lexicon_vocab());
    CHECK(serialize_checkpoint(c.checkpoint) != serialize_checkpoint(a.checkpoint));
  }

  TEST_CASE("best epoch is the first maximum of dev accuracy") {
    auto config = small_config(TaskKind::sct, 7);
    config.epochs = 4;
    const auto r = run_stage(config, sct_data(), lexicon_vocab()).report;
    REQUIRE(r.dev_metric.size() == 4);
    const auto best = std::max_element(r.dev_metric.begin(), r.dev_metric.end());
    CHECK(r.best_eval == static_cast<std::size_t>(best - r.dev_metric.begin()) + 1);
    CHECK(r.best_epoch == r.best_eval);
    CHECK(r.best_dev_metric == *best);
    CHECK(r.train_loss.size() == 4);
    CHECK(r.train_examples == 16);
    CHECK(r.dev_examples == 12);
  }

  TEST_CASE("loss selection picks the first minimum") {
    auto config = small_config(TaskKind::pretrain, 8);
    config.dev_path.clear();
    const auto r = run_stage(config, pretrain_data(), lexicon_vocab()).report;
    CHECK(r.selection_metric == "loss");
    const auto best = std::min_element(r.dev_metric.begin(), r.dev_metric.end());
    CHECK(r.best_eval == static_cast<std::size_t>(best - r.dev_metric.begin()) + 1);
  }

  TEST_CASE("several evaluations per epoch") {
    auto config = small_config(TaskKind::sct, 9);
    config.epochs = 2;
    config.evals_per_epoch = 2;
    const auto r = run_stage(config, sct_data(), lexicon_vocab()).report;
    CHECK(r.dev_metric.size() == 4);
    CHECK(r.best_epoch == (r.best_eval + 1) / 2);
  }

  TEST_CASE("recorded dev accuracy matches a fresh evaluation of the saved weights") {
    const auto config = small_config(TaskKind::sct, 10);
    const auto data = sct_data();
    const auto result = run_stage(config, data, lexicon_vocab());
    const auto eval = evaluate_sct(result.checkpoint.encoder, result.head, data.dev_choices,
                                   lexicon_vocab(), config.max_len);
    CHECK(eval.accuracy == result.report.best_dev_metric);
  }

  TEST_CASE("provenance records each stage") {
    const auto pre = run_stage(small_config(TaskKind::pretrain, 11), pretrain_data(),
                               lexicon_vocab());
    REQUIRE(pre.checkpoint.provenance.size() == 1);
    CHECK(pre.checkpoint.provenance[0].task == "pretrain");
    CHECK(pre.checkpoint.provenance[0].init == "scratch");
    const auto nli = run_stage(small_config(TaskKind::nli, 12), nli_data(), lexicon_vocab(),
                               &pre.checkpoint);
    REQUIRE(nli.checkpoint.provenance.size() == 2);
    CHECK(nli.checkpoint.provenance[1].task == "nli");
    CHECK(nli.checkpoint.provenance[1].init == "checkpoint");
    CHECK(nli.checkpoint.provenance[1].seed == 12);
    CHECK(nli.checkpoint.provenance[1].best_epoch == nli.report.best_epoch);
    CHECK(nli.head.num_classes() == 3);
  }

  TEST_CASE("geometry mismatch with the initial checkpoint") {
    const auto ck = random_checkpoint(small_model(), 13);
    auto config = small_config(TaskKind::sct, 14);
    config.model.hidden_size = 32;
    config.model.ffn_size = 64;
    try {
      (void)run_stage(config, sct_data(), lexicon_vocab(), &ck);
      FAIL("expected UsageError");
    } catch (const UsageError& e) {
      CHECK(std::string(e.what()).find("geometry mismatch") != std::string::npos);
    }
    config.geometry_set = false;
    CHECK_NOTHROW(run_stage(config, sct_data(), lexicon_vocab(), &ck));
  }

  TEST_CASE("a different vocabulary than the checkpoint's is rejected") {
    const auto ck = random_checkpoint(small_model(), 15);
    const Vocab other = train_vocab(synth::lexicon_text(), 150, false);
    CHECK_THROWS_AS(run_stage(small_config(TaskKind::sct), sct_data(), other, &ck), UsageError);
  }

  TEST_CASE("empty training data is a data error") {
    CHECK_THROWS_AS(run_stage(small_config(TaskKind::sct), StageData{}, lexicon_vocab()),
                    DataError);
  }

  TEST_CASE("an empty dev set evaluates on the training data") {
    auto data = sct_data();
    data.dev_choices.clear();
    const auto r = run_stage(small_config(TaskKind::sct, 16), data, lexicon_vocab()).report;
    CHECK(r.dev_examples == r.train_examples);
  }

  TEST_CASE("report json carries the fields and omits wall time on request") {
    const auto r = run_stage(small_config(TaskKind::sct, 17), sct_data(), lexicon_vocab()).report;
    const auto with = report_to_json(r, true);
    const auto without = report_to_json(r, false);
    CHECK(with.find("wall_time_seconds") != std::string::npos);
    CHECK(without.find("wall_time_seconds") == std::string::npos);
    CHECK(without.find("best_epoch") != std::string::npos);
  }
}

TEST_SUITE("paths") {
  TEST_CASE("the transfer guard counts recorded and upcoming stages") {
    const std::vector<StageRecord> none;
    const std::vector<StageRecord> after_nli = {{"pretrain", "scratch", 0, 1, 1, "loss", 0},
                                                {"nli", "checkpoint", 0, 1, 1, "accuracy", 0}};
    CHECK_NOTHROW(check_transfer_guard(none, {TaskKind::pretrain, TaskKind::nli, TaskKind::sct},
                                       false));
    CHECK_THROWS_AS(check_transfer_guard(none, {TaskKind::nli, TaskKind::nli}, false), UsageError);
    CHECK_THROWS_AS(check_transfer_guard(after_nli, {TaskKind::mc_nli}, false), UsageError);
    CHECK_NOTHROW(check_transfer_guard(after_nli, {TaskKind::sct}, false));
    CHECK_NOTHROW(check_transfer_guard(none, {TaskKind::nli, TaskKind::nli}, true));
  }

  TEST_CASE("run_path threads the encoder and rejects two transfer stages") {
    std::vector<StageSpec> stages = {{small_config(TaskKind::nli, 1), nli_data()},
                                     {small_config(TaskKind::nli, 2), nli_data()}};
    CHECK_THROWS_AS(run_path(stages, lexicon_vocab()), UsageError);
    stages[0].config.epochs = 1;
    stages[1].config.epochs = 1;
    const auto ok = run_path(stages, lexicon_vocab(), nullptr, true);
    CHECK(ok.reports.size() == 2);
    CHECK(ok.checkpoint.provenance.size() == 2);

    const std::vector<StageSpec> path = {{small_config(TaskKind::nli, 3), nli_data()},
                                         {small_config(TaskKind::sct, 4), sct_data()}};
    const auto result = run_path(path, lexicon_vocab());
    const auto first = run_stage(path[0].config, path[0].data, lexicon_vocab());
    const auto second =
        run_stage(path[1].config, path[1].data, lexicon_vocab(), &first.checkpoint);
    CHECK(serialize_checkpoint(result.checkpoint) == serialize_checkpoint(second.checkpoint));
    CHECK(result.head.kind() == HeadKind::multiple_choice);
  }

  TEST_CASE("file-driven stage reads its data and vocabulary") {
    test_support::TempDir dir;
    lexicon_vocab().save(dir / "vocab.txt");
    save_sct(dir / "train.csv", synth::stories(8, 1));
    std::ofstream(dir / "stage.cfg") << "task=sct\ntrain=train.csv\nvocab=vocab.txt\nepochs=1\n"
                                        "batch_size=4\nmax_len=48\nnum_layers=1\nhidden_size=16\n"
                                        "num_heads=2\nffn_size=32\nmax_positions=64\n";
    const auto config = load_stage_config(dir / "stage.cfg");
    const auto r = run_stage(config);
    CHECK(r.report.train_examples == 8);
    CHECK(r.checkpoint.vocab() == lexicon_vocab());
  }
}
