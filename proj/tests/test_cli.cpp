#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "transbert/checkpoint.hpp"
#include "transbert/transfer_data.hpp"

using namespace transbert;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunResult run(const test_support::TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const std::string cmd = std::string("\"") + TRANSBERT_CLI + "\" " + args + " > \"" +
                          out.string() + "\" 2> \"" + (dir / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  return r;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

// Writes lexicon, vocab, a small story set and a tiny sct stage config.
void prepare_sct(const test_support::TempDir& dir) {
  REQUIRE(run(dir, "synth --kind lexicon --out " + q(dir / "lexicon.txt")).code == 0);
  REQUIRE(run(dir, "vocab-train --corpus " + q(dir / "lexicon.txt") + " --size 160 --out " +
                       q(dir / "vocab.txt"))
              .code == 0);
  REQUIRE(run(dir, "synth --kind stories --count 16 --seed 1 --out " + q(dir / "train.csv")).code ==
          0);
  REQUIRE(run(dir, "synth --kind stories --count 10 --seed 2 --out " + q(dir / "dev.csv")).code ==
          0);
  std::ofstream(dir / "sct.cfg") << "task=sct\ntrain=train.csv\ndev=dev.csv\nvocab=vocab.txt\n"
                                    "epochs=2\nbatch_size=8\nlearning_rate=1e-3\nmax_len=48\n"
                                    "num_layers=1\nhidden_size=16\nnum_heads=2\nffn_size=32\n"
                                    "max_positions=64\n";
}

}  // namespace

TEST_CASE("help exits 0 for every subcommand") {
  test_support::TempDir dir;
  CHECK(run(dir, "--help").code == 0);
  for (const char* sub : {"vocab-train", "pretrain", "transfer", "finetune", "eval", "recast",
                          "gradcheck", "split-sct", "synth"}) {
    INFO(sub);
    CHECK(run(dir, std::string(sub) + " --help").code == 0);
  }
}

TEST_CASE("usage errors exit 1") {
  test_support::TempDir dir;
  CHECK(run(dir, "finetune --no-such-flag").code == 1);
  CHECK(run(dir, "no-such-command").code == 1);
  CHECK(run(dir, "finetune --out x.ck").code == 1);
  std::ofstream(dir / "bad.cfg") << "colour=blue\n";
  CHECK(run(dir, "finetune --config " + q(dir / "bad.cfg") + " --out " + q(dir / "x.ck")).code ==
        1);
}

TEST_CASE("missing or corrupt data exits 2") {
  test_support::TempDir dir;
  CHECK(run(dir, "eval --ck " + q(dir / "missing.ck") + " --data " + q(dir / "missing.csv"))
            .code == 2);
  std::ofstream(dir / "junk.ck") << "not a checkpoint";
  prepare_sct(dir);
  CHECK(run(dir, "eval --ck " + q(dir / "junk.ck") + " --data " + q(dir / "dev.csv")).code == 2);
  std::ofstream(dir / "bad.csv") << "s1,s2,s3,s4,e1,e2,answer\na,b,c,d,x,y,3\n";
  CHECK(run(dir, "split-sct --in " + q(dir / "bad.csv") + " --out-train " + q(dir / "t.csv") +
                     " --out-dev " + q(dir / "d.csv"))
            .code == 2);
}

TEST_CASE("default gradient check passes") {
  test_support::TempDir dir;
  const auto r = run(dir, "gradcheck --probes 60");
  CHECK(r.code == 0);
  const auto pos = r.out.find("max_relative_error\t");
  REQUIRE(pos != std::string::npos);
  const double value = std::stod(r.out.substr(pos + 19));
  CHECK(value < 1e-5);
}

TEST_CASE("finetune then eval, reruns are byte identical") {
  test_support::TempDir dir;
  prepare_sct(dir);
  const std::string train = "finetune --config " + q(dir / "sct.cfg") + " --seed 3 --out ";
  const auto a = run(dir, train + q(dir / "a.ck"));
  REQUIRE(a.code == 0);
  CHECK(a.out.find("best_epoch") != std::string::npos);
  REQUIRE(run(dir, train + q(dir / "b.ck")).code == 0);
  CHECK(read_file(dir / "a.ck") == read_file(dir / "b.ck"));
  CHECK(read_file(dir / "a.ck.head") == read_file(dir / "b.ck.head"));
  CHECK(read_file(dir / "a.ck.report.json") == read_file(dir / "b.ck.report.json"));
  CHECK(read_file(dir / "a.ck.report.json").find("wall_time") == std::string::npos);

  const auto full = run(dir, "eval --ck " + q(dir / "a.ck") + " --data " + q(dir / "dev.csv") +
                                 " --records " + q(dir / "rec.jsonl"));
  CHECK(full.code == 0);
  CHECK(full.out.find("setting\taccuracy") != std::string::npos);
  CHECK(full.out.find("full context\t") != std::string::npos);
  std::istringstream recs(read_file(dir / "rec.jsonl"));
  std::size_t lines = 0;
  for (std::string l; std::getline(recs, l);) ++lines;
  CHECK(lines == 10);

  const auto ending = run(dir, "eval --ck " + q(dir / "a.ck") + " --data " + q(dir / "dev.csv") +
                                   " --subset \"\"");
  CHECK(ending.code == 0);
  CHECK(ending.out.find("ending only\t") != std::string::npos);

  const auto sweep =
      run(dir, "eval --ck " + q(dir / "a.ck") + " --data " + q(dir / "dev.csv") + " --sweep");
  CHECK(sweep.code == 0);
  for (const char* label : {"ending only", "(4)", "(3,4)", "(2,3,4)", "(1,2,3,4)"}) {
    CHECK(sweep.out.find(std::string(label) + "\t") != std::string::npos);
  }

  CHECK(run(dir, "eval --ck " + q(dir / "a.ck") + " --data " + q(dir / "dev.csv") +
                     " --zero-shot-nli")
            .code == 1);
}

TEST_CASE("a second transfer stage is refused unless allowed") {
  test_support::TempDir dir;
  prepare_sct(dir);
  REQUIRE(run(dir, "synth --kind nli --count 24 --seed 1 --out " + q(dir / "nli.tsv")).code == 0);
  std::ofstream(dir / "nli.cfg") << "task=nli\ntrain=nli.tsv\nvocab=vocab.txt\nepochs=1\n"
                                    "batch_size=8\nmax_len=48\nnum_layers=1\nhidden_size=16\n"
                                    "num_heads=2\nffn_size=32\nmax_positions=64\n";
  const std::string base = "transfer --task nli --config " + q(dir / "nli.cfg");
  REQUIRE(run(dir, base + " --out " + q(dir / "t1.ck")).code == 0);
  CHECK(run(dir, base + " --init " + q(dir / "t1.ck") + " --out " + q(dir / "t2.ck")).code == 1);
  CHECK(run(dir, base + " --init " + q(dir / "t1.ck") + " --allow-multiple-transfer --out " +
                     q(dir / "t3.ck"))
            .code == 0);
  CHECK(load_checkpoint(dir / "t3.ck").provenance.size() == 2);
}

TEST_CASE("recast and filter") {
  test_support::TempDir dir;
  REQUIRE(run(dir, "synth --kind nli --count 30 --seed 4 --out " + q(dir / "nli.tsv")).code == 0);
  CHECK(run(dir, "recast mc-nli --in " + q(dir / "nli.tsv") + " --out " + q(dir / "mc.csv") +
                     " --seed 1")
            .code == 0);
  CHECK(load_choice_csv(dir / "mc.csv").size() == 30);
  std::size_t total = 0;
  for (const char* keep : {"EN", "EC", "NC"}) {
    const auto out = dir / (std::string(keep) + ".tsv");
    CHECK(run(dir, std::string("recast filter --keep ") + keep + " --in " + q(dir / "nli.tsv") +
                       " --out " + q(out))
              .code == 0);
    total += load_pair_tsv(out, PairSchema::nli).examples.size() +
             load_pair_tsv(out, PairSchema::nli).skipped;
  }
  CHECK(total == 60);
  CHECK(run(dir, "recast filter --keep XY --in " + q(dir / "nli.tsv") + " --out " +
                     q(dir / "xy.tsv"))
            .code == 1);
}

TEST_CASE("split-sct on 1871 rows") {
  test_support::TempDir dir;
  REQUIRE(run(dir, "synth --kind stories --count 1871 --seed 5 --out " + q(dir / "all.csv"))
              .code == 0);
  CHECK(run(dir, "split-sct --in " + q(dir / "all.csv") + " --seed 0 --out-train " +
                     q(dir / "train.csv") + " --out-dev " + q(dir / "dev.csv"))
            .code == 0);
  CHECK(load_sct(dir / "train.csv").size() == 1771);
  CHECK(load_sct(dir / "dev.csv").size() == 100);
}
