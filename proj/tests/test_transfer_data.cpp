#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <set>

#include "test_support.hpp"
#include "transbert/errors.hpp"
#include "transbert/synthetic.hpp"
#include "transbert/transfer_data.hpp"

using namespace transbert;

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

PairExample nli_row(std::string premise, std::string hypothesis, NliLabel label) {
  return {std::move(premise), std::move(hypothesis), static_cast<std::size_t>(label),
          nli_label_names()};
}

ChoiceExample story(std::size_t answer) {
  return {{"s1 .", "s2 .", "s3 .", "s4 ."}, {"e1 .", "e2 ."}, answer};
}

// The choice at answer_index, i.e. the hypothesis the recast marks right.
std::string right_choice(const ChoiceExample& c) { return c.choices[c.answer_index]; }
std::string wrong_choice(const ChoiceExample& c) { return c.choices[1 - c.answer_index]; }

}  // namespace

TEST_SUITE("pair tsv") {
  TEST_CASE("nli rows load with canonical labels and unknown labels are skipped") {
    test_support::TempDir dir;
    write_file(dir / "nli.tsv",
               "p1\th1\tentailment\np1\th2\tNeutral\np2\th3\tcontradiction\np3\th4\t-\n");
    const auto r = load_pair_tsv(dir / "nli.tsv", PairSchema::nli);
    REQUIRE(r.examples.size() == 3);
    CHECK(r.skipped == 1);
    CHECK(r.examples[1].label == 1);
    CHECK(r.examples[2].label == 2);
    CHECK(r.examples[0].text_b == "h1");
  }

  TEST_CASE("wrong column count names the line") {
    test_support::TempDir dir;
    write_file(dir / "bad.tsv", "p1\th1\tentailment\np2\tneutral\n");
    try {
      (void)load_pair_tsv(dir / "bad.tsv", PairSchema::nli);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("bad.tsv:2") != std::string::npos);
    }
  }

  TEST_CASE("sentiment rows have text and label") {
    test_support::TempDir dir;
    write_file(dir / "s.tsv", "good film\tpositive\nbad film\tnegative\n");
    const auto r = load_pair_tsv(dir / "s.tsv", PairSchema::sentiment);
    REQUIRE(r.examples.size() == 2);
    CHECK(r.examples[0].label == 1);
    CHECK(r.examples[0].text_b.empty());
  }

  TEST_CASE("save and load round trip") {
    test_support::TempDir dir;
    const auto rows = synth::nli(30, 2);
    save_pair_tsv(dir / "rt.tsv", rows, PairSchema::nli);
    CHECK(load_pair_tsv(dir / "rt.tsv", PairSchema::nli).examples == rows);
  }

  TEST_CASE("missing file is a data error") {
    CHECK_THROWS_AS(load_pair_tsv("/nonexistent/x.tsv", PairSchema::nli), DataError);
  }
}

TEST_SUITE("mc_nli recast") {
  TEST_CASE("a premise with all three labels gives E over N, E over C and N over C") {
    const std::vector<PairExample> rows = {nli_row("p", "hn", NliLabel::neutral),
                                           nli_row("p", "he", NliLabel::entailment),
                                           nli_row("p", "hc", NliLabel::contradiction)};
    const auto out = recast_mc_nli(rows, 0);
    REQUIRE(out.size() == 3);
    CHECK(right_choice(out[0]) == "he");
    CHECK(wrong_choice(out[0]) == "hn");
    CHECK(right_choice(out[1]) == "he");
    CHECK(wrong_choice(out[1]) == "hc");
    CHECK(right_choice(out[2]) == "hn");
    CHECK(wrong_choice(out[2]) == "hc");
    for (const auto& c : out) CHECK(c.context_sentences == std::vector<std::string>{"p"});
  }

  TEST_CASE("partial premises yield only the pairs they support") {
    const std::vector<PairExample> rows = {nli_row("a", "x", NliLabel::entailment),
                                           nli_row("b", "y", NliLabel::neutral),
                                           nli_row("b", "z", NliLabel::contradiction),
                                           nli_row("c", "w", NliLabel::contradiction)};
    const auto out = recast_mc_nli(rows, 1);
    REQUIRE(out.size() == 1);
    CHECK(right_choice(out[0]) == "y");
  }

  TEST_CASE("the first hypothesis of each label wins") {
    const std::vector<PairExample> rows = {nli_row("p", "e1", NliLabel::entailment),
                                           nli_row("p", "e2", NliLabel::entailment),
                                           nli_row("p", "c1", NliLabel::contradiction)};
    const auto out = recast_mc_nli(rows, 2);
    REQUIRE(out.size() == 1);
    CHECK(right_choice(out[0]) == "e1");
  }

  TEST_CASE("choice order is seeded and both positions occur") {
    const auto rows = synth::nli(300, 3);
    const auto a = recast_mc_nli(rows, 5);
    CHECK(recast_mc_nli(rows, 5) == a);
    std::size_t first = 0;
    for (const auto& c : a) first += c.answer_index == 0;
    CHECK(first > a.size() / 4);
    CHECK(first < 3 * a.size() / 4);
  }

  TEST_CASE("out-of-range labels are rejected") {
    PairExample bad = nli_row("p", "h", NliLabel::entailment);
    bad.label = 3;
    CHECK_THROWS_AS(recast_mc_nli({bad}, 0), UsageError);
  }
}

TEST_SUITE("category filter") {
  TEST_CASE("codes parse in either order") {
    CHECK(category_pair_code(parse_category_pair("NE")) == "EN");
    CHECK(category_pair_code(parse_category_pair("ec")) == "EC");
    CHECK(category_pair_code(parse_category_pair("CN")) == "NC");
    CHECK_THROWS_AS(parse_category_pair("EE"), UsageError);
    CHECK_THROWS_AS(parse_category_pair("ENC"), UsageError);
  }

  TEST_CASE("kept labels are re-indexed in canonical order") {
    const std::vector<PairExample> rows = {nli_row("p", "c", NliLabel::contradiction),
                                           nli_row("p", "e", NliLabel::entailment),
                                           nli_row("p", "n", NliLabel::neutral)};
    const auto nc = filter_nli_categories(rows, parse_category_pair("NC"));
    REQUIRE(nc.size() == 2);
    CHECK(nc[0].text_b == "c");
    CHECK(nc[0].label == 1);
    CHECK(nc[1].text_b == "n");
    CHECK(nc[1].label == 0);
    CHECK(nc[0].label_names == std::vector<std::string>{"neutral", "contradiction"});
  }

  TEST_CASE("the three filters partition every row twice") {
    const auto rows = synth::nli(90, 4);
    std::size_t total = 0;
    for (const char* code : {"EN", "EC", "NC"}) {
      const auto kept = filter_nli_categories(rows, parse_category_pair(code));
      total += kept.size();
      for (const auto& r : kept) CHECK(r.label <= 1);
    }
    CHECK(total == 2 * rows.size());
  }
}

TEST_SUITE("story cloze") {
  TEST_CASE("save and load round trip with commas and quotes") {
    test_support::TempDir dir;
    std::vector<ChoiceExample> rows = synth::stories(12, 5);
    rows[0].context_sentences[1] = "she said, \"fine\" .";
    save_sct(dir / "sct.csv", rows);
    CHECK(load_sct(dir / "sct.csv") == rows);
  }

  TEST_CASE("a leading story id column is ignored") {
    test_support::TempDir dir;
    write_file(dir / "id.csv",
               "id,s1,s2,s3,s4,e1,e2,answer\nabc,a .,b .,c .,d .,x .,y .,2\n");
    const auto rows = load_sct(dir / "id.csv");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].context_sentences.front() == "a .");
    CHECK(rows[0].answer_index == 1);
  }

  TEST_CASE("an answer outside 1..2 is a data error naming the line") {
    test_support::TempDir dir;
    write_file(dir / "bad.csv", "s1,s2,s3,s4,e1,e2,answer\na,b,c,d,x,y,1\na,b,c,d,x,y,3\n");
    try {
      (void)load_sct(dir / "bad.csv");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
    }
  }

  TEST_CASE("wrong column count is a data error") {
    test_support::TempDir dir;
    write_file(dir / "short.csv", "s1,s2,s3,s4,e1,e2,answer\na,b,c,x,y,1\n");
    CHECK_THROWS_AS(load_sct(dir / "short.csv"), DataError);
  }

  TEST_CASE("generic choice csv round trips with four endings") {
    test_support::TempDir dir;
    const auto rows = synth::next_action(10, 6);
    save_choice_csv(dir / "swag.csv", rows);
    const auto loaded = load_choice_csv(dir / "swag.csv");
    REQUIRE(loaded.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(loaded[i].choices == rows[i].choices);
      CHECK(loaded[i].answer_index == rows[i].answer_index);
    }
  }
}

TEST_SUITE("context subsets") {
  TEST_CASE("kept sentences stay in original order") {
    const auto s = subset_context(story(0), {4, 2});
    CHECK(s.context_sentences == std::vector<std::string>{"s2 .", "s4 ."});
    CHECK(s.choices == story(0).choices);
  }

  TEST_CASE("empty keep set is the ending-only condition") {
    CHECK(subset_context(story(1), {}).context_sentences.empty());
  }

  TEST_CASE("full keep set is the identity") { CHECK(subset_context(story(1), {1, 2, 3, 4}) == story(1)); }

  TEST_CASE("indices outside 1..4 are rejected") {
    CHECK_THROWS_AS(subset_context(story(0), {0}), UsageError);
    CHECK_THROWS_AS(subset_context(story(0), {5}), UsageError);
  }

  TEST_CASE("keep set parsing") {
    CHECK(parse_keep_set("3,4") == std::vector<std::size_t>{3, 4});
    CHECK(parse_keep_set("").empty());
    CHECK(parse_keep_set(" 4, 1 ,4") == std::vector<std::size_t>{1, 4});
    CHECK_THROWS_AS(parse_keep_set("5"), UsageError);
    CHECK_THROWS_AS(parse_keep_set("a"), UsageError);
  }
}

TEST_SUITE("sct split") {
  TEST_CASE("1871 rows split into 1771 and 100 without loss") {
    const auto rows = synth::stories(kSctV10Rows, 7);
    const auto split = split_sct_v10(rows, 0);
    CHECK(split.train.size() == 1771);
    CHECK(split.dev.size() == 100);
    std::multiset<std::string> seen;
    auto key = [](const ChoiceExample& c) {
      std::string k;
      for (const auto& s : c.context_sentences) k += s + "|";
      for (const auto& s : c.choices) k += s + "|";
      return k + std::to_string(c.answer_index);
    };
    std::multiset<std::string> all;
    for (const auto& r : rows) all.insert(key(r));
    for (const auto& r : split.train) seen.insert(key(r));
    for (const auto& r : split.dev) seen.insert(key(r));
    CHECK(seen == all);
    CHECK(split_sct_v10(rows, 0).dev == split.dev);
    CHECK_FALSE(split_sct_v10(rows, 1).dev == split.dev);
  }

  TEST_CASE("any other row count is a data error") {
    CHECK_THROWS_AS(split_sct_v10(synth::stories(100, 1), 0), DataError);
  }
}
