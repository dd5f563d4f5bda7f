#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace transbert {

enum class PairSchema { nli, sentiment };

/// Canonical label orders.
enum class NliLabel : std::size_t { entailment = 0, neutral = 1, contradiction = 2 };
const std::vector<std::string>& nli_label_names();        // entailment, neutral, contradiction
const std::vector<std::string>& sentiment_label_names();  // negative, positive
const std::vector<std::string>& label_names(PairSchema schema);

/// Pair-classification instance. text_b is empty for single-sentence tasks.
struct PairExample {
  std::string text_a;
  std::string text_b;
  std::size_t label = 0;
  std::vector<std::string> label_names;

  bool operator==(const PairExample&) const = default;
};

/// Multiple-choice instance: SCT (2 endings), SWAG-style (4), MC_NLI (2).
struct ChoiceExample {
  std::vector<std::string> context_sentences;
  std::vector<std::string> choices;
  std::size_t answer_index = 0;

  bool operator==(const ChoiceExample&) const = default;
};

struct PairLoadResult {
  std::vector<PairExample> examples;
  std::size_t skipped = 0;  // rows whose label is outside the schema, e.g. "-"
};

/// NLI rows: premise<TAB>hypothesis<TAB>label. Sentiment rows: text<TAB>label.
/// A wrong column count is a DataError naming the line.
PairLoadResult load_pair_tsv(const std::filesystem::path& path, PairSchema schema);
void save_pair_tsv(const std::filesystem::path& path, const std::vector<PairExample>& examples,
                   PairSchema schema);

/// Groups by exact premise and emits up to three two-way choice examples per
/// premise: {E,N} -> E, {E,C} -> E, {N,C} -> N. The first hypothesis of each
/// label wins within a group. Choice order is shuffled with `seed`.
std::vector<ChoiceExample> recast_mc_nli(const std::vector<PairExample>& examples,
                                         std::uint64_t seed);

/// Two of the three NLI labels, kept in canonical order.
struct NliCategoryPair {
  NliLabel first;
  NliLabel second;
};

/// "EN", "EC" or "NC" (either letter order). Throws UsageError otherwise.
NliCategoryPair parse_category_pair(std::string_view code);
std::string category_pair_code(NliCategoryPair pair);

/// Drops rows with the excluded label and re-indexes the two kept labels to
/// {0, 1} in canonical order. Row order and texts are preserved.
std::vector<PairExample> filter_nli_categories(const std::vector<PairExample>& examples,
                                               NliCategoryPair kept);

/// SCT CSV with a header row and columns s1,s2,s3,s4,ending1,ending2,answer
/// (answer in {1,2}); a leading story-id column is accepted and ignored.
std::vector<ChoiceExample> load_sct(const std::filesystem::path& path);
void save_sct(const std::filesystem::path& path, const std::vector<ChoiceExample>& examples);

/// Generic multiple-choice CSV: header context,ending1..endingK,answer with a
/// 1-based answer. Context sentences are stored joined by single spaces.
std::vector<ChoiceExample> load_choice_csv(const std::filesystem::path& path);
void save_choice_csv(const std::filesystem::path& path, const std::vector<ChoiceExample>& examples);

/// Keeps the context sentences whose 1-based index is in `keep`, in original
/// order. An empty `keep` gives the ending-only condition.
ChoiceExample subset_context(const ChoiceExample& example, const std::vector<std::size_t>& keep);

/// "3,4" -> {3, 4}; "" -> {}.
std::vector<std::size_t> parse_keep_set(std::string_view text);

struct SctSplit {
  std::vector<ChoiceExample> train;
  std::vector<ChoiceExample> dev;
};

inline constexpr std::size_t kSctV10Rows = 1871;
inline constexpr std::size_t kSctV10DevRows = 100;

/// Seeded shuffle of the 1,871-row SCT v1.0 development file into 1,771
/// training and 100 development instances.
SctSplit split_sct_v10(const std::vector<ChoiceExample>& examples, std::uint64_t seed);

}  // namespace transbert
