#include "transbert/transfer_data.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "transbert/csv.hpp"
#include "transbert/errors.hpp"
#include "transbert/rng.hpp"

namespace transbert {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(ws) - b + 1));
}

std::optional<std::size_t> label_index(std::string_view label, PairSchema schema) {
  const auto& names = label_names(schema);
  const std::string l = lower(trim(label));
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == l) return i;
  }
  return std::nullopt;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::size_t parse_answer(const std::string& field, std::size_t choices,
                         const std::filesystem::path& path, std::size_t line) {
  const std::string t = trim(field);
  std::size_t value = 0;
  bool ok = !t.empty() && t.size() < 4 && std::all_of(t.begin(), t.end(), [](char c) {
    return c >= '0' && c <= '9';
  });
  if (ok) value = static_cast<std::size_t>(std::stoul(t));
  if (!ok || value < 1 || value > choices) {
    throw DataError(where(path, line) + ": answer '" + field + "' is outside 1.." +
                    std::to_string(choices));
  }
  return value - 1;
}

}  // namespace

const std::vector<std::string>& nli_label_names() {
  static const std::vector<std::string> names = {"entailment", "neutral", "contradiction"};
  return names;
}

const std::vector<std::string>& sentiment_label_names() {
  static const std::vector<std::string> names = {"negative", "positive"};
  return names;
}

const std::vector<std::string>& label_names(PairSchema schema) {
  return schema == PairSchema::nli ? nli_label_names() : sentiment_label_names();
}

PairLoadResult load_pair_tsv(const std::filesystem::path& path, PairSchema schema) {
  const std::size_t columns = schema == PairSchema::nli ? 3 : 2;
  PairLoadResult result;
  for (const auto& rec : csv::read_tsv(path)) {
    if (rec.fields.size() != columns) {
      throw DataError(where(path, rec.line) + ": expected " + std::to_string(columns) +
                      " tab-separated columns, found " + std::to_string(rec.fields.size()));
    }
    const auto label = label_index(rec.fields.back(), schema);
    if (!label) {
      ++result.skipped;
      continue;
    }
    PairExample ex;
    ex.text_a = rec.fields[0];
    if (schema == PairSchema::nli) ex.text_b = rec.fields[1];
    ex.label = *label;
    ex.label_names = label_names(schema);
    result.examples.push_back(std::move(ex));
  }
  return result;
}

void save_pair_tsv(const std::filesystem::path& path, const std::vector<PairExample>& examples,
                   PairSchema schema) {
  std::ostringstream out;
  for (const auto& ex : examples) {
    const auto& names = ex.label_names.empty() ? label_names(schema) : ex.label_names;
    out << ex.text_a << '\t';
    if (schema == PairSchema::nli) out << ex.text_b << '\t';
    out << names.at(ex.label) << '\n';
  }
  csv::write_text_atomic(path, out.str());
}

std::vector<ChoiceExample> recast_mc_nli(const std::vector<PairExample>& examples,
                                         std::uint64_t seed) {
  // premise -> first hypothesis per label, groups kept in first-appearance order
  std::map<std::string, std::size_t> group_of;
  std::vector<std::pair<std::string, std::array<std::optional<std::string>, 3>>> groups;
  for (const auto& ex : examples) {
    if (ex.label >= 3) throw UsageError("recast_mc_nli: label out of NLI range");
    auto [it, inserted] = group_of.emplace(ex.text_a, groups.size());
    if (inserted) groups.push_back({ex.text_a, {}});
    auto& slot = groups[it->second].second[ex.label];
    if (!slot) slot = ex.text_b;
  }

  constexpr std::array<std::pair<NliLabel, NliLabel>, 3> kPairs = {{
      {NliLabel::entailment, NliLabel::neutral},
      {NliLabel::entailment, NliLabel::contradiction},
      {NliLabel::neutral, NliLabel::contradiction},
  }};
  Rng rng(seed);
  std::vector<ChoiceExample> out;
  for (const auto& [premise, hyps] : groups) {
    for (const auto& [right, wrong] : kPairs) {
      const auto& r = hyps[static_cast<std::size_t>(right)];
      const auto& w = hyps[static_cast<std::size_t>(wrong)];
      if (!r || !w) continue;
      ChoiceExample ce;
      ce.context_sentences = {premise};
      if (rng.bernoulli(0.5)) {
        ce.choices = {*w, *r};
        ce.answer_index = 1;
      } else {
        ce.choices = {*r, *w};
        ce.answer_index = 0;
      }
      out.push_back(std::move(ce));
    }
  }
  return out;
}

NliCategoryPair parse_category_pair(std::string_view code) {
  const std::string c = lower(code);
  if (c == "en" || c == "ne") return {NliLabel::entailment, NliLabel::neutral};
  if (c == "ec" || c == "ce") return {NliLabel::entailment, NliLabel::contradiction};
  if (c == "nc" || c == "cn") return {NliLabel::neutral, NliLabel::contradiction};
  throw UsageError("invalid NLI category pair '" + std::string(code) + "' (expected EN, EC or NC)");
}

std::string category_pair_code(NliCategoryPair pair) {
  constexpr char letters[] = {'E', 'N', 'C'};
  return {letters[static_cast<std::size_t>(pair.first)], letters[static_cast<std::size_t>(pair.second)]};
}

std::vector<PairExample> filter_nli_categories(const std::vector<PairExample>& examples,
                                               NliCategoryPair kept) {
  auto first = static_cast<std::size_t>(kept.first);
  auto second = static_cast<std::size_t>(kept.second);
  if (first == second || first > 2 || second > 2) {
    throw UsageError("filter_nli_categories: kept labels must be two distinct NLI labels");
  }
  if (first > second) std::swap(first, second);
  const auto& names = nli_label_names();
  std::vector<PairExample> out;
  for (const auto& ex : examples) {
    if (ex.label != first && ex.label != second) continue;
    PairExample copy = ex;
    copy.label = ex.label == first ? 0 : 1;
    copy.label_names = {names[first], names[second]};
    out.push_back(std::move(copy));
  }
  return out;
}

std::vector<ChoiceExample> load_sct(const std::filesystem::path& path) {
  const auto records = csv::read_file(path);
  std::vector<ChoiceExample> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::size_t n = rec.fields.size();
    if (n != 7 && n != 8) {
      throw DataError(where(path, rec.line) + ": expected 7 SCT columns (or 8 with a story id), found " +
                      std::to_string(n));
    }
    const std::size_t off = n - 7;
    ChoiceExample ex;
    for (std::size_t i = 0; i < 4; ++i) ex.context_sentences.push_back(rec.fields[off + i]);
    ex.choices = {rec.fields[off + 4], rec.fields[off + 5]};
    ex.answer_index = parse_answer(rec.fields[off + 6], 2, path, rec.line);
    out.push_back(std::move(ex));
  }
  return out;
}

void save_sct(const std::filesystem::path& path, const std::vector<ChoiceExample>& examples) {
  std::string out =
      csv::format_row({"sentence1", "sentence2", "sentence3", "sentence4", "ending1", "ending2",
                       "answer"}) +
      "\n";
  for (const auto& ex : examples) {
    if (ex.context_sentences.size() != 4 || ex.choices.size() != 2) {
      throw UsageError("save_sct: SCT rows need 4 context sentences and 2 endings");
    }
    std::vector<std::string> row = ex.context_sentences;
    row.insert(row.end(), ex.choices.begin(), ex.choices.end());
    row.push_back(std::to_string(ex.answer_index + 1));
    out += csv::format_row(row) + "\n";
  }
  csv::write_text_atomic(path, out);
}

std::vector<ChoiceExample> load_choice_csv(const std::filesystem::path& path) {
  const auto records = csv::read_file(path);
  if (records.empty()) throw DataError(path.string() + ": missing header row");
  const std::size_t columns = records.front().fields.size();
  if (columns < 4) {
    throw DataError(path.string() + ": choice CSV needs context, at least two endings and answer");
  }
  const std::size_t num_choices = columns - 2;
  std::vector<ChoiceExample> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != columns) {
      throw DataError(where(path, rec.line) + ": expected " + std::to_string(columns) +
                      " columns, found " + std::to_string(rec.fields.size()));
    }
    ChoiceExample ex;
    if (!rec.fields[0].empty()) ex.context_sentences = {rec.fields[0]};
    ex.choices.assign(rec.fields.begin() + 1, rec.fields.begin() + 1 + static_cast<long>(num_choices));
    ex.answer_index = parse_answer(rec.fields.back(), num_choices, path, rec.line);
    out.push_back(std::move(ex));
  }
  return out;
}

void save_choice_csv(const std::filesystem::path& path, const std::vector<ChoiceExample>& examples) {
  const std::size_t k = examples.empty() ? 2 : examples.front().choices.size();
  std::vector<std::string> header = {"context"};
  for (std::size_t i = 1; i <= k; ++i) header.push_back("ending" + std::to_string(i));
  header.push_back("answer");
  std::string out = csv::format_row(header) + "\n";
  for (const auto& ex : examples) {
    if (ex.choices.size() != k) throw UsageError("save_choice_csv: rows differ in choice count");
    std::string context;
    for (const auto& s : ex.context_sentences) {
      if (!context.empty()) context += ' ';
      context += s;
    }
    std::vector<std::string> row = {context};
    row.insert(row.end(), ex.choices.begin(), ex.choices.end());
    row.push_back(std::to_string(ex.answer_index + 1));
    out += csv::format_row(row) + "\n";
  }
  csv::write_text_atomic(path, out);
}

ChoiceExample subset_context(const ChoiceExample& example, const std::vector<std::size_t>& keep) {
  for (auto k : keep) {
    if (k < 1 || k > 4) {
      throw UsageError("subset_context: sentence index " + std::to_string(k) + " outside 1..4");
    }
  }
  ChoiceExample out = example;
  out.context_sentences.clear();
  for (std::size_t i = 0; i < example.context_sentences.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), i + 1) != keep.end()) {
      out.context_sentences.push_back(example.context_sentences[i]);
    }
  }
  return out;
}

std::vector<std::size_t> parse_keep_set(std::string_view text) {
  std::vector<std::size_t> out;
  std::string item;
  auto flush = [&] {
    const std::string t = trim(item);
    item.clear();
    if (t.empty()) return;
    if (!std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
        t.size() > 2) {
      throw UsageError("invalid sentence index '" + t + "'");
    }
    const auto v = static_cast<std::size_t>(std::stoul(t));
    if (v < 1 || v > 4) throw UsageError("sentence index " + t + " outside 1..4");
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  };
  for (char c : text) {
    if (c == ',') {
      flush();
    } else {
      item.push_back(c);
    }
  }
  flush();
  std::sort(out.begin(), out.end());
  return out;
}

SctSplit split_sct_v10(const std::vector<ChoiceExample>& examples, std::uint64_t seed) {
  if (examples.size() != kSctV10Rows) {
    throw DataError("split_sct_v10: expected " + std::to_string(kSctV10Rows) + " rows, got " +
                    std::to_string(examples.size()));
  }
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  SctSplit split;
  const std::size_t train_rows = kSctV10Rows - kSctV10DevRows;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < train_rows ? split.train : split.dev).push_back(examples[order[i]]);
  }
  return split;
}

}  // namespace transbert
