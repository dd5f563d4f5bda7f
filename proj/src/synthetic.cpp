#include "transbert/synthetic.hpp"

#include <algorithm>
#include <array>
#include <string_view>

#include "transbert/rng.hpp"

namespace transbert::synth {
namespace {

struct StatePair {
  std::string_view state;
  std::string_view action;
  std::string_view opposite_state;
  std::string_view opposite_action;
};

// The first state of each pair carries positive sentiment.
constexpr std::array<StatePair, 6> kStates = {{
    {"happy", "smiled", "sad", "cried"},
    {"full", "napped", "hungry", "ate"},
    {"rested", "jogged", "tired", "slept"},
    {"rich", "shopped", "poor", "saved"},
    {"calm", "relaxed", "angry", "yelled"},
    {"warm", "sweated", "cold", "shivered"},
}};

constexpr std::array<std::string_view, 12> kNames = {"anna", "ben",  "carl", "dora",
                                                     "emma", "fred", "gina", "hugo",
                                                     "iris", "jack", "kate", "leo"};

constexpr std::array<std::string_view, 6> kPlaces = {"park", "store", "school",
                                                     "beach", "office", "market"};

constexpr std::array<std::string_view, 4> kDays = {"monday", "sunny", "rainy", "quiet"};

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& items, Rng& rng) {
  return items[rng.below(N)];
}

std::string other_name(std::string_view name, Rng& rng) {
  std::string_view n = pick(kNames, rng);
  while (n == name) n = pick(kNames, rng);
  return std::string(n);
}

struct Situation {
  std::string name;
  std::size_t pair;
  bool flipped;  // use the opposite state

  std::string_view state() const { return flipped ? kStates[pair].opposite_state : kStates[pair].state; }
  std::string_view action() const {
    return flipped ? kStates[pair].opposite_action : kStates[pair].action;
  }
  std::string_view contrary_action() const {
    return flipped ? kStates[pair].action : kStates[pair].opposite_action;
  }
  bool positive() const { return !flipped; }
};

Situation draw_situation(Rng& rng) {
  return {std::string(pick(kNames, rng)), rng.below(kStates.size()), rng.bernoulli(0.5)};
}

std::string state_sentence(const Situation& s) { return s.name + " was " + std::string(s.state()) + " ."; }

std::string action_sentence(std::string_view name, std::string_view action) {
  return std::string(name) + " " + std::string(action) + " .";
}

std::string filler(std::string_view name, Rng& rng) {
  switch (rng.below(5)) {
    case 0:
      return std::string(name) + " went to the " + std::string(pick(kPlaces, rng)) + " .";
    case 1:
      return std::string(name) + " met " + other_name(name, rng) + " .";
    case 2:
      return std::string(name) + " read a book .";
    case 3:
      return std::string(name) + " called " + other_name(name, rng) + " .";
    default:
      return "it was a " + std::string(pick(kDays, rng)) + " morning .";
  }
}

/// An action unrelated to the situation's state pair.
std::string_view unrelated_action(const Situation& s, Rng& rng) {
  std::size_t other = rng.below(kStates.size() - 1);
  if (other >= s.pair) ++other;
  return rng.bernoulli(0.5) ? kStates[other].action : kStates[other].opposite_action;
}

std::vector<std::string> story_context(const Situation& s, Rng& rng) {
  std::vector<std::string> context;
  const std::size_t key = rng.below(4);
  for (std::size_t i = 0; i < 4; ++i) {
    context.push_back(i == key ? state_sentence(s) : filler(s.name, rng));
  }
  return context;
}

}  // namespace

std::vector<ChoiceExample> stories(std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x53435400));
  std::vector<ChoiceExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Situation s = draw_situation(rng);
    ChoiceExample ex;
    ex.context_sentences = story_context(s, rng);
    const std::string right = action_sentence(s.name, s.action());
    const std::string wrong = action_sentence(s.name, s.contrary_action());
    ex.answer_index = rng.below(2);
    ex.choices = ex.answer_index == 0 ? std::vector<std::string>{right, wrong}
                                      : std::vector<std::string>{wrong, right};
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<PairExample> nli(std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x4e4c4900));
  std::vector<PairExample> out;
  while (out.size() < count) {
    const Situation s = draw_situation(rng);
    std::string premise = state_sentence(s);
    if (rng.bernoulli(0.5)) premise = filler(s.name, rng) + " " + premise;
    const std::string neutral = rng.bernoulli(0.5)
                                    ? action_sentence(s.name, unrelated_action(s, rng))
                                    : action_sentence(other_name(s.name, rng), s.action());
    const std::array<std::string, 3> hypotheses = {
        action_sentence(s.name, s.action()), neutral,
        action_sentence(s.name, s.contrary_action())};
    std::array<std::size_t, 3> order = {0, 1, 2};
    rng.shuffle(std::span<std::size_t>(order));
    for (auto label : order) {
      if (out.size() == count) break;
      out.push_back({premise, hypotheses[label], label, nli_label_names()});
    }
  }
  return out;
}

std::vector<PairExample> sentiment(std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x53454e00));
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Situation s = draw_situation(rng);
    std::string text = rng.bernoulli(0.5) ? state_sentence(s) : action_sentence(s.name, s.action());
    if (rng.bernoulli(0.3)) text = filler(s.name, rng) + " " + text;
    out.push_back({text, "", s.positive() ? 1u : 0u, sentiment_label_names()});
  }
  return out;
}

std::vector<ChoiceExample> next_action(std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x53574100));
  std::vector<ChoiceExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Situation s = draw_situation(rng);
    ChoiceExample ex;
    ex.context_sentences = {state_sentence(s)};
    std::vector<std::string> wrong = {action_sentence(s.name, s.contrary_action())};
    while (wrong.size() < 3) {
      auto candidate = action_sentence(s.name, unrelated_action(s, rng));
      if (std::find(wrong.begin(), wrong.end(), candidate) == wrong.end()) {
        wrong.push_back(std::move(candidate));
      }
    }
    ex.answer_index = rng.below(4);
    for (std::size_t c = 0, w = 0; c < 4; ++c) {
      ex.choices.push_back(c == ex.answer_index ? action_sentence(s.name, s.action()) : wrong[w++]);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

SentenceCorpus corpus(std::size_t documents, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x434f5200));
  SentenceCorpus c;
  for (std::size_t i = 0; i < documents; ++i) {
    const Situation s = draw_situation(rng);
    auto doc = story_context(s, rng);
    doc.push_back(action_sentence(s.name, s.action()));
    c.documents.push_back(std::move(doc));
  }
  return c;
}

std::string corpus_text(const SentenceCorpus& corpus) {
  std::string out;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    if (d) out += '\n';
    for (const auto& s : corpus.documents[d]) out += s + '\n';
  }
  return out;
}

std::string lexicon_text() {
  std::string out;
  for (auto n : kNames) out += std::string(n) + " was went to the met read a book called it morning .\n";
  for (const auto& p : kStates) {
    out += std::string(p.state) + " " + std::string(p.action) + " " + std::string(p.opposite_state) +
           " " + std::string(p.opposite_action) + "\n";
  }
  for (auto p : kPlaces) out += std::string(p) + "\n";
  for (auto d : kDays) out += std::string(d) + "\n";
  return out;
}

}  // namespace transbert::synth
