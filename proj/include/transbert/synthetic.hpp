#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "transbert/pretraining.hpp"
#include "transbert/transfer_data.hpp"

// Template-generated fixtures for every task shape. All generators draw from
// one shared lexicon: a person is in some state ("anna was hungry .") and the
// consistent next action ("anna ate .") is entailed while the action of the
// opposite state ("anna fasted .") contradicts it. Stories hide the state
// sentence among filler sentences, so the right ending is only recoverable
// from context.
namespace transbert::synth {

/// SCT-shaped: 4 context sentences, 2 endings, each ending equally often right.
std::vector<ChoiceExample> stories(std::size_t count, std::uint64_t seed);

/// NLI pairs. Rows come in premise groups holding one entailed, one neutral
/// and one contradicting hypothesis (the last group may be partial).
std::vector<PairExample> nli(std::size_t count, std::uint64_t seed);

/// Single-sentence sentiment: state or action sentences labeled by valence.
std::vector<PairExample> sentiment(std::size_t count, std::uint64_t seed);

/// SWAG-shaped: one context sentence, 4 candidate continuations.
std::vector<ChoiceExample> next_action(std::size_t count, std::uint64_t seed);

/// Unlabeled documents (five-sentence stories) for masked-LM pretraining.
SentenceCorpus corpus(std::size_t documents, std::uint64_t seed);

/// Corpus text in the one-sentence-per-line / blank-line-between-documents format.
std::string corpus_text(const SentenceCorpus& corpus);

/// Every word the generators can emit, one sentence per line; suitable
/// input for train_vocab.
std::string lexicon_text();

}  // namespace transbert::synth
