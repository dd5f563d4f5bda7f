#include "transbert/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "transbert/errors.hpp"

namespace transbert {
namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

std::string strip_continuation(std::string_view piece) {
  if (piece.starts_with(kContinuationPrefix)) piece.remove_prefix(kContinuationPrefix.size());
  return std::string(piece);
}

}  // namespace

Vocab Vocab::from_tokens(std::vector<std::string> tokens, bool cased) {
  Vocab v;
  v.cased_ = cased;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.ids_.emplace(tokens[i], static_cast<TokenId>(i)).second) {
      throw DataError("vocab: duplicate token '" + tokens[i] + "' at id " + std::to_string(i));
    }
  }
  v.tokens_ = std::move(tokens);
  auto require = [&](std::string_view name) {
    auto id = v.find(name);
    if (!id) throw DataError("vocab: missing special token " + std::string(name));
    return *id;
  };
  if (require(kPadToken) != 0) throw DataError("vocab: [PAD] must have id 0");
  v.unk_ = require(kUnkToken);
  v.cls_ = require(kClsToken);
  v.sep_ = require(kSepToken);
  v.mask_ = require(kMaskToken);
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path, bool cased) {
  std::ifstream in(path);
  if (!in) throw DataError("vocab: cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  // A trailing empty line is the file terminator, not a token.
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return from_tokens(std::move(tokens), cased);
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("vocab: cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw DataError("vocab: write failed for " + path.string());
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id_of(std::string_view token) const { return find(token).value_or(unk_); }

bool Vocab::is_special(TokenId id) const {
  return id == 0 || id == unk_ || id == cls_ || id == sep_ || id == mask_;
}

std::vector<std::string> split_words(std::string_view text, bool cased) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      if (!cased && c >= 'A' && c <= 'Z') ch = static_cast<char>(c - 'A' + 'a');
      current.push_back(ch);
    }
  }
  flush();
  return words;
}

std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c <= 0xF7) {
      len = 4;
    } else if (c >= 0xE0) {
      len = 3;
    } else if (c >= 0xC0) {
      len = 2;
    }
    if (i + len > word.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

Vocab train_vocab(std::string_view corpus, std::size_t target_size, bool cased) {
  std::map<std::string, std::size_t> word_counts;
  for (auto& w : split_words(corpus, cased)) ++word_counts[w];
  if (word_counts.empty()) throw UsageError("empty corpus");

  std::set<std::string> initial_chars;
  std::set<std::string> inner_chars;
  std::set<std::string> all_chars;
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [w, count] : word_counts) {
    auto chars = utf8_chars(w);
    std::vector<std::string> symbols;
    for (std::size_t i = 0; i < chars.size(); ++i) {
      all_chars.insert(chars[i]);
      if (i == 0) {
        initial_chars.insert(chars[i]);
        symbols.push_back(chars[i]);
      } else {
        inner_chars.insert(chars[i]);
        symbols.push_back(std::string(kContinuationPrefix) + chars[i]);
      }
    }
    words.emplace_back(std::move(symbols), count);
  }

  constexpr std::size_t kSpecials = 5;
  std::set<std::string> alphabet;
  if (kSpecials + 2 * all_chars.size() <= target_size) {
    // Room for both forms of every character.
    for (const auto& c : all_chars) {
      alphabet.insert(c);
      alphabet.insert(std::string(kContinuationPrefix) + c);
    }
  } else {
    for (const auto& c : initial_chars) alphabet.insert(c);
    for (const auto& c : inner_chars) alphabet.insert(std::string(kContinuationPrefix) + c);
  }
  if (kSpecials + alphabet.size() > target_size) {
    throw UsageError("train_vocab: target size " + std::to_string(target_size) +
                     " cannot hold the " + std::to_string(alphabet.size()) +
                     "-symbol character alphabet plus special tokens");
  }

  std::vector<std::string> tokens = {std::string(kPadToken), std::string(kUnkToken),
                                     std::string(kClsToken), std::string(kSepToken),
                                     std::string(kMaskToken)};
  tokens.insert(tokens.end(), alphabet.begin(), alphabet.end());
  std::set<std::string> known(tokens.begin(), tokens.end());

  while (tokens.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& [symbols, count] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        pair_counts[{symbols[i], symbols[i + 1]}] += count;
      }
    }
    if (pair_counts.empty()) break;
    // Highest count wins; std::map order makes ties resolve lexicographically.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    const std::string merged = left + strip_continuation(right);
    for (auto& [symbols, count] : words) {
      std::vector<std::string> next;
      next.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(symbols[i]);
        }
      }
      symbols = std::move(next);
    }
    if (known.insert(merged).second) tokens.push_back(merged);
  }
  return Vocab::from_tokens(std::move(tokens), cased);
}

Vocab train_vocab(std::istream& corpus, std::size_t target_size, bool cased) {
  std::string text((std::istreambuf_iterator<char>(corpus)), std::istreambuf_iterator<char>());
  return train_vocab(std::string_view(text), target_size, cased);
}

std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> pieces;
  for (const auto& word : split_words(text, vocab.cased())) {
    const auto chars = utf8_chars(word);
    if (chars.size() > kMaxCharsPerWord) {
      pieces.emplace_back(kUnkToken);
      continue;
    }
    std::vector<std::string> word_pieces;
    std::size_t start = 0;
    bool bad = false;
    while (start < chars.size()) {
      std::size_t end = chars.size();
      std::string match;
      while (end > start) {
        std::string candidate = start > 0 ? std::string(kContinuationPrefix) : std::string();
        for (std::size_t k = start; k < end; ++k) candidate += chars[k];
        if (vocab.contains(candidate)) {
          match = std::move(candidate);
          break;
        }
        --end;
      }
      if (match.empty()) {
        bad = true;
        break;
      }
      word_pieces.push_back(std::move(match));
      start = end;
    }
    if (bad) {
      pieces.emplace_back(kUnkToken);
    } else {
      pieces.insert(pieces.end(), word_pieces.begin(), word_pieces.end());
    }
  }
  return pieces;
}

std::string detokenize(const std::vector<std::string>& pieces) {
  std::string out;
  for (const auto& p : pieces) {
    if (p.starts_with(kContinuationPrefix)) {
      out += strip_continuation(p);
    } else {
      if (!out.empty()) out += ' ';
      out += p;
    }
  }
  return out;
}

std::size_t EncodedInput::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

EncodedInput encode_pair(std::vector<std::string> tokens_a,
                         const std::optional<std::vector<std::string>>& tokens_b,
                         const Vocab& vocab, std::size_t max_len) {
  const std::size_t specials = tokens_b ? 3 : 2;
  if (max_len < specials) {
    throw UsageError("encode_pair: max_len " + std::to_string(max_len) +
                     " is below the minimum layout of " + std::to_string(specials));
  }
  std::vector<std::string> b = tokens_b.value_or(std::vector<std::string>{});
  while (tokens_a.size() + b.size() + specials > max_len) {
    if (tokens_a.size() > b.size()) {
      tokens_a.pop_back();
    } else {
      b.pop_back();
    }
  }

  EncodedInput out;
  out.ids.reserve(max_len);
  auto push = [&](TokenId id, TokenId segment) {
    out.ids.push_back(id);
    out.segments.push_back(segment);
    out.mask.push_back(1);
  };
  push(vocab.cls_id(), 0);
  for (const auto& t : tokens_a) push(vocab.id_of(t), 0);
  push(vocab.sep_id(), 0);
  if (tokens_b) {
    for (const auto& t : b) push(vocab.id_of(t), 1);
    push(vocab.sep_id(), 1);
  }
  while (out.ids.size() < max_len) {
    out.ids.push_back(vocab.pad_id());
    out.segments.push_back(0);
    out.mask.push_back(0);
  }
  return out;
}

}  // namespace transbert
