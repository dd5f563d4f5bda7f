#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace transbert {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kContinuationPrefix = "##";

/// Immutable token <-> id mapping. [PAD] is always id 0; the other special
/// tokens are located by name.
class Vocab {
 public:
  /// Validates: unique tokens, all five specials present, [PAD] at id 0.
  static Vocab from_tokens(std::vector<std::string> tokens, bool cased);

  /// One token per line, line number = id.
  static Vocab load(const std::filesystem::path& path, bool cased);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  bool cased() const { return cased_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::optional<TokenId> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  /// Id of `token`, or [UNK] when absent.
  TokenId id_of(std::string_view token) const;

  TokenId pad_id() const { return 0; }
  TokenId unk_id() const { return unk_; }
  TokenId cls_id() const { return cls_; }
  TokenId sep_id() const { return sep_; }
  TokenId mask_id() const { return mask_; }
  bool is_special(TokenId id) const;

  bool operator==(const Vocab& other) const {
    return cased_ == other.cased_ && tokens_ == other.tokens_;
  }

 private:
  Vocab() = default;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  bool cased_ = false;
  TokenId unk_ = 1;
  TokenId cls_ = 2;
  TokenId sep_ = 3;
  TokenId mask_ = 4;
};

/// Lower-cases (ASCII) when !cased, splits on whitespace and isolates ASCII
/// punctuation as single-character words.
std::vector<std::string> split_words(std::string_view text, bool cased);

/// Splits UTF-8 text into code-point substrings. Invalid bytes become
/// single-byte pieces.
std::vector<std::string> utf8_chars(std::string_view word);

/// WordPiece vocabulary learned by frequency-ranked pair merges. The result
/// lists specials, then the character alphabet (bare and "##" forms, sorted),
/// then merged pieces in the order they were learned.
Vocab train_vocab(std::string_view corpus, std::size_t target_size, bool cased);
Vocab train_vocab(std::istream& corpus, std::size_t target_size, bool cased);

/// Greedy longest-match-first segmentation. A word with any unmatchable
/// remainder becomes a single [UNK].
std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab);

/// Joins pieces back into space-separated words, gluing "##" pieces onto
/// the preceding piece.
std::string detokenize(const std::vector<std::string>& pieces);

/// [CLS] a [SEP] (b [SEP]) padded with [PAD] to max_len.
struct EncodedInput {
  std::vector<TokenId> ids;
  std::vector<TokenId> segments;
  std::vector<TokenId> mask;

  std::size_t padded_length() const { return ids.size(); }
  /// Number of real (unpadded) positions.
  std::size_t length() const;

  bool operator==(const EncodedInput&) const = default;
};

/// Over-length pairs are truncated one token at a time from the end of the
/// currently longer segment (ties trim b).
EncodedInput encode_pair(std::vector<std::string> tokens_a,
                         const std::optional<std::vector<std::string>>& tokens_b,
                         const Vocab& vocab, std::size_t max_len);

}  // namespace transbert
