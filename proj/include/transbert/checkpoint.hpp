#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "transbert/encoder.hpp"
#include "transbert/errors.hpp"
#include "transbert/tokenizer.hpp"

namespace transbert {

inline constexpr char kCheckpointMagic[4] = {'T', 'B', 'C', 'K'};
inline constexpr char kHeadMagic[4] = {'T', 'B', 'H', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// One applied stage. `init` is "scratch" for a stage that started from
/// freshly initialized weights and "checkpoint" otherwise.
struct StageRecord {
  std::string task;
  std::string init;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  std::string selection_metric;
  double best_dev_metric = 0.0;

  bool operator==(const StageRecord&) const = default;
};

/// Transferable state: lexicon + transformer encoder only, the vocabulary it
/// was trained with, and the stages already applied.
struct Checkpoint {
  EncoderParams<float> encoder;
  std::vector<std::string> vocab_tokens;
  bool cased = false;
  std::vector<StageRecord> provenance;

  const ModelConfig& config() const { return encoder.config(); }
  Vocab vocab() const { return Vocab::from_tokens(vocab_tokens, cased); }
};

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // bytes from the start of the payload section
};

class CheckpointError : public DataError {
 public:
  enum class Kind { io, bad_magic, version_mismatch, malformed_header, truncated_payload };

  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Written atomically (temp file + rename).
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Tensor names and payload offsets as stored in the file header.
std::vector<ManifestEntry> read_checkpoint_manifest(const std::filesystem::path& path);

/// Serialized bytes (the exact file contents save_checkpoint writes).
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);

/// Task heads travel separately from checkpoints, in the same container
/// layout with magic "TBHD".
void save_head(const TaskHead<float>& head, const std::filesystem::path& path);
TaskHead<float> load_head(const std::filesystem::path& path);

/// Conventional head file next to a checkpoint: "<checkpoint>.head".
std::filesystem::path head_path_for(const std::filesystem::path& checkpoint_path);

}  // namespace transbert
