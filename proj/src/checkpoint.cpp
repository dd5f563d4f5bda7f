#include "transbert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <optional>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "transbert/csv.hpp"

namespace transbert {
namespace {

using json = nlohmann::json;
using Kind = CheckpointError::Kind;

template <typename U>
U byte_reverse(U value) {
  U out = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out = static_cast<U>((out << 8) | ((value >> (8 * i)) & 0xff));
  }
  return out;
}

template <typename U>
void put_le(std::string& out, U value) {
  if constexpr (std::endian::native == std::endian::big) value = byte_reverse(value);
  char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  out.append(bytes, sizeof(U));
}

template <typename U>
U get_le(std::string_view bytes, std::size_t offset) {
  U value;
  std::memcpy(&value, bytes.data() + offset, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) value = byte_reverse(value);
  return value;
}

json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},   {"hidden_size", c.hidden_size},
          {"num_heads", c.num_heads},     {"ffn_size", c.ffn_size},
          {"vocab_size", c.vocab_size},   {"max_positions", c.max_positions},
          {"segment_types", c.segment_types}, {"dropout_keep", c.dropout_keep}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ffn_size = j.at("ffn_size").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.segment_types = j.at("segment_types").get<std::size_t>();
  c.dropout_keep = j.at("dropout_keep").get<double>();
  return c;
}

json manifest_to_json(const ParamSet<float>& params) {
  json out = json::array();
  std::uint64_t offset = 0;
  for (const auto& slot : params) {
    out.push_back({{"name", slot.name}, {"shape", slot.value.shape()}, {"offset", offset}});
    offset += slot.value.size() * sizeof(float);
  }
  return out;
}

std::vector<ManifestEntry> manifest_from_json(const json& j) {
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    out.push_back({e.at("name").get<std::string>(), e.at("shape").get<Shape>(),
                   e.at("offset").get<std::uint64_t>()});
  }
  return out;
}

// Container: magic, u32 version, u64 header length, JSON header, payload.
std::string write_container(const char (&magic)[4], const json& header,
                            const ParamSet<float>& params) {
  const std::string header_text = header.dump();
  std::string out(magic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, header_text.size());
  out += header_text;
  for (const auto& slot : params) {
    for (float v : slot.value.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

struct Container {
  json header;
  std::vector<ManifestEntry> manifest;
  std::string_view payload;
};

Container read_container(const char (&magic)[4], std::string_view bytes, const std::string& what) {
  constexpr std::size_t kPrefix = 4 + 4 + 8;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0) {
    throw CheckpointError(Kind::bad_magic, what + ": bad magic");
  }
  if (bytes.size() < kPrefix) throw CheckpointError(Kind::malformed_header, what + ": truncated header");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::version_mismatch, what + ": version mismatch (file " +
                                                      std::to_string(version) + ", expected " +
                                                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPrefix) {
    throw CheckpointError(Kind::malformed_header, what + ": truncated header");
  }
  Container c;
  try {
    c.header = json::parse(bytes.substr(kPrefix, header_len));
    c.manifest = manifest_from_json(c.header.at("manifest"));
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::malformed_header, what + ": malformed header: " + e.what());
  }
  c.payload = bytes.substr(kPrefix + header_len);
  std::uint64_t expected = 0;
  for (const auto& e : c.manifest) {
    if (e.offset != expected) {
      throw CheckpointError(Kind::malformed_header, what + ": manifest offset mismatch at " + e.name);
    }
    expected += shape_numel(e.shape) * sizeof(float);
  }
  if (expected != c.payload.size()) {
    throw CheckpointError(Kind::truncated_payload,
                          what + ": truncated payload (manifest needs " + std::to_string(expected) +
                              " bytes, file has " + std::to_string(c.payload.size()) + ")");
  }
  return c;
}

// Copies payload tensors into `params`, whose layout must equal the manifest.
void fill_params(const Container& c, ParamSet<float>& params, const std::string& what) {
  if (c.manifest.size() != params.size()) {
    throw CheckpointError(Kind::malformed_header,
                          what + ": manifest has " + std::to_string(c.manifest.size()) +
                              " tensors, geometry expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = c.manifest[i];
    auto& slot = params[i];
    if (e.name != slot.name || e.shape != slot.value.shape()) {
      throw CheckpointError(Kind::malformed_header,
                            what + ": manifest entry " + e.name + " " + shape_to_string(e.shape) +
                                " does not match expected " + slot.name + " " +
                                shape_to_string(slot.value.shape()));
    }
    auto out = slot.value.values();
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = std::bit_cast<float>(get_le<std::uint32_t>(c.payload, e.offset + k * sizeof(float)));
    }
  }
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  json provenance = json::array();
  for (const auto& r : ck.provenance) {
    provenance.push_back({{"task", r.task},
                          {"init", r.init},
                          {"seed", r.seed},
                          {"epochs", r.epochs},
                          {"best_epoch", r.best_epoch},
                          {"selection_metric", r.selection_metric},
                          {"best_dev_metric", r.best_dev_metric}});
  }
  const json header = {{"model_config", config_to_json(ck.config())},
                       {"manifest", manifest_to_json(ck.encoder.params())},
                       {"vocab", {{"cased", ck.cased}, {"tokens", ck.vocab_tokens}}},
                       {"provenance", provenance}};
  return write_container(kCheckpointMagic, header, ck.encoder.params());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  const std::string what = "checkpoint";
  const Container c = read_container(kCheckpointMagic, bytes, what);
  try {
    const ModelConfig config = config_from_json(c.header.at("model_config"));
    try {
      config.validate();
    } catch (const UsageError& e) {
      throw CheckpointError(Kind::malformed_header, what + ": invalid model config: " + e.what());
    }
    Checkpoint ck{EncoderParams<float>(config), {}, false, {}};
    fill_params(c, ck.encoder.params(), what);
    ck.cased = c.header.at("vocab").at("cased").get<bool>();
    ck.vocab_tokens = c.header.at("vocab").at("tokens").get<std::vector<std::string>>();
    for (const auto& r : c.header.at("provenance")) {
      ck.provenance.push_back({r.at("task").get<std::string>(), r.at("init").get<std::string>(),
                               r.at("seed").get<std::uint64_t>(), r.at("epochs").get<std::size_t>(),
                               r.at("best_epoch").get<std::size_t>(),
                               r.at("selection_metric").get<std::string>(),
                               r.at("best_dev_metric").get<double>()});
    }
    return ck;
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::malformed_header, what + ": malformed header: " + e.what());
  }
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  csv::write_text_atomic(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(read_bytes(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<ManifestEntry> read_checkpoint_manifest(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  return read_container(kCheckpointMagic, bytes, path.string()).manifest;
}

void save_head(const TaskHead<float>& head, const std::filesystem::path& path) {
  const json header = {{"kind", head_kind_name(head.kind())},
                       {"hidden_size", head.hidden_size()},
                       {"num_classes", head.num_classes()},
                       {"manifest", manifest_to_json(head.params())}};
  csv::write_text_atomic(path, write_container(kHeadMagic, header, head.params()));
}

TaskHead<float> load_head(const std::filesystem::path& path) {
  const std::string what = path.string();
  const std::string bytes = read_bytes(path);
  const Container c = read_container(kHeadMagic, bytes, what);
  try {
    const auto kind = c.header.at("kind").get<std::string>();
    const auto hidden = c.header.at("hidden_size").get<std::size_t>();
    std::optional<TaskHead<float>> head;
    if (kind == head_kind_name(HeadKind::classification)) {
      head = TaskHead<float>::classification(hidden, c.header.at("num_classes").get<std::size_t>());
    } else if (kind == head_kind_name(HeadKind::multiple_choice)) {
      head = TaskHead<float>::multiple_choice(hidden);
    } else {
      throw CheckpointError(Kind::malformed_header, what + ": unknown head kind '" + kind + "'");
    }
    fill_params(c, head->params(), what);
    return std::move(*head);
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::malformed_header, what + ": malformed header: " + e.what());
  } catch (const UsageError& e) {
    throw CheckpointError(Kind::malformed_header, what + ": invalid head: " + e.what());
  }
}

std::filesystem::path head_path_for(const std::filesystem::path& checkpoint_path) {
  auto p = checkpoint_path;
  p += ".head";
  return p;
}

}  // namespace transbert
