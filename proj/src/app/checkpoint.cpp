#include "ddr/app/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "ddr/app/config.hpp"

namespace ddr {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'D', 'D', 'R', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

float get_f32(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

void write_file(const std::filesystem::path& path, ModuleKind kind, const json& config, const ParamSet<float>& params,
                std::uint64_t seed) {
  json manifest = json::array();
  std::string blob;
  for (const auto& [name, e] : params) {
    manifest.push_back({{"name", name}, {"shape", e.value.shape()}, {"offset", blob.size()},
                        {"bytes", e.value.numel() * 4}});
    for (float v : e.value.values()) put_f32(blob, v);
  }
  const json meta{{"format_version", kCheckpointVersion}, {"kind", to_string(kind)}, {"config", config},
                  {"manifest", manifest}, {"seed", seed}, {"blob_bytes", blob.size()}};
  const std::string meta_text = meta.dump();
  std::string header(kMagic.begin(), kMagic.end());
  put_u64(header, meta_text.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << header << meta_text << blob;
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

struct RawCheckpoint {
  CheckpointMeta meta;
  std::string blob;
};

RawCheckpoint read_file(const std::filesystem::path& path, bool with_blob) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  char header[16];
  if (!in.read(header, 16) || std::memcmp(header, kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointFormatError(path.string() + ": not a checkpoint file");
  }
  const std::uint64_t meta_len = get_u64(header + 8);
  std::string meta_text(meta_len, '\0');
  if (meta_len > (1ULL << 30) || !in.read(meta_text.data(), static_cast<std::streamsize>(meta_len))) {
    throw CheckpointLengthError(path.string() + ": truncated metadata");
  }
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::parse_error& e) {
    throw CheckpointFormatError(path.string() + ": bad metadata: " + e.what());
  }
  RawCheckpoint raw;
  try {
    raw.meta.version = meta.at("format_version").get<int>();
    if (raw.meta.version != kCheckpointVersion) {
      throw CheckpointVersionError(path.string() + ": format version " + std::to_string(raw.meta.version) +
                                   ", expected " + std::to_string(kCheckpointVersion));
    }
    raw.meta.kind = parse_module_kind(meta.at("kind").get<std::string>());
    raw.meta.config = meta.at("config");
    raw.meta.manifest = meta.at("manifest");
    raw.meta.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CheckpointFormatError(path.string() + ": bad metadata: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointFormatError(path.string() + ": " + e.what());
  }
  if (!with_blob) return raw;

  raw.blob.assign(std::istreambuf_iterator<char>(in), {});
  std::uint64_t expected = 0;
  for (const auto& m : raw.meta.manifest) {
    std::uint64_t numel = 1;
    for (std::uint64_t d : m.at("shape")) numel *= d;
    if (m.at("bytes").get<std::uint64_t>() != numel * 4 || m.at("offset").get<std::uint64_t>() != expected) {
      throw CheckpointLengthError(path.string() + ": manifest entry " + m.at("name").get<std::string>() +
                                  " is inconsistent");
    }
    expected += numel * 4;
  }
  if (expected != raw.blob.size()) {
    throw CheckpointLengthError(path.string() + ": manifest accounts for " + std::to_string(expected) +
                                " bytes but the blob holds " + std::to_string(raw.blob.size()));
  }
  return raw;
}

ParamSet<float> decode_params(const RawCheckpoint& raw) {
  ParamSet<float> params;
  for (const auto& m : raw.meta.manifest) {
    Shape shape = m.at("shape").get<Shape>();
    std::vector<float> values(shape_numel(shape));
    const char* p = raw.blob.data() + m.at("offset").get<std::size_t>();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f32(p + 4 * i);
    params.add(m.at("name").get<std::string>(), Tensor<float>(std::move(shape), std::move(values)));
  }
  return params;
}

// Names and shapes must match a freshly initialized module of this config.
void check_layout(const ParamSet<float>& got, const ParamSet<float>& expected, const std::filesystem::path& path) {
  if (got.size() != expected.size()) {
    throw CheckpointConfigError(path.string() + ": " + std::to_string(got.size()) + " tensors, config implies " +
                                std::to_string(expected.size()));
  }
  for (const auto& [name, e] : expected) {
    if (!got.contains(name)) throw CheckpointConfigError(path.string() + ": missing tensor " + name);
    if (got.get(name).shape() != e.value.shape()) {
      throw CheckpointConfigError(path.string() + ": tensor " + name + " has shape " +
                                  shape_str(got.get(name).shape()) + ", config implies " + shape_str(e.value.shape()));
    }
  }
}

}  // namespace

std::string to_string(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::dam: return "dam";
    case ModuleKind::rem: return "rem";
    case ModuleKind::full: return "full";
  }
  throw std::logic_error("bad module kind");
}

ModuleKind parse_module_kind(std::string_view name) {
  if (name == "dam") return ModuleKind::dam;
  if (name == "rem") return ModuleKind::rem;
  if (name == "full") return ModuleKind::full;
  throw std::invalid_argument("unknown module kind '" + std::string(name) + "'");
}

void save_backbone(const std::filesystem::path& path, const EncoderBackbone& backbone, std::uint64_t seed,
                   ModuleKind kind) {
  if (kind == ModuleKind::rem) throw CheckpointKindError("a backbone cannot be saved as kind rem");
  for (const auto& [name, _] : backbone.params) {
    if (!name.starts_with(param_names::kDamPrefix)) throw CheckpointKindError("backbone holds non-backbone tensor " + name);
  }
  write_file(path, kind, {{"encoder", to_json(backbone.config)}}, backbone.params, seed);
}

void save_rem(const std::filesystem::path& path, const RemModule& rem, std::uint64_t seed) {
  for (const auto& [name, _] : rem.params) {
    if (!name.starts_with(param_names::kRemPrefix)) throw CheckpointKindError("REM holds non-REM tensor " + name);
  }
  write_file(path, ModuleKind::rem,
             {{"rem", to_json(rem.config)}, {"num_layers", rem.num_layers}, {"hidden_dim", rem.hidden_dim}}, rem.params,
             seed);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) { return read_file(path, false).meta; }

EncoderBackbone load_backbone(const std::filesystem::path& path, ModuleKind expected) {
  const RawCheckpoint raw = read_file(path, true);
  if (raw.meta.kind != expected) {
    throw CheckpointKindError(path.string() + ": holds a " + to_string(raw.meta.kind) + " module, expected " +
                              to_string(expected));
  }
  EncoderBackbone bb;
  try {
    bb.config = encoder_config_from_json(raw.meta.config.at("encoder"));
  } catch (const std::exception& e) {
    throw CheckpointConfigError(path.string() + ": bad encoder config: " + e.what());
  }
  bb.params = decode_params(raw);
  Rng rng(0);
  check_layout(bb.params, init_backbone(bb.config, rng).params, path);
  return bb;
}

RemModule load_rem(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_file(path, true);
  if (raw.meta.kind != ModuleKind::rem) {
    throw CheckpointKindError(path.string() + ": holds a " + to_string(raw.meta.kind) + " module, expected rem");
  }
  RemModule rem;
  try {
    rem.config = rem_config_from_json(raw.meta.config.at("rem"));
    rem.num_layers = raw.meta.config.at("num_layers").get<std::size_t>();
    rem.hidden_dim = raw.meta.config.at("hidden_dim").get<std::size_t>();
  } catch (const std::exception& e) {
    throw CheckpointConfigError(path.string() + ": bad REM config: " + e.what());
  }
  rem.params = decode_params(raw);
  Rng rng(0);
  check_layout(rem.params, init_rem(rem.config, rem.num_layers, rem.hidden_dim, rng).params, path);
  return rem;
}

AssembledModel load_assembled(const std::filesystem::path& backbone_path, const std::filesystem::path& rem_path,
                              ModuleKind backbone_kind) {
  const EncoderBackbone bb = load_backbone(backbone_path, backbone_kind);
  const RemModule rem = load_rem(rem_path);
  if (rem.num_layers != bb.config.num_layers || rem.hidden_dim != bb.config.hidden_dim) {
    throw CheckpointConfigError("REM " + rem_path.string() + " (" + std::to_string(rem.num_layers) + " layers, width " +
                                std::to_string(rem.hidden_dim) + ") does not fit backbone " + backbone_path.string() +
                                " (" + std::to_string(bb.config.num_layers) + " layers, width " +
                                std::to_string(bb.config.hidden_dim) + ")");
  }
  return insert_rem(bb, rem);
}

}  // namespace ddr

namespace ddr {

namespace {
constexpr std::array<char, 8> kIndexMagic{'D', 'D', 'R', 'I', 'N', 'D', 'X', '1'};
}

void save_index(const std::filesystem::path& path, const EmbeddingIndex& index) {
  const json meta{{"format_version", kCheckpointVersion},
                  {"doc_ids", index.doc_ids},
                  {"similarity", to_string(index.similarity)},
                  {"model_checksum", index.model_checksum},
                  {"corpus_checksum", index.corpus_checksum},
                  {"rows", index.size()},
                  {"dim", index.dim()}};
  const std::string meta_text = meta.dump();
  std::string bytes(kIndexMagic.begin(), kIndexMagic.end());
  put_u64(bytes, meta_text.size());
  bytes += meta_text;
  for (float v : index.embeddings.values()) put_f32(bytes, v);
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw CheckpointError("cannot write index " + path.string());
  }
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read index " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kIndexMagic.data(), 8) != 0) {
    throw CheckpointFormatError(path.string() + ": not an index file");
  }
  const std::uint64_t meta_len = get_u64(bytes.data() + 8);
  if (meta_len > bytes.size() - 16) throw CheckpointLengthError(path.string() + ": truncated metadata");
  EmbeddingIndex index;
  std::size_t rows = 0, dim = 0;
  try {
    const json meta = json::parse(bytes.substr(16, meta_len));
    const int version = meta.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError(path.string() + ": format version " + std::to_string(version));
    }
    index.doc_ids = meta.at("doc_ids").get<std::vector<std::string>>();
    index.similarity = parse_similarity(meta.at("similarity").get<std::string>());
    index.model_checksum = meta.at("model_checksum").get<std::string>();
    index.corpus_checksum = meta.at("corpus_checksum").get<std::string>();
    rows = meta.at("rows").get<std::size_t>();
    dim = meta.at("dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CheckpointFormatError(path.string() + ": bad metadata: " + e.what());
  }
  const std::size_t blob = bytes.size() - 16 - meta_len;
  if (rows != index.doc_ids.size() || blob != rows * dim * 4) {
    throw CheckpointLengthError(path.string() + ": " + std::to_string(blob) + " embedding bytes for " +
                                std::to_string(index.doc_ids.size()) + " ids of width " + std::to_string(dim));
  }
  std::vector<float> values(rows * dim);
  const char* p = bytes.data() + 16 + meta_len;
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f32(p + 4 * i);
  index.embeddings = Tensor<float>(Shape{rows, dim}, std::move(values));
  return index;
}

}  // namespace ddr
