#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "ddr/rem/rem.hpp"
#include "ddr/retrieval/retrieval.hpp"

namespace ddr {

/// File layout: 8-byte magic "DDRCKPT1", meta length as u64 LE, JSON meta,
/// then the tensors as LE float32 in manifest order.
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
  using CheckpointError::CheckpointError;
};
class CheckpointLengthError : public CheckpointError {
  using CheckpointError::CheckpointError;
};
class CheckpointKindError : public CheckpointError {
  using CheckpointError::CheckpointError;
};
class CheckpointConfigError : public CheckpointError {
  using CheckpointError::CheckpointError;
};

// dam: an adapted backbone; rem: REM tensors only; full: a backbone
// finetuned end to end without a REM.
enum class ModuleKind { dam, rem, full };
std::string to_string(ModuleKind kind);
ModuleKind parse_module_kind(std::string_view name);

struct CheckpointMeta {
  int version = kCheckpointVersion;
  ModuleKind kind = ModuleKind::dam;
  nlohmann::json config;
  nlohmann::json manifest;  // [{name, shape, offset, bytes}]
  std::uint64_t seed = 0;
};

void save_backbone(const std::filesystem::path& path, const EncoderBackbone& backbone, std::uint64_t seed,
                   ModuleKind kind = ModuleKind::dam);
void save_rem(const std::filesystem::path& path, const RemModule& rem, std::uint64_t seed);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// The stored kind must equal `expected`.
EncoderBackbone load_backbone(const std::filesystem::path& path, ModuleKind expected = ModuleKind::dam);
RemModule load_rem(const std::filesystem::path& path);

/// Loads a backbone and a REM and inserts one into the other; shape
/// disagreement raises CheckpointConfigError.
AssembledModel load_assembled(const std::filesystem::path& backbone_path, const std::filesystem::path& rem_path,
                              ModuleKind backbone_kind = ModuleKind::dam);

/// Same container with magic "DDRINDX1": meta holds the doc ids, similarity
/// kind and checksums; the blob holds the embedding rows.
void save_index(const std::filesystem::path& path, const EmbeddingIndex& index);
EmbeddingIndex load_index(const std::filesystem::path& path);

}  // namespace ddr
