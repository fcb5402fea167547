#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rhrn/model.hpp"

namespace rhrn {

// Binary layout, all integers little-endian:
//   "RHRN" | u32 version (=1) | u64 architecture fingerprint | u32 entry count
//   per entry: u16 name length | UTF-8 name | u8 frozen | u8 rank |
//              u32 dims[rank] | float32 payload[product(dims)]

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  bool frozen = false;
  TensorF value;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t fingerprint = 0;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(std::string_view name) const;
};

/// Snapshot of every table entry (values and frozen flags).
Checkpoint make_checkpoint(const SegmentationModel& model);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws ValidationError on bad magic, unsupported version, truncation or
/// trailing bytes.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source = "checkpoint");

Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Writes through a temporary file and renames, so an interrupted write never
/// clobbers the previous checkpoint.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Overwrites every parameter value and frozen flag. Everything is validated
/// first: a fingerprint mismatch raises IncompatibleArtifact, missing, extra
/// or mis-shaped entries raise IncompatibleArtifact listing every offender,
/// and in all error cases the model is left untouched.
void apply_checkpoint(SegmentationModel& model, const Checkpoint& checkpoint);

void save_checkpoint(const SegmentationModel& model, const std::filesystem::path& path);
void load_checkpoint(SegmentationModel& model, const std::filesystem::path& path);

/// Reconstructs the topology from entry names and shapes. The caller should
/// still compare fingerprints; apply_checkpoint does.
ArchitectureSpec infer_architecture(const Checkpoint& checkpoint);

/// Loads an externally produced encoder weight table. Only "backbone.*"
/// entries are considered; their names and shapes must match the model's
/// encoder exactly. The fingerprint is not checked.
void load_pretrained(SegmentationModel& model, const Checkpoint& checkpoint);

}  // namespace rhrn
