#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "selfteach/scorer.hpp"
#include "selfteach/vocabulary.hpp"

namespace selfteach {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Where a checkpoint came from.
struct Lineage {
  std::string stage;
  std::string manifest_hash;
  std::string parent_id;                  // empty for fresh initialization
  std::vector<std::string> soft_file_ids;  // soft-label files it was trained on
};

struct Checkpoint {
  std::string id;
  ScorerParams params;
  std::optional<Vocabulary> vocab;  // absent for bare parameter files
  std::size_t max_len = 0;
  Lineage lineage;
};

// Content digest of the parameter arrays (hex).
std::string params_digest(const ScorerParams& params);

// Container: 8-byte magic, u32 format version, u64 header length, JSON header
// (seed, task, shape table, vocabulary, lineage), raw little-endian float32 arrays.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Throws CheckpointError on corruption or version mismatch, ContractError when
// the stored head does not match expected_task.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Task> expected_task = std::nullopt);

// Parameter-only round trip used by tests and the optimizer tooling.
void save_params(const std::filesystem::path& path, const ScorerParams& params);
ScorerParams load_params(const std::filesystem::path& path, std::optional<Task> expected_task = std::nullopt);

}  // namespace selfteach
