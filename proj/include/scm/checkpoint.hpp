#pragma once

// Checkpoint layout, all integers little-endian u32:
//   "SCM1" | version | len + config text | len + vocabulary text |
//   tensor count | per tensor: len + name, rank, extents, float32 payload |
//   CRC-32 of every preceding byte

#include <string>
#include <vector>

#include "scm/config.hpp"
#include "scm/model.hpp"

namespace scm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  RunConfig config;
  Vocabulary vocab;
  std::vector<NamedTensor> tensors;
};

/// Parameter values are rounded to float32.
std::string encode_checkpoint(const RunConfig& config, Model& model);
/// ChecksumError for truncated or corrupted bytes, MigrationError for another
/// format version.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const RunConfig& config, Model& model);
Checkpoint load_checkpoint(const std::string& path);

/// Copies tensors into the model. InventoryError names the first expected
/// parameter that is missing, duplicated, unexpected or mis-shaped.
void apply_tensors(Model& model, const std::vector<NamedTensor>& tensors);
/// Model built from the embedded config and vocabulary, then filled.
Model restore_model(const Checkpoint& ckpt);

/// Rounds every parameter to float32 in place (the checkpoint precision).
void quantize_parameters(Model& model);

}  // namespace scm
