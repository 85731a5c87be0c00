#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "imvc/nn.hpp"

namespace imvc {

inline constexpr std::string_view kCheckpointTag = "imvcdc-ckpt-v1";

/// Raw contents of a checkpoint file.
struct CheckpointData {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> tensors;
};

// Layout: tag bytes, u64 step, u64 entry count, then per entry
// u64 name length, name bytes, u64 rank, rank x u64 dims, f64 payload.
// All integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
CheckpointData read_checkpoint(const std::filesystem::path& path);
/// Overwrites the values of an existing store. Names and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, ParamStore& params);

}  // namespace imvc
