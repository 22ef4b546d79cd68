#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coad/tensor/tensor.hpp"

namespace coad::tensor {

// Binary checkpoint layout (little-endian):
//
//   magic      8 bytes  "COADCKPT"
//   version    u8       kCheckpointVersion
//   width      u8       bytes per value (4 or 8)
//   config     u32 length + UTF-8 JSON (model config and vocabulary echo)
//   count      u32      number of parameters
//   per parameter:
//     name     u32 length + bytes
//     rank     u32, then rank x u64 extents
//     values   product(extents) x width bytes
inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'A', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;  // widened on read
};

struct Checkpoint {
  std::uint8_t value_width = 4;
  std::string config_json;
  std::vector<CheckpointEntry> entries;
};

// Writes to a temporary sibling file, then renames over `path`.
template <typename T>
void write_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                      const std::vector<std::pair<std::string, const Tensor<T>*>>& params);

// Throws DataError on bad magic, unknown version or truncation.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace coad::tensor
