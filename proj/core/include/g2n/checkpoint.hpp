#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "g2n/shape.hpp"

namespace g2n {

// One named tensor inside a checkpoint file. Data is always 32-bit float in
// the container regardless of the compute precision.
struct TensorBlob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// Checkpoint container: magic "RFRI", u32 little-endian format version, u32
// entry count, then per entry (u32 name length, name bytes, u32 rank, rank
// u32 extents, numel f32 little-endian values), terminated by a u32 CRC-32 of
// every preceding byte. Round trips are bit-exact.
inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path,
                      const std::vector<TensorBlob>& entries);

std::vector<TensorBlob> read_checkpoint(const std::string& path);

}  // namespace g2n
