#pragma once

// Binary parameter checkpoints.
//
// Layout (all integers little-endian):
//   "DFCK" | version u32 | count u32 |
//   count × { name_len u32 | name bytes (UTF-8) | rank u32 | extents u64[rank] | f64[numel] }

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "darkforge/tensor.hpp"

namespace darkforge {

inline constexpr char kCheckpointMagic[4] = {'D', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensors(std::ostream& os, const NamedTensors& tensors);
/// Loaded tensors are plain leaves (requires_grad off).
NamedTensors read_tensors(std::istream& is);

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

}  // namespace darkforge
