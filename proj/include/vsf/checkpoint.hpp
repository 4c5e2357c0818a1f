#pragma once

#include <string>

#include "vsf/toy.hpp"

namespace vsf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary checkpoint: magic "VSFT", format version u32, then named
/// tensors as (name length u32, name bytes, rank u32, dims u32..., values as
/// little-endian 32-bit floats). A "__config__" tensor with the model
/// hyperparameters comes first. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ToyModel& m);
ToyModel load_checkpoint(const std::string& path);

} // namespace vsf
