#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainfed/network.hpp"

namespace brainfed {

// Checkpoint blob layout (all integers little-endian):
//   magic "BGCK", version u16, layer count u16;
//   per layer: name length u16, UTF-8 name bytes, then the weight and bias
//   tensors, each as rank u8, dims u32 per axis, payload f64 little-endian.
// Round-trips are bit-exact.
constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_paramset(const ParamSet& params);
ParamSet decode_paramset(const std::vector<std::uint8_t>& bytes);

void save_paramset(const std::string& path, const ParamSet& params);
ParamSet load_paramset(const std::string& path);

}  // namespace brainfed
