#pragma once
// Binary checkpoint format, all integers little-endian:
//
//   "HUBR"                magic
//   u32                   version (1)
//   u32                   tensor count
//   per tensor:
//     u16 + bytes         UTF-8 name
//     u8                  rank
//     u32 x rank          dims
//     f32 x prod(dims)    payload
//
// Values are stored at 32-bit precision; loading widens back to f64.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hubrouter/tensor.hpp"

namespace hubrouter {

inline constexpr char kCheckpointMagic[4] = {'H', 'U', 'B', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(std::span<const NamedTensor> tensors, const std::filesystem::path& path);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into existing parameters, matched by name. Every
// parameter must be present with an identical shape.
void load_checkpoint_into(std::span<NamedTensor> params, const std::filesystem::path& path);
void assign_checkpoint(std::span<NamedTensor> params, std::span<const NamedTensor> loaded);

}  // namespace hubrouter
