#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m2m/nn/tensor.hpp"

namespace m2m::nn {

// On-disk layout (all integers little-endian):
//   "M2MCKPT1" | u32 version | u32 len, kind bytes | u32 len, metadata bytes
//   | u32 tensor count | per tensor: u32 len, name bytes, u8 dtype (0 = f32),
//     u32 rank, u32 dims[rank], f32 data[] | u32 CRC32 of everything before it
struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string kind;      // "cyclegan", "cyclegan-export", "keyword"
  std::string metadata;  // JSON text
  std::vector<NamedTensor> tensors;

  const Tensor<float>& get(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

}  // namespace m2m::nn
