#pragma once

#include <cstdint>
#include <filesystem>

#include "cfseg/unet.hpp"

namespace cfseg {

struct Checkpoint {
  UNetConfig config;
  std::int64_t step = 0;
  NetworkParams<float> params;
};

/// Binary archive, little-endian throughout:
///   "CFSEGNET" | u32 version | i32 in, out, levels, base_width | f64 bn_momentum, bn_eps
///   | i64 step | u32 entry count
///   then per entry: u32 name length | name | u8 trainable | u32 rank | i64 dims[rank]
///   | float32 data[prod(dims)]
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cfseg
