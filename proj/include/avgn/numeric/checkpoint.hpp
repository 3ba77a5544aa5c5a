#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "avgn/numeric/ndarray.hpp"
#include "json.hpp"

namespace avgn {

struct Checkpoint {
  std::map<std::string, NdArray> params;
  nlohmann::json meta;  // free-form; the driver stores the model config here
};

// Layout: u64 little-endian header length, JSON index
// {"meta":..., "params":[{"name","shape","offset"}]}, then the fp64 payload in
// little-endian order. Offsets count doubles from the payload start.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace avgn
