#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mnf/model.hpp"

namespace mnf {

// "mnf-v1" container:
//   8 bytes   magic "mnf-v1\0\0"
//   u64 LE    header length in bytes
//   header    JSON {"format": "mnf-v1", "model": <spec>, "tensors": [{"name", "shape"}...]}
//   payload   each tensor as little-endian float64, in header order
std::vector<unsigned char> serialize(Model& model);
Model deserialize(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mnf
