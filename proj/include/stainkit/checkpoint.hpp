#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stainkit/nn_core.hpp"

namespace stainkit::nn {

// Versioned binary parameter file: magic "SKCKPT1\n", then little-endian
// u32 format version, u32 meta length + meta JSON (UTF-8), u32 tensor count,
// and per tensor u32 name length + name, u64 rows, u64 cols, rows*cols f64.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Matrix>> tensors;  // ordered

  const Matrix* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stainkit::nn
