#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stainkit/nn_core.hpp"
#include "stainkit/stain_stats.hpp"

namespace stainkit::nn {

// Patch features of one slide: [N, C] plus the slide's style and label.
struct FeatureBag {
  std::string slide_id;
  std::optional<int> label;
  stats::StyleDescriptor style;
  // Present on bags extracted from augmented slides; groups a bag with the
  // other renditions of the same physical slide.
  std::optional<std::string> source_slide_id;
  Matrix features;
};

// Binary .fbag: magic "SKFBAG1\n", u32 format version, u64 N, u64 C,
// N*C little-endian f64 row-major. Metadata lives in <path>.json.
void save_bag(const FeatureBag& bag, const std::filesystem::path& path);
FeatureBag load_bag(const std::filesystem::path& path);

}  // namespace stainkit::nn
