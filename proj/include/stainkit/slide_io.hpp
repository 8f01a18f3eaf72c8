#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stainkit/stain_stats.hpp"

namespace stainkit::slide {

// Decoded RGB8 tile, row-major, 3 bytes per pixel.
struct Tile {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * height;
  }
};

struct TileEntry {
  std::string path;  // relative to the manifest's directory
  int grid_x = 0;
  int grid_y = 0;
};

// Lineage of an augmented slide; absent on originals.
struct Provenance {
  std::string source_slide_id;
  stats::StyleDescriptor source_style;
  stats::StyleDescriptor target_style;
  double clamp_fraction = 0;
};

struct SlideManifest {
  std::string slide_id;
  std::optional<int> label;
  int tile_size = 0;
  std::vector<TileEntry> tiles;
  std::optional<Provenance> provenance;
  // Directory the manifest was loaded from (not serialized).
  std::filesystem::path base_dir;

  std::filesystem::path tile_path(std::size_t i) const {
    return base_dir / tiles[i].path;
  }
};

nlohmann::json to_json(const SlideManifest& m);

// Parses and validates; tiles are sorted by (grid_y, grid_x).
SlideManifest manifest_from_json(const nlohmann::json& j,
                                 const std::filesystem::path& base_dir);

// Loads <dir>/manifest.json (or a direct path to a .json file) and checks
// every referenced tile file exists.
SlideManifest load_manifest(const std::filesystem::path& path);

void save_manifest(const SlideManifest& m, const std::filesystem::path& dir);

Tile read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tile& tile);

// Reads tile i of the manifest and checks its dimensions match tile_size.
Tile load_tile(const SlideManifest& m, std::size_t i);

// Produces the augmented tile for index i; must preserve dimensions.
using TileGenerator = std::function<Tile(std::size_t, const Tile&)>;

// Writes out_dir/<new_id>/{manifest.json, tiles/*.png} with exactly one
// output tile per input tile and provenance recorded on the new manifest.
SlideManifest write_augmented_slide(const SlideManifest& src,
                                    const TileGenerator& gen,
                                    const stats::StyleDescriptor& source_style,
                                    const stats::StyleDescriptor& target_style,
                                    double clamp_fraction,
                                    const std::filesystem::path& out_dir,
                                    const std::string& new_id);

}  // namespace stainkit::slide
