#include "stainkit/slide_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <utility>

#include "stainkit/errors.hpp"

namespace stainkit::slide {

namespace {

constexpr int kManifestSchemaVersion = 1;

nlohmann::json provenance_to_json(const Provenance& p) {
  return {{"source_slide_id", p.source_slide_id},
          {"source_style", stats::to_json(p.source_style)},
          {"target_style", stats::to_json(p.target_style)},
          {"clamp_fraction", p.clamp_fraction}};
}

Provenance provenance_from_json(const nlohmann::json& j) {
  Provenance p;
  p.source_slide_id = j.at("source_slide_id").get<std::string>();
  p.source_style = stats::style_from_json(j.at("source_style"));
  p.target_style = stats::style_from_json(j.at("target_style"));
  p.clamp_fraction = j.at("clamp_fraction").get<double>();
  return p;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace

nlohmann::json to_json(const SlideManifest& m) {
  nlohmann::json tiles = nlohmann::json::array();
  for (const auto& t : m.tiles)
    tiles.push_back(
        {{"path", t.path}, {"grid_x", t.grid_x}, {"grid_y", t.grid_y}});
  nlohmann::json j = {{"schema_version", kManifestSchemaVersion},
                      {"slide_id", m.slide_id},
                      {"tile_size", m.tile_size},
                      {"tiles", std::move(tiles)}};
  if (m.label) j["label"] = *m.label;
  if (m.provenance) j["provenance"] = provenance_to_json(*m.provenance);
  return j;
}

SlideManifest manifest_from_json(const nlohmann::json& j,
                                 const std::filesystem::path& base_dir) {
  SlideManifest m;
  m.base_dir = base_dir;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kManifestSchemaVersion)
      throw ValidationError("manifest: unsupported schema_version " +
                            std::to_string(version));
    m.slide_id = j.at("slide_id").get<std::string>();
    if (m.slide_id.empty()) throw ValidationError("manifest: empty slide_id");
    if (j.contains("label")) {
      const int label = j.at("label").get<int>();
      if (label != 0 && label != 1)
        throw ValidationError("manifest: label must be 0 or 1, got " +
                              std::to_string(label));
      m.label = label;
    }
    m.tile_size = j.at("tile_size").get<int>();
    if (m.tile_size <= 0)
      throw ValidationError("manifest: tile_size must be positive");
    const auto& tiles = j.at("tiles");
    if (!tiles.is_array() || tiles.empty())
      throw ValidationError("manifest: tiles must be a non-empty array");
    for (const auto& tj : tiles) {
      TileEntry t;
      t.path = tj.at("path").get<std::string>();
      if (t.path.empty()) throw ValidationError("manifest: empty tile path");
      t.grid_x = tj.at("grid_x").get<int>();
      t.grid_y = tj.at("grid_y").get<int>();
      if (t.grid_x < 0 || t.grid_y < 0)
        throw ValidationError("manifest: negative grid coordinate in " +
                              t.path);
      m.tiles.push_back(std::move(t));
    }
    if (j.contains("provenance"))
      m.provenance = provenance_from_json(j.at("provenance"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }

  std::sort(m.tiles.begin(), m.tiles.end(),
            [](const TileEntry& a, const TileEntry& b) {
              return std::pair(a.grid_y, a.grid_x) <
                     std::pair(b.grid_y, b.grid_x);
            });
  std::set<std::pair<int, int>> coords;
  std::set<std::string> paths;
  for (const auto& t : m.tiles) {
    if (!coords.insert({t.grid_y, t.grid_x}).second)
      throw ValidationError("manifest: duplicate grid cell (" +
                            std::to_string(t.grid_x) + "," +
                            std::to_string(t.grid_y) + ")");
    if (!paths.insert(t.path).second)
      throw ValidationError("manifest: duplicate tile path " + t.path);
  }
  return m;
}

SlideManifest load_manifest(const std::filesystem::path& path) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(file)) file /= "manifest.json";
  SlideManifest m = manifest_from_json(read_json_file(file),
                                       file.parent_path());
  for (std::size_t i = 0; i < m.tiles.size(); ++i) {
    const auto tp = m.tile_path(i);
    if (!std::filesystem::exists(tp))
      throw ValidationError("manifest references missing tile file " +
                            tp.string());
  }
  return m;
}

void save_manifest(const SlideManifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json(m).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Tile load_tile(const SlideManifest& m, std::size_t i) {
  if (i >= m.tiles.size())
    throw ValidationError("tile index out of range");
  Tile t = read_png(m.tile_path(i));
  if (t.width != m.tile_size || t.height != m.tile_size)
    throw ValidationError("tile " + m.tiles[i].path + " is " +
                          std::to_string(t.width) + "x" +
                          std::to_string(t.height) + ", expected " +
                          std::to_string(m.tile_size) + "x" +
                          std::to_string(m.tile_size));
  return t;
}

SlideManifest write_augmented_slide(const SlideManifest& src,
                                    const TileGenerator& gen,
                                    const stats::StyleDescriptor& source_style,
                                    const stats::StyleDescriptor& target_style,
                                    double clamp_fraction,
                                    const std::filesystem::path& out_dir,
                                    const std::string& new_id) {
  if (new_id.empty())
    throw ValidationError("write_augmented_slide: empty slide id");
  const auto slide_dir = out_dir / new_id;
  std::filesystem::create_directories(slide_dir / "tiles");

  SlideManifest out;
  out.slide_id = new_id;
  out.label = src.label;
  out.tile_size = src.tile_size;
  out.base_dir = slide_dir;
  out.provenance = Provenance{src.slide_id, source_style, target_style,
                              clamp_fraction};

  for (std::size_t i = 0; i < src.tiles.size(); ++i) {
    const Tile in = load_tile(src, i);
    const Tile result = gen(i, in);
    if (result.width != in.width || result.height != in.height)
      throw ValidationError("augmented tile " + src.tiles[i].path +
                            " changed dimensions");
    TileEntry entry = src.tiles[i];
    entry.path = "tiles/" + std::to_string(entry.grid_x) + "_" +
                 std::to_string(entry.grid_y) + ".png";
    write_png(slide_dir / entry.path, result);
    out.tiles.push_back(std::move(entry));
  }
  if (out.tiles.size() != src.tiles.size())
    throw NumericError("augmented slide lost tiles");  // unreachable guard

  save_manifest(out, slide_dir);
  return out;
}

}  // namespace stainkit::slide
