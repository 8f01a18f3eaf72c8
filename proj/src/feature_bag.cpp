#include "stainkit/feature_bag.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "stainkit/errors.hpp"

namespace stainkit::nn {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'F', 'B', 'A', 'G', '1', '\n'};
constexpr std::uint32_t kVersion = 1;
constexpr int kSidecarSchemaVersion = 1;

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

void save_bag(const FeatureBag& bag, const std::filesystem::path& path) {
  if (bag.features.rows == 0 || bag.features.cols == 0)
    throw ValidationError("feature bag must be non-empty");
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const std::uint64_t n = bag.features.rows, c = bag.features.cols;
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(&c), sizeof(c));
  out.write(reinterpret_cast<const char*>(bag.features.data.data()),
            static_cast<std::streamsize>(bag.features.data.size() *
                                         sizeof(double)));
  if (!out) throw IoError("failed writing " + path.string());

  nlohmann::json meta = {{"schema_version", kSidecarSchemaVersion},
                         {"slide_id", bag.slide_id},
                         {"style", stats::to_json(bag.style)},
                         {"n_instances", n},
                         {"dim", c}};
  if (bag.label) meta["label"] = *bag.label;
  if (bag.source_slide_id) meta["source_slide_id"] = *bag.source_slide_id;
  std::ofstream mout(sidecar_path(path));
  if (!mout)
    throw IoError("cannot open " + sidecar_path(path).string() +
                  " for writing");
  mout << meta.dump(2) << '\n';
  if (!mout) throw IoError("failed writing " + sidecar_path(path).string());
}

FeatureBag load_bag(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(path.string() + " is not a feature bag file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kVersion)
    throw IoError("feature bag: unsupported format version");
  std::uint64_t n = 0, c = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  in.read(reinterpret_cast<char*>(&c), sizeof(c));
  if (!in || n == 0 || c == 0 || n > (1u << 24) || c > (1u << 24))
    throw IoError("feature bag: implausible shape in " + path.string());

  FeatureBag bag;
  bag.features = Matrix(static_cast<std::size_t>(n),
                        static_cast<std::size_t>(c));
  in.read(reinterpret_cast<char*>(bag.features.data.data()),
          static_cast<std::streamsize>(bag.features.data.size() *
                                       sizeof(double)));
  if (!in) throw IoError("feature bag: truncated data in " + path.string());

  std::ifstream min(sidecar_path(path));
  if (!min)
    throw IoError("missing feature bag sidecar " + sidecar_path(path).string());
  nlohmann::json meta;
  try {
    min >> meta;
    if (meta.at("schema_version").get<int>() != kSidecarSchemaVersion)
      throw IoError("feature bag sidecar: unsupported schema_version");
    bag.slide_id = meta.at("slide_id").get<std::string>();
    bag.style = stats::style_from_json(meta.at("style"));
    if (meta.contains("label")) bag.label = meta.at("label").get<int>();
    if (meta.contains("source_slide_id"))
      bag.source_slide_id = meta.at("source_slide_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid feature bag sidecar " +
                  sidecar_path(path).string() + ": " + e.what());
  }
  return bag;
}

}  // namespace stainkit::nn
