#include "stainkit/wsaug.hpp"

#include <algorithm>
#include <fstream>

#include "stainkit/colorspace.hpp"
#include "stainkit/errors.hpp"
#include "stainkit/kernels.hpp"

namespace stainkit::wsaug {

namespace {

constexpr int kPriorSchemaVersion = 1;
constexpr const char* kComponentNames[6] = {"a_l", "a_a", "a_b",
                                            "d_l", "d_a", "d_b"};

}  // namespace

StylePrior StylePrior::fit(const std::vector<stats::StyleDescriptor>& styles) {
  if (styles.size() < 2)
    throw ValidationError("style prior requires at least 2 slide styles, got " +
                          std::to_string(styles.size()));
  StylePrior prior;
  for (int c = 0; c < 6; ++c) {
    stats::ChannelAccumulator acc;
    for (const auto& s : styles) acc.add(s.as_array()[c]);
    prior.components[c] = {acc.mean(), acc.stddev()};
  }
  return prior;
}

StylePrior StylePrior::widened(double factor) const {
  if (!(factor > 0.0))
    throw ValidationError("style prior widen factor must be > 0");
  StylePrior out = *this;
  for (auto& c : out.components) c.stddev *= factor;
  return out;
}

stats::StyleDescriptor StylePrior::sample(rng::Stream& stream) const {
  std::array<double, 6> v{};
  for (int c = 0; c < 6; ++c)
    v[c] = stream.normal(components[c].mean, components[c].stddev);
  // Sampled target spreads must stay usable as divisors downstream.
  for (int c = 3; c < 6; ++c) v[c] = std::max(v[c], color::kStdEpsilon);
  return stats::StyleDescriptor::from_array(v);
}

nlohmann::json to_json(const StylePrior& p) {
  nlohmann::json comps;
  for (int c = 0; c < 6; ++c)
    comps[kComponentNames[c]] = {{"mean", p.components[c].mean},
                                 {"stddev", p.components[c].stddev}};
  return {{"schema_version", kPriorSchemaVersion}, {"components", comps}};
}

StylePrior prior_from_json(const nlohmann::json& j) {
  StylePrior p;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kPriorSchemaVersion)
      throw ValidationError("style prior: unsupported schema_version " +
                            std::to_string(version));
    const auto& comps = j.at("components");
    for (int c = 0; c < 6; ++c) {
      const auto& cj = comps.at(kComponentNames[c]);
      p.components[c].mean = cj.at("mean").get<double>();
      p.components[c].stddev = cj.at("stddev").get<double>();
      if (p.components[c].stddev < 0)
        throw ValidationError(std::string("style prior: negative stddev for ") +
                              kComponentNames[c]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("style prior: ") + e.what());
  }
  return p;
}

StylePrior load_prior(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return prior_from_json(j);
}

void save_prior(const StylePrior& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json(p).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

slide::Tile augment_tile(const slide::Tile& in,
                         const stats::StyleDescriptor& source_style,
                         const stats::StyleDescriptor& target_style,
                         std::uint64_t* clamped_values) {
  const std::size_t n = in.pixel_count();
  std::vector<double> l(n), a(n), b(n);
  const auto& ops = kernels::active();
  ops.rgb8_to_lab(in.rgb.data(), n, l.data(), a.data(), b.data());

  const auto src = source_style.as_array();
  const auto dst = target_style.as_array();
  double* chans[3] = {l.data(), a.data(), b.data()};
  for (int c = 0; c < 3; ++c) {
    const auto aff =
        color::channel_affine(src[c], src[c + 3], dst[c], dst[c + 3]);
    ops.axpb(chans[c], n, aff.scale, aff.offset);
  }

  slide::Tile out;
  out.width = in.width;
  out.height = in.height;
  out.rgb.resize(n * 3);
  const std::uint64_t clamped =
      ops.lab_to_rgb8(l.data(), a.data(), b.data(), n, out.rgb.data());
  if (clamped_values) *clamped_values += clamped;
  return out;
}

AugmentResult augment_slide(const slide::SlideManifest& src,
                            const stats::StyleDescriptor& source_style,
                            const stats::StyleDescriptor& target_style,
                            const std::filesystem::path& out_dir,
                            const std::string& new_id) {
  AugmentResult res;
  res.source_style = source_style;
  res.target_style = target_style;

  // First pass computes the clamp fraction so the manifest can record it.
  auto gen = [&](std::size_t, const slide::Tile& in) {
    slide::Tile out =
        augment_tile(in, source_style, target_style, &res.clamped_values);
    res.total_values += in.pixel_count() * 3;
    return out;
  };
  res.manifest = slide::write_augmented_slide(
      src, gen, source_style, target_style, /*clamp_fraction=*/0, out_dir,
      new_id);
  res.clamp_fraction =
      res.total_values == 0
          ? 0
          : static_cast<double>(res.clamped_values) / res.total_values;
  // Rewrite the manifest with the measured fraction.
  res.manifest.provenance->clamp_fraction = res.clamp_fraction;
  slide::save_manifest(res.manifest, res.manifest.base_dir);
  return res;
}

std::vector<AugmentResult> augment_dataset(
    const std::vector<slide::SlideManifest>& slides, const StylePrior& prior,
    const std::filesystem::path& out_dir, const DatasetAugmentOptions& opts) {
  if (opts.copies < 1) throw ValidationError("copies must be >= 1");
  std::vector<AugmentResult> results;
  results.reserve(slides.size() * opts.copies);
  for (const auto& m : slides) {
    const auto source_style = stats::compute_slide_style(m);
    for (int k = 0; k < opts.copies; ++k) {
      rng::Stream stream(rng::derive_seed(
          opts.seed, "wsaug/" + m.slide_id, static_cast<std::uint64_t>(k)));
      const auto target_style = prior.sample(stream);
      results.push_back(augment_slide(m, source_style, target_style, out_dir,
                                      m.slide_id + "-aug" +
                                          std::to_string(k + 1)));
    }
  }
  return results;
}

}  // namespace stainkit::wsaug
