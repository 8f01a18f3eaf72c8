#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stainkit/rng.hpp"
#include "stainkit/slide_io.hpp"
#include "stainkit/stain_stats.hpp"

namespace stainkit::wsaug {

// Gaussian over one style component.
struct ComponentPrior {
  double mean = 0;
  double stddev = 0;
};

// Independent Gaussians over [a_l,a_a,a_b,d_l,d_a,d_b], fitted on a cohort
// of slide styles with population standard deviation.
struct StylePrior {
  std::array<ComponentPrior, 6> components{};

  static StylePrior fit(const std::vector<stats::StyleDescriptor>& styles);
  stats::StyleDescriptor sample(rng::Stream& stream) const;
  // Same means, component spreads scaled by `factor` — domain randomization
  // beyond the styles the cohort happens to contain.
  StylePrior widened(double factor) const;
};

nlohmann::json to_json(const StylePrior& p);
StylePrior prior_from_json(const nlohmann::json& j);
StylePrior load_prior(const std::filesystem::path& path);
void save_prior(const StylePrior& p, const std::filesystem::path& path);

struct AugmentResult {
  slide::SlideManifest manifest;
  stats::StyleDescriptor source_style;
  stats::StyleDescriptor target_style;
  std::uint64_t clamped_values = 0;
  std::uint64_t total_values = 0;
  double clamp_fraction = 0;
};

// Re-renders every tile of the slide from source_style to target_style with
// the per-channel affine transform, writing out_dir/<new_id>/.
AugmentResult augment_slide(const slide::SlideManifest& src,
                            const stats::StyleDescriptor& source_style,
                            const stats::StyleDescriptor& target_style,
                            const std::filesystem::path& out_dir,
                            const std::string& new_id);

// In-memory variant used by tests and the benchmark.
slide::Tile augment_tile(const slide::Tile& in,
                         const stats::StyleDescriptor& source_style,
                         const stats::StyleDescriptor& target_style,
                         std::uint64_t* clamped_values = nullptr);

struct DatasetAugmentOptions {
  int copies = 3;
  std::uint64_t seed = 0;
};

// For every input slide, computes its style, then writes `copies` augmented
// versions toward prior samples (ids "<slide_id>-aug<k>"). Each (slide, copy)
// pair draws from its own seed-derived stream, so output is independent of
// slide order.
std::vector<AugmentResult> augment_dataset(
    const std::vector<slide::SlideManifest>& slides, const StylePrior& prior,
    const std::filesystem::path& out_dir, const DatasetAugmentOptions& opts);

}  // namespace stainkit::wsaug
