#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "json.hpp"
#include "stainkit/kernels.hpp"

namespace stainkit::slide {
struct SlideManifest;
struct Tile;
}  // namespace stainkit::slide

namespace stainkit::stats {

// Streaming per-channel mean/variance state; mergeable across workers.
struct ChannelAccumulator {
  kernels::MeanVar state;

  void add(double x);
  void add(const double* x, std::size_t n);
  std::uint64_t count() const { return state.count; }
  double mean() const { return state.mean; }
  // Population standard deviation (1/N).
  double stddev() const;
};

ChannelAccumulator merge(const ChannelAccumulator& a,
                         const ChannelAccumulator& b);

// Per-channel LAB mean/std of one slide: s = [a_l,a_a,a_b,d_l,d_a,d_b].
struct StyleDescriptor {
  double a_l = 0, a_a = 0, a_b = 0;
  double d_l = 0, d_a = 0, d_b = 0;

  std::array<double, 6> as_array() const { return {a_l, a_a, a_b, d_l, d_a, d_b}; }
  static StyleDescriptor from_array(const std::array<double, 6>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  bool operator==(const StyleDescriptor&) const = default;
};

nlohmann::json to_json(const StyleDescriptor& s);
StyleDescriptor style_from_json(const nlohmann::json& j);

// L/a/b accumulators for one slide.
struct SlideStyleAccumulator {
  ChannelAccumulator l, a, b;

  // Converts every pixel to LAB and folds it in.
  void add_tile(const slide::Tile& tile);
  void add_pixels(const std::uint8_t* rgb, std::size_t n_pixels);
};

SlideStyleAccumulator merge(const SlideStyleAccumulator& x,
                            const SlideStyleAccumulator& y);

// Throws ValidationError when the pixel count is zero.
StyleDescriptor finalize_style(const SlideStyleAccumulator& acc);

// Streams every tile of the manifest; O(1) memory in pixel count. With
// threads > 1, workers own strided tile subsets and are merged in worker
// order, so the result is deterministic for a given thread count.
StyleDescriptor compute_slide_style(const slide::SlideManifest& m,
                                    int threads = 1);

}  // namespace stainkit::stats
