#pragma once

#include <cstddef>
#include <cstdint>

namespace stainkit::color {

struct RgbPixel {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const RgbPixel&) const = default;
};

// CIE L*a*b* under sRGB primaries, D65 white point. l in [0,100] for any
// in-gamut sRGB input; a/b nominally in [-128,127].
struct LabPixel {
  double l = 0.0, a = 0.0, b = 0.0;
};

LabPixel rgb_to_lab(RgbPixel p);

// Inverse of rgb_to_lab. Out-of-gamut channels are clamped to [0,255] after
// conversion and before half-away-from-zero quantization.
RgbPixel lab_to_rgb(LabPixel p);

// Channels with a source std below this are treated as constant: the
// transform degrades to a pure mean shift instead of dividing by ~0.
inline constexpr double kStdEpsilon = 1e-6;

// Per-channel affine restain: (dst_std/src_std) * (x - src_mean) + dst_mean,
// evaluated as x*scale + offset so the identity style is exact.
double apply_channel_transform(double x, double src_mean, double src_std,
                               double dst_mean, double dst_std);

// scale/offset form used by the batch path.
struct ChannelAffine {
  double scale = 1.0;
  double offset = 0.0;
};
ChannelAffine channel_affine(double src_mean, double src_std, double dst_mean,
                             double dst_std);

// Batch conversions (kernel-dispatched). rgb is interleaved, lab is planar.
void rgb_to_lab(const std::uint8_t* rgb, std::size_t n, double* l, double* a,
                double* b);
// Returns the number of clamped channel values.
std::uint64_t lab_to_rgb(const double* l, const double* a, const double* b,
                         std::size_t n, std::uint8_t* rgb);

}  // namespace stainkit::color
