#pragma once

// Shared colorspace constants and per-pixel reference math. Both kernel
// variants include this header so a pixel takes the exact same rounding
// path through either one.

#include <array>
#include <cmath>
#include <cstdint>

#include "stainkit/kernels.hpp"

namespace stainkit::kernels::detail {

// sRGB -> XYZ, D65 reference white (Lindbloom coefficients).
inline constexpr double kM00 = 0.4124564, kM01 = 0.3575761, kM02 = 0.1804375;
inline constexpr double kM10 = 0.2126729, kM11 = 0.7151522, kM12 = 0.0721750;
inline constexpr double kM20 = 0.0193339, kM21 = 0.1191920, kM22 = 0.9503041;

inline constexpr double kInv00 = 3.2404542, kInv01 = -1.5371385, kInv02 = -0.4985314;
inline constexpr double kInv10 = -0.9692660, kInv11 = 1.8760108, kInv12 = 0.0415560;
inline constexpr double kInv20 = 0.0556434, kInv21 = -0.2040259, kInv22 = 1.0572252;

inline constexpr double kWhiteX = 0.95047, kWhiteY = 1.0, kWhiteZ = 1.08883;

inline constexpr double kLabEps = 216.0 / 24389.0;   // (6/29)^3
inline constexpr double kLabKappa = 24389.0 / 27.0;  // (29/3)^3

// 8-bit sRGB -> linear-light lookup, built once.
inline const std::array<double, 256>& srgb_linear_lut() {
  static const std::array<double, 256> lut = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double c = i / 255.0;
      t[i] = c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    }
    return t;
  }();
  return lut;
}

inline double lab_f(double t) {
  return t > kLabEps ? std::cbrt(t) : (kLabKappa * t + 16.0) / 116.0;
}

inline double lab_f_inv(double f) {
  const double f3 = f * f * f;
  return f3 > kLabEps ? f3 : (116.0 * f - 16.0) / kLabKappa;
}

// Linear-light channel -> 8-bit sRGB value before clamping/rounding.
inline double compand(double c) {
  const double s =
      c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
  return s * 255.0;
}

inline void rgb8_to_lab_px(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8,
                           double* l, double* a, double* b) {
  const auto& lut = srgb_linear_lut();
  const double r = lut[r8], g = lut[g8], bl = lut[b8];
  const double x = (r * kM00 + g * kM01) + bl * kM02;
  const double y = (r * kM10 + g * kM11) + bl * kM12;
  const double z = (r * kM20 + g * kM21) + bl * kM22;
  const double fx = lab_f(x / kWhiteX);
  const double fy = lab_f(y / kWhiteY);
  const double fz = lab_f(z / kWhiteZ);
  *l = 116.0 * fy - 16.0;
  *a = 500.0 * (fx - fy);
  *b = 200.0 * (fy - fz);
}

// Companding + clamp + half-away-from-zero quantization of one pixel's
// linear RGB. Returns the number of channels clamped by more than kClampSlop.
inline int finish_rgb8_px(double rl, double gl, double bl, std::uint8_t* out) {
  int clamped = 0;
  const double chans[3] = {compand(rl), compand(gl), compand(bl)};
  for (int i = 0; i < 3; ++i) {
    double c = chans[i];
    if (c < 0.0) {
      if (c < -kClampSlop) ++clamped;
      c = 0.0;
    } else if (c > 255.0) {
      if (c > 255.0 + kClampSlop) ++clamped;
      c = 255.0;
    }
    out[i] = static_cast<std::uint8_t>(std::lround(c));
  }
  return clamped;
}

// Returns the number of channels clamped by more than kClampSlop (0..3).
inline int lab_to_rgb8_px(double l, double a, double b, std::uint8_t* out) {
  const double fy = (l + 16.0) / 116.0;
  const double fx = fy + a / 500.0;
  const double fz = fy - b / 200.0;
  const double x = lab_f_inv(fx) * kWhiteX;
  const double y = (l > 8.0 ? fy * fy * fy : l / kLabKappa) * kWhiteY;
  const double z = lab_f_inv(fz) * kWhiteZ;
  const double rl = (x * kInv00 + y * kInv01) + z * kInv02;
  const double gl = (x * kInv10 + y * kInv11) + z * kInv12;
  const double bl = (x * kInv20 + y * kInv21) + z * kInv22;
  return finish_rgb8_px(rl, gl, bl, out);
}

// Single-sample Welford update.
inline void welford_push(MeanVar& acc, double x) {
  acc.count += 1;
  const double delta = x - acc.mean;
  acc.mean += delta / static_cast<double>(acc.count);
  acc.m2 += delta * (x - acc.mean);
}

}  // namespace stainkit::kernels::detail
