#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace stainkit::kernels {

// Streaming mean/variance state (Welford). Mergeable via merge().
struct MeanVar {
  std::uint64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;  // sum of squared deviations from the running mean
};

// Chan pairwise combine; exact identity element is a default MeanVar.
MeanVar merge(const MeanVar& a, const MeanVar& b);

// One table of inner-loop kernels. Every variant must produce bit-identical
// results to scalar_ops(): same operation order, no fp contraction, shared
// transcendental calls. Equivalence is enforced by tests/test_kernels.cpp.
struct Ops {
  const char* name;

  // Interleaved 8-bit sRGB -> planar CIE L*a*b* (D65).
  void (*rgb8_to_lab)(const std::uint8_t* rgb, std::size_t n, double* l,
                      double* a, double* b);

  // Planar LAB -> interleaved 8-bit sRGB. Out-of-gamut channels are clamped
  // to [0,255] before half-away-from-zero rounding; returns the number of
  // channel values clamped by more than kClampSlop.
  std::uint64_t (*lab_to_rgb8)(const double* l, const double* a,
                               const double* b, std::size_t n,
                               std::uint8_t* rgb);

  // x[i] = x[i] * scale + offset
  void (*axpb)(double* x, std::size_t n, double scale, double offset);

  // Folds n samples into acc using four interleaved Welford lanes merged in
  // fixed order, so scalar and SIMD variants agree bitwise.
  void (*accumulate)(const double* x, std::size_t n, MeanVar* acc);

  // c[m,n] = a[m,k] @ b[k,n], row-major, c overwritten.
  void (*matmul)(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n);
};

// Gamut excursions below this magnitude (in 8-bit counts) are rounding
// noise, not clamps. The forward/inverse matrices are 7-digit constants, so
// an identity round trip can overshoot the gamut by up to ~3e-4 counts near
// the endpoints; genuine clamps start at half a count.
inline constexpr double kClampSlop = 1e-3;

const Ops& scalar_ops();
const Ops* avx2_ops();  // nullptr when unsupported by CPU or build
const Ops& active();

// "auto" | "scalar" | "avx2". Returns false if unknown or unsupported.
bool select(std::string_view name);

}  // namespace stainkit::kernels
