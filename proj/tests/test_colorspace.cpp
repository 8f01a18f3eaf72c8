#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdlib>
#include <vector>

#include "doctest.h"
#include "stainkit/colorspace.hpp"

using namespace stainkit;

namespace {

// Reference LAB coordinates computed with 40-digit arbitrary precision
// arithmetic (sRGB/D65, Lindbloom forward matrix), rounded to double.
struct OraclePoint {
  color::RgbPixel rgb;
  double l, a, b;
};

const OraclePoint kOracle[] = {
    {{255, 0, 0}, 53.240794141307205, 80.092459596411111, 67.203196515852994},
    {{0, 255, 0}, 87.734722352797918, -86.182716420534636, 83.179320502697832},
    {{0, 0, 255}, 32.297010932850728, 79.187519845122234, -107.8601617541481},
    {{12, 34, 56}, 12.656248525261334, 0.12256520883418315, -16.833209795877295},
    {{200, 180, 160}, 74.483744483546223, 3.9243883930520052, 12.810933756879616},
};

}  // namespace

TEST_CASE("rgb_to_lab matches the high-precision reference") {
  for (const auto& pt : kOracle) {
    const auto lab = color::rgb_to_lab(pt.rgb);
    CHECK(lab.l == doctest::Approx(pt.l).epsilon(1e-12));
    CHECK(lab.a == doctest::Approx(pt.a).epsilon(1e-12));
    CHECK(lab.b == doctest::Approx(pt.b).epsilon(1e-12));
  }
}

TEST_CASE("white and black endpoints") {
  const auto white = color::rgb_to_lab({255, 255, 255});
  // The 7-digit forward matrix rows do not sum exactly to the white point,
  // so L*(white) misses 100 by a few 1e-6.
  CHECK(std::abs(white.l - 100.0) < 1e-4);
  CHECK(std::abs(white.a) < 1e-4);
  CHECK(std::abs(white.b) < 1e-4);

  const auto black = color::rgb_to_lab({0, 0, 0});
  CHECK(black.l == 0.0);
  CHECK(black.a == 0.0);
  CHECK(black.b == 0.0);

  CHECK(color::lab_to_rgb({100.0, 0.0, 0.0}) == color::RgbPixel{255, 255, 255});
  CHECK(color::lab_to_rgb({0.0, 0.0, 0.0}) == color::RgbPixel{0, 0, 0});
}

TEST_CASE("round trip over an rgb lattice stays within one count") {
  // Step-15 lattice (18 values per channel) including both endpoints.
  for (int r = 0; r <= 255; r += 15)
    for (int g = 0; g <= 255; g += 15)
      for (int b = 0; b <= 255; b += 15) {
        const color::RgbPixel in{static_cast<std::uint8_t>(r),
                                 static_cast<std::uint8_t>(g),
                                 static_cast<std::uint8_t>(b)};
        const auto back = color::lab_to_rgb(color::rgb_to_lab(in));
        CHECK(std::abs(int(back.r) - r) <= 1);
        CHECK(std::abs(int(back.g) - g) <= 1);
        CHECK(std::abs(int(back.b) - b) <= 1);
      }
}

TEST_CASE("batch conversions match the pixel api") {
  std::vector<std::uint8_t> rgb;
  for (int i = 0; i < 64; ++i) {
    rgb.push_back(static_cast<std::uint8_t>(4 * i));
    rgb.push_back(static_cast<std::uint8_t>(255 - 3 * i));
    rgb.push_back(static_cast<std::uint8_t>((7 * i) % 256));
  }
  const std::size_t n = rgb.size() / 3;
  std::vector<double> l(n), a(n), b(n);
  color::rgb_to_lab(rgb.data(), n, l.data(), a.data(), b.data());
  for (std::size_t i = 0; i < n; ++i) {
    const auto px = color::rgb_to_lab(
        {rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]});
    CHECK(l[i] == px.l);
    CHECK(a[i] == px.a);
    CHECK(b[i] == px.b);
  }

  std::vector<std::uint8_t> back(3 * n);
  const auto clamped = color::lab_to_rgb(l.data(), a.data(), b.data(), n, back.data());
  CHECK(clamped == 0);  // in-gamut round trip never clamps beyond slop
  for (std::size_t i = 0; i < n; ++i) {
    const auto px = color::lab_to_rgb({l[i], a[i], b[i]});
    CHECK(back[3 * i] == px.r);
    CHECK(back[3 * i + 1] == px.g);
    CHECK(back[3 * i + 2] == px.b);
  }
}

TEST_CASE("out-of-gamut values clamp and count") {
  // L=50 with a=150 is far outside srgb.
  const double l = 50.0, a = 150.0, b = 0.0;
  std::uint8_t px[3];
  const auto clamped = color::lab_to_rgb(&l, &a, &b, 1, px);
  CHECK(clamped > 0);
  const auto p = color::lab_to_rgb({l, a, b});
  CHECK(px[0] == p.r);
  CHECK(px[1] == p.g);
  CHECK(px[2] == p.b);
}

TEST_CASE("channel transform: identity style is exact") {
  for (double x : {-12.5, 0.0, 0.25, 50.0, 99.9}) {
    CHECK(color::apply_channel_transform(x, 40.0, 7.5, 40.0, 7.5) == x);
  }
  const auto aff = color::channel_affine(40.0, 7.5, 40.0, 7.5);
  CHECK(aff.scale == 1.0);
  CHECK(aff.offset == 0.0);
}

TEST_CASE("channel transform: maps source stats onto target stats") {
  const double got = color::apply_channel_transform(55.0, 50.0, 10.0, 70.0, 5.0);
  CHECK(got == doctest::Approx(72.5).epsilon(1e-14));  // (55-50)/10*5+70

  // Degenerate source std becomes a pure mean shift.
  const double flat = color::apply_channel_transform(50.0, 50.0, 0.0, 70.0, 5.0);
  CHECK(flat == doctest::Approx(70.0).epsilon(1e-14));
}
