#include <algorithm>

#include "kernels_common.hpp"

namespace stainkit::kernels {
namespace {

void rgb8_to_lab_scalar(const std::uint8_t* rgb, std::size_t n, double* l,
                        double* a, double* b) {
  for (std::size_t i = 0; i < n; ++i) {
    detail::rgb8_to_lab_px(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2], l + i,
                           a + i, b + i);
  }
}

std::uint64_t lab_to_rgb8_scalar(const double* l, const double* a,
                                 const double* b, std::size_t n,
                                 std::uint8_t* rgb) {
  std::uint64_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    clamped += detail::lab_to_rgb8_px(l[i], a[i], b[i], rgb + 3 * i);
  }
  return clamped;
}

void axpb_scalar(double* x, std::size_t n, double scale, double offset) {
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = x[i] * scale + offset;
  }
}

// Four interleaved Welford lanes merged in fixed order; the AVX2 variant
// runs the same lanes in vector registers.
void accumulate_scalar(const double* x, std::size_t n, MeanVar* acc) {
  MeanVar lanes[4];
  const std::size_t quads = n / 4;
  for (std::size_t i = 0; i < quads; ++i) {
    for (int j = 0; j < 4; ++j) {
      detail::welford_push(lanes[j], x[4 * i + j]);
    }
  }
  MeanVar batch = merge(merge(lanes[0], lanes[1]), merge(lanes[2], lanes[3]));
  for (std::size_t i = quads * 4; i < n; ++i) {
    detail::welford_push(batch, x[i]);
  }
  *acc = merge(*acc, batch);
}

void matmul_scalar(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += aip * brow[j];
      }
    }
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops{"scalar",          rgb8_to_lab_scalar,
                       lab_to_rgb8_scalar, axpb_scalar,
                       accumulate_scalar,  matmul_scalar};
  return ops;
}

}  // namespace stainkit::kernels
