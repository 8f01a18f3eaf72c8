// AVX2 kernel variants. Bit-identical to the scalar variants: IEEE
// mul/add/sub/div only (no fma), same operation order, transcendentals go
// through the same libm calls per lane.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>

#include "kernels_common.hpp"

namespace stainkit::kernels {
namespace {

using detail::srgb_linear_lut;

void rgb8_to_lab_avx2(const std::uint8_t* rgb, std::size_t n, double* l,
                      double* a, double* b) {
  const auto& lut = srgb_linear_lut();
  const __m256d m00 = _mm256_set1_pd(detail::kM00);
  const __m256d m01 = _mm256_set1_pd(detail::kM01);
  const __m256d m02 = _mm256_set1_pd(detail::kM02);
  const __m256d m10 = _mm256_set1_pd(detail::kM10);
  const __m256d m11 = _mm256_set1_pd(detail::kM11);
  const __m256d m12 = _mm256_set1_pd(detail::kM12);
  const __m256d m20 = _mm256_set1_pd(detail::kM20);
  const __m256d m21 = _mm256_set1_pd(detail::kM21);
  const __m256d m22 = _mm256_set1_pd(detail::kM22);
  const __m256d wx = _mm256_set1_pd(detail::kWhiteX);
  const __m256d wy = _mm256_set1_pd(detail::kWhiteY);
  const __m256d wz = _mm256_set1_pd(detail::kWhiteZ);

  const std::size_t quads = n / 4;
  for (std::size_t q = 0; q < quads; ++q) {
    const std::uint8_t* p = rgb + 12 * q;
    const __m256d r = _mm256_set_pd(lut[p[9]], lut[p[6]], lut[p[3]], lut[p[0]]);
    const __m256d g =
        _mm256_set_pd(lut[p[10]], lut[p[7]], lut[p[4]], lut[p[1]]);
    const __m256d bl =
        _mm256_set_pd(lut[p[11]], lut[p[8]], lut[p[5]], lut[p[2]]);

    const __m256d x = _mm256_add_pd(
        _mm256_add_pd(_mm256_mul_pd(r, m00), _mm256_mul_pd(g, m01)),
        _mm256_mul_pd(bl, m02));
    const __m256d y = _mm256_add_pd(
        _mm256_add_pd(_mm256_mul_pd(r, m10), _mm256_mul_pd(g, m11)),
        _mm256_mul_pd(bl, m12));
    const __m256d z = _mm256_add_pd(
        _mm256_add_pd(_mm256_mul_pd(r, m20), _mm256_mul_pd(g, m21)),
        _mm256_mul_pd(bl, m22));

    alignas(32) double tx[4], ty[4], tz[4], fx[4], fy[4], fz[4];
    _mm256_store_pd(tx, _mm256_div_pd(x, wx));
    _mm256_store_pd(ty, _mm256_div_pd(y, wy));
    _mm256_store_pd(tz, _mm256_div_pd(z, wz));
    for (int j = 0; j < 4; ++j) {
      fx[j] = detail::lab_f(tx[j]);
      fy[j] = detail::lab_f(ty[j]);
      fz[j] = detail::lab_f(tz[j]);
    }
    const __m256d vfx = _mm256_load_pd(fx);
    const __m256d vfy = _mm256_load_pd(fy);
    const __m256d vfz = _mm256_load_pd(fz);

    _mm256_storeu_pd(l + 4 * q,
                     _mm256_sub_pd(_mm256_mul_pd(_mm256_set1_pd(116.0), vfy),
                                   _mm256_set1_pd(16.0)));
    _mm256_storeu_pd(a + 4 * q, _mm256_mul_pd(_mm256_set1_pd(500.0),
                                              _mm256_sub_pd(vfx, vfy)));
    _mm256_storeu_pd(b + 4 * q, _mm256_mul_pd(_mm256_set1_pd(200.0),
                                              _mm256_sub_pd(vfy, vfz)));
  }
  for (std::size_t i = quads * 4; i < n; ++i) {
    detail::rgb8_to_lab_px(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2], l + i,
                           a + i, b + i);
  }
}

std::uint64_t lab_to_rgb8_avx2(const double* l, const double* a,
                               const double* b, std::size_t n,
                               std::uint8_t* rgb) {
  const __m256d i00 = _mm256_set1_pd(detail::kInv00);
  const __m256d i01 = _mm256_set1_pd(detail::kInv01);
  const __m256d i02 = _mm256_set1_pd(detail::kInv02);
  const __m256d i10 = _mm256_set1_pd(detail::kInv10);
  const __m256d i11 = _mm256_set1_pd(detail::kInv11);
  const __m256d i12 = _mm256_set1_pd(detail::kInv12);
  const __m256d i20 = _mm256_set1_pd(detail::kInv20);
  const __m256d i21 = _mm256_set1_pd(detail::kInv21);
  const __m256d i22 = _mm256_set1_pd(detail::kInv22);

  std::uint64_t clamped = 0;
  const std::size_t quads = n / 4;
  for (std::size_t q = 0; q < quads; ++q) {
    const __m256d vl = _mm256_loadu_pd(l + 4 * q);
    const __m256d va = _mm256_loadu_pd(a + 4 * q);
    const __m256d vb = _mm256_loadu_pd(b + 4 * q);

    const __m256d vfy = _mm256_div_pd(
        _mm256_add_pd(vl, _mm256_set1_pd(16.0)), _mm256_set1_pd(116.0));
    const __m256d vfx =
        _mm256_add_pd(vfy, _mm256_div_pd(va, _mm256_set1_pd(500.0)));
    const __m256d vfz =
        _mm256_sub_pd(vfy, _mm256_div_pd(vb, _mm256_set1_pd(200.0)));

    alignas(32) double fxl[4], fyl[4], fzl[4], ll[4], xr[4], yr[4], zr[4];
    _mm256_store_pd(fxl, vfx);
    _mm256_store_pd(fyl, vfy);
    _mm256_store_pd(fzl, vfz);
    _mm256_store_pd(ll, vl);
    for (int j = 0; j < 4; ++j) {
      xr[j] = detail::lab_f_inv(fxl[j]);
      yr[j] = ll[j] > 8.0 ? fyl[j] * fyl[j] * fyl[j] : ll[j] / detail::kLabKappa;
      zr[j] = detail::lab_f_inv(fzl[j]);
    }
    const __m256d x =
        _mm256_mul_pd(_mm256_load_pd(xr), _mm256_set1_pd(detail::kWhiteX));
    const __m256d y =
        _mm256_mul_pd(_mm256_load_pd(yr), _mm256_set1_pd(detail::kWhiteY));
    const __m256d z =
        _mm256_mul_pd(_mm256_load_pd(zr), _mm256_set1_pd(detail::kWhiteZ));

    alignas(32) double rl[4], gl[4], bl[4];
    _mm256_store_pd(
        rl, _mm256_add_pd(
                _mm256_add_pd(_mm256_mul_pd(x, i00), _mm256_mul_pd(y, i01)),
                _mm256_mul_pd(z, i02)));
    _mm256_store_pd(
        gl, _mm256_add_pd(
                _mm256_add_pd(_mm256_mul_pd(x, i10), _mm256_mul_pd(y, i11)),
                _mm256_mul_pd(z, i12)));
    _mm256_store_pd(
        bl, _mm256_add_pd(
                _mm256_add_pd(_mm256_mul_pd(x, i20), _mm256_mul_pd(y, i21)),
                _mm256_mul_pd(z, i22)));
    for (int j = 0; j < 4; ++j) {
      clamped += detail::finish_rgb8_px(rl[j], gl[j], bl[j],
                                        rgb + 3 * (4 * q + j));
    }
  }
  for (std::size_t i = quads * 4; i < n; ++i) {
    clamped += detail::lab_to_rgb8_px(l[i], a[i], b[i], rgb + 3 * i);
  }
  return clamped;
}

void axpb_avx2(double* x, std::size_t n, double scale, double offset) {
  const __m256d s = _mm256_set1_pd(scale);
  const __m256d o = _mm256_set1_pd(offset);
  const std::size_t quads = n / 4;
  for (std::size_t q = 0; q < quads; ++q) {
    const __m256d v = _mm256_loadu_pd(x + 4 * q);
    _mm256_storeu_pd(x + 4 * q, _mm256_add_pd(_mm256_mul_pd(v, s), o));
  }
  for (std::size_t i = quads * 4; i < n; ++i) {
    x[i] = x[i] * scale + offset;
  }
}

void accumulate_avx2(const double* x, std::size_t n, MeanVar* acc) {
  __m256d mean = _mm256_setzero_pd();
  __m256d m2 = _mm256_setzero_pd();
  const std::size_t quads = n / 4;
  for (std::size_t i = 0; i < quads; ++i) {
    const __m256d v = _mm256_loadu_pd(x + 4 * i);
    const __m256d cnt = _mm256_set1_pd(static_cast<double>(i + 1));
    const __m256d delta = _mm256_sub_pd(v, mean);
    mean = _mm256_add_pd(mean, _mm256_div_pd(delta, cnt));
    m2 = _mm256_add_pd(m2, _mm256_mul_pd(delta, _mm256_sub_pd(v, mean)));
  }
  alignas(32) double means[4], m2s[4];
  _mm256_store_pd(means, mean);
  _mm256_store_pd(m2s, m2);
  MeanVar lanes[4];
  for (int j = 0; j < 4; ++j) {
    lanes[j] = MeanVar{quads, means[j], m2s[j]};
  }
  MeanVar batch = merge(merge(lanes[0], lanes[1]), merge(lanes[2], lanes[3]));
  for (std::size_t i = quads * 4; i < n; ++i) {
    detail::welford_push(batch, x[i]);
  }
  *acc = merge(*acc, batch);
}

void matmul_avx2(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  const std::size_t quads = n / 4;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d aip = _mm256_set1_pd(arow[p]);
      const double* brow = b + p * n;
      for (std::size_t q = 0; q < quads; ++q) {
        const __m256d cv = _mm256_loadu_pd(crow + 4 * q);
        const __m256d bv = _mm256_loadu_pd(brow + 4 * q);
        _mm256_storeu_pd(crow + 4 * q,
                         _mm256_add_pd(cv, _mm256_mul_pd(aip, bv)));
      }
      for (std::size_t j = quads * 4; j < n; ++j) {
        crow[j] += arow[p] * brow[j];
      }
    }
  }
}

}  // namespace

const Ops& avx2_ops_table() {
  static const Ops ops{"avx2",          rgb8_to_lab_avx2, lab_to_rgb8_avx2,
                       axpb_avx2,       accumulate_avx2,  matmul_avx2};
  return ops;
}

}  // namespace stainkit::kernels

#endif  // x86_64
