#include "stainkit/colorspace.hpp"

#include "kernels/kernels_common.hpp"
#include "stainkit/kernels.hpp"

namespace stainkit::color {

LabPixel rgb_to_lab(RgbPixel p) {
  LabPixel out;
  kernels::detail::rgb8_to_lab_px(p.r, p.g, p.b, &out.l, &out.a, &out.b);
  return out;
}

RgbPixel lab_to_rgb(LabPixel p) {
  std::uint8_t out[3];
  kernels::detail::lab_to_rgb8_px(p.l, p.a, p.b, out);
  return RgbPixel{out[0], out[1], out[2]};
}

ChannelAffine channel_affine(double src_mean, double src_std, double dst_mean,
                             double dst_std) {
  const double scale = src_std < kStdEpsilon ? 1.0 : dst_std / src_std;
  return ChannelAffine{scale, dst_mean - scale * src_mean};
}

double apply_channel_transform(double x, double src_mean, double src_std,
                               double dst_mean, double dst_std) {
  const ChannelAffine t = channel_affine(src_mean, src_std, dst_mean, dst_std);
  return x * t.scale + t.offset;
}

void rgb_to_lab(const std::uint8_t* rgb, std::size_t n, double* l, double* a,
                double* b) {
  kernels::active().rgb8_to_lab(rgb, n, l, a, b);
}

std::uint64_t lab_to_rgb(const double* l, const double* a, const double* b,
                         std::size_t n, std::uint8_t* rgb) {
  return kernels::active().lab_to_rgb8(l, a, b, n, rgb);
}

}  // namespace stainkit::color
