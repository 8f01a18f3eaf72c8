#include "stainkit/stain_stats.hpp"

#include <cmath>
#include <thread>
#include <vector>

#include "kernels/kernels_common.hpp"
#include "stainkit/colorspace.hpp"
#include "stainkit/errors.hpp"
#include "stainkit/kernels.hpp"
#include "stainkit/slide_io.hpp"

namespace stainkit::stats {

void ChannelAccumulator::add(double x) {
  kernels::detail::welford_push(state, x);
}

void ChannelAccumulator::add(const double* x, std::size_t n) {
  kernels::active().accumulate(x, n, &state);
}

double ChannelAccumulator::stddev() const {
  if (state.count == 0) return 0;
  return std::sqrt(state.m2 / static_cast<double>(state.count));
}

ChannelAccumulator merge(const ChannelAccumulator& a,
                         const ChannelAccumulator& b) {
  return {kernels::merge(a.state, b.state)};
}

nlohmann::json to_json(const StyleDescriptor& s) {
  return {{"a_l", s.a_l}, {"a_a", s.a_a}, {"a_b", s.a_b},
          {"d_l", s.d_l}, {"d_a", s.d_a}, {"d_b", s.d_b}};
}

StyleDescriptor style_from_json(const nlohmann::json& j) {
  StyleDescriptor s;
  try {
    s.a_l = j.at("a_l").get<double>();
    s.a_a = j.at("a_a").get<double>();
    s.a_b = j.at("a_b").get<double>();
    s.d_l = j.at("d_l").get<double>();
    s.d_a = j.at("d_a").get<double>();
    s.d_b = j.at("d_b").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("style descriptor: ") + e.what());
  }
  if (s.d_l < 0 || s.d_a < 0 || s.d_b < 0)
    throw ValidationError("style descriptor: negative standard deviation");
  return s;
}

void SlideStyleAccumulator::add_pixels(const std::uint8_t* rgb,
                                       std::size_t n_pixels) {
  constexpr std::size_t kChunk = 4096;
  std::vector<double> lbuf(kChunk), abuf(kChunk), bbuf(kChunk);
  for (std::size_t off = 0; off < n_pixels; off += kChunk) {
    const std::size_t n = std::min(kChunk, n_pixels - off);
    color::rgb_to_lab(rgb + 3 * off, n, lbuf.data(), abuf.data(), bbuf.data());
    l.add(lbuf.data(), n);
    a.add(abuf.data(), n);
    b.add(bbuf.data(), n);
  }
}

void SlideStyleAccumulator::add_tile(const slide::Tile& tile) {
  add_pixels(tile.rgb.data(), tile.pixel_count());
}

SlideStyleAccumulator merge(const SlideStyleAccumulator& x,
                            const SlideStyleAccumulator& y) {
  return {merge(x.l, y.l), merge(x.a, y.a), merge(x.b, y.b)};
}

StyleDescriptor finalize_style(const SlideStyleAccumulator& acc) {
  if (acc.l.count() == 0)
    throw ValidationError("cannot compute style statistics of zero pixels");
  return {acc.l.mean(),   acc.a.mean(),   acc.b.mean(),
          acc.l.stddev(), acc.a.stddev(), acc.b.stddev()};
}

StyleDescriptor compute_slide_style(const slide::SlideManifest& m,
                                    int threads) {
  if (threads < 1) throw ValidationError("threads must be >= 1");
  const std::size_t n_tiles = m.tiles.size();
  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(threads),
                            n_tiles == 0 ? 1 : n_tiles);
  std::vector<SlideStyleAccumulator> parts(n_workers);
  std::vector<std::string> errors(n_workers);

  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n_tiles; i += n_workers)
        parts[w].add_tile(slide::load_tile(m, i));
    } catch (const std::exception& e) {
      errors[w] = e.what();
    }
  };

  if (n_workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& err : errors)
    if (!err.empty()) throw IoError(err);

  SlideStyleAccumulator total = parts[0];
  for (std::size_t w = 1; w < n_workers; ++w) total = merge(total, parts[w]);
  return finalize_style(total);
}

}  // namespace stainkit::stats
