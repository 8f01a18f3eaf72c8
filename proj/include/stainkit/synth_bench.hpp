#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stainkit/feature_bag.hpp"
#include "stainkit/mil_classifier.hpp"
#include "stainkit/nn_core.hpp"
#include "stainkit/slide_io.hpp"
#include "stainkit/stain_transformer.hpp"
#include "stainkit/wsaug.hpp"

namespace stainkit::synth {

// Synthetic tiled-slide benchmark. The label is carried by two kinds of
// evidence: a mild bump in blob count (texture evidence whose slide ordering
// survives style changes) and a strong bump in blob chroma (color evidence
// that a style shift scrambles). A short-schedule classifier leans on the
// stronger color evidence and pays for it out of distribution — which is
// exactly the failure mode style augmentation is meant to fix.
struct SynthConfig {
  int n_train = 200;
  int n_id_test = 50;
  int n_ood_test = 100;
  int tiles_per_slide = 16;
  int tile_size = 64;
  std::size_t feature_dim = 32;
  // Extra expected blobs per tile on positive slides (negatives get 3).
  double content_lambda = 0.8;
  // Extra blob redness on positive slides (negatives draw da from 2..8);
  // half of it is also added to the blob's blue depth.
  double content_chroma = 8.0;
  // Style spread multiplier for augmentation targets (WSAug copies, stain
  // transformer training, latent style augmentation). 1 = sample styles as
  // the fitted prior; >1 randomizes beyond the training cohort.
  double aug_widen = 1.5;
  // OOD style prior = ID prior with the L mean shifted and the L/a/b spread
  // components scaled; zero shift + unit scales make OOD == ID. The default
  // is a darker, flatter rendition (think a dimmer scanner with a muted
  // stain batch): it removes contrast the in-distribution styles rely on
  // instead of adding it, which is what makes the shift genuinely hard.
  double ood_shift_l = -10.0;
  double ood_scale_ab = 0.6;
  double ood_scale_dl = 0.75;
  std::uint64_t seed = 7;
};

struct SynthDataset {
  std::vector<slide::SlideManifest> train, id_test, ood_test;
};

// Slide styles are drawn from this prior for train and ID-test splits.
wsaug::StylePrior id_style_prior();
wsaug::StylePrior ood_style_prior(const SynthConfig& cfg);

// Renders slides under out_dir/{train,id_test,ood_test}/<slide_id>/.
SynthDataset gen_dataset(const SynthConfig& cfg,
                         const std::filesystem::path& out_dir,
                         int threads = 1);

// Stand-in for a frozen pretrained patch encoder: a fixed seeded nonlinear
// map from a 48-dim color/texture tile descriptor to feature_dim. Style
// enters through color histograms on purpose — features must be
// style-sensitive for style augmentation to matter. Descriptors are
// standardized by baked-in constants (mu0/s0, calibrated once on a fixed
// internal render, the way pretrained encoders ship input normalization)
// so that small-occupancy histogram bins are not drowned out by the
// larger-scale moment dims.
struct FrozenEncoder {
  std::size_t dim = 32;
  nn::Matrix mu0, s0;
  nn::Matrix w1, b1, w2, b2;

  static constexpr std::uint64_t kDefaultSeed = 0xFEEDFACECAFEBEEFULL;
  static FrozenEncoder create(std::size_t dim,
                              std::uint64_t seed = kDefaultSeed);

  static constexpr std::size_t kDescriptorDim = 48;
  std::vector<double> describe_tile(const slide::Tile& tile) const;
  std::vector<double> encode_tile(const slide::Tile& tile) const;

  // One feature row per tile in manifest order; bag style = pixel stats.
  nn::FeatureBag encode_slide(const slide::SlideManifest& m) const;
  // In-memory variant; style computed from the given tiles.
  nn::FeatureBag encode_tiles(const std::vector<slide::Tile>& tiles) const;
};

// WSAug x copies on every slide (written under aug_dir), then encodes
// original + copies into aligned groups (original first).
std::vector<st::SlideGroup> build_st_training_groups(
    const std::vector<slide::SlideManifest>& manifests,
    const wsaug::StylePrior& prior, int copies, const FrozenEncoder& enc,
    const std::filesystem::path& aug_dir, std::uint64_t seed,
    int threads = 1);

// Per-tile independent styles (source = the tile's own stats, target =
// a fresh prior sample per tile): the inconsistent-stain negative control.
std::vector<nn::FeatureBag> augment_patchwise_bags(
    const std::vector<slide::SlideManifest>& manifests,
    const wsaug::StylePrior& prior, int copies, const FrozenEncoder& enc,
    std::uint64_t seed);

struct BenchOptions {
  std::string protocol = "lsa";
  std::filesystem::path out_dir;
  int threads = 1;
  int copies = 3;       // WSAug renditions per slide
  double lsa_p = 0.5;   // augmentation probability for the `lsa` protocol
  std::size_t attn_dim = 64;
  std::size_t st_layers = 2;
  std::size_t st_experts = 4;
  st::StTrainConfig st_train;    // seed fields ignored; derived from cfg.seed
  mil::MilTrainConfig mil_train;
};

// Protocols: baseline | wsaug-offline | lsa | p-sweep | patch-inconsistent
// | suite (all arms off one shared dataset + stain transformer).
// Writes report.json and checkpoints under opts.out_dir; returns the report.
nlohmann::json run_benchmark(const SynthConfig& cfg, const BenchOptions& opts);

}  // namespace stainkit::synth
