#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "stainkit/feature_bag.hpp"
#include "stainkit/nn_core.hpp"
#include "stainkit/stain_transformer.hpp"
#include "stainkit/wsaug.hpp"

namespace stainkit::mil {

struct MilConfig {
  std::size_t dim = 32;       // feature dim C
  std::size_t attn_dim = 64;  // gated-attention hidden dim
};

// ABMIL: gated-attention pooling over instances + linear 2-class head.
struct MilParams {
  MilConfig cfg;
  nn::ParamTensor v_w, v_b;  // C -> D, tanh branch
  nn::ParamTensor u_w, u_b;  // C -> D, sigmoid gate branch
  nn::ParamTensor w_w, w_b;  // D -> 1, attention score
  nn::ParamTensor head_w, head_b;  // C -> 2

  static MilParams create(const MilConfig& cfg, rng::Stream& stream);
  std::vector<nn::ParamTensor*> tensors();
};

struct MilCtx {
  nn::Matrix x;        // bag features [N,C]
  nn::Matrix t;        // tanh branch [N,D]
  nn::Matrix s;        // sigmoid branch [N,D]
  nn::Matrix gated;    // t .* s [N,D]
  nn::Matrix weights;  // softmax attention [N,1]
  nn::Matrix pooled;   // [1,C]
};

struct MilOutput {
  nn::Matrix logits;              // [1,2]
  std::vector<double> attention;  // [N], sums to 1
};

MilOutput mil_forward(const MilParams& p, const nn::Matrix& features,
                      MilCtx* ctx = nullptr);
// Accumulates parameter gradients; instance-feature gradients are not needed
// by any caller (the upstream encoder and ST stay frozen) and are dropped.
void mil_backward(MilParams& p, const MilCtx& ctx, const nn::Matrix& dlogits);

struct LsaConfig {
  double p = 0.5;                        // per-step augmentation probability
  const wsaug::StylePrior* prior = nullptr;  // target-style distribution
  const st::StParams* st = nullptr;          // frozen stain transformer
};

// With probability cfg.p: ST(F, bag style, style sampled from the prior).
// Otherwise the features pass through unchanged. ST is never trained here.
nn::Matrix lsa_augment(const LsaConfig& cfg, const nn::FeatureBag& bag,
                       rng::Stream& step_rng);

struct MilTrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-4;  // cosine-decayed per epoch
  std::uint64_t seed = 0;
};

struct MilTrainResult {
  std::vector<double> epoch_loss;
};

MilTrainResult train_mil(MilParams& p, const std::vector<nn::FeatureBag>& bags,
                         const LsaConfig& lsa, const MilTrainConfig& cfg);

struct EvalReport {
  std::optional<double> auc;  // absent when the split has a single class
  double acc = 0;
  int n_pos = 0;
  int n_neg = 0;
};

// Positive-class probability, threshold 0.5 for ACC. No augmentation runs
// at evaluation time.
EvalReport evaluate(const MilParams& p,
                    const std::vector<nn::FeatureBag>& bags);

// Mann-Whitney AUC with average ranks; ties contribute 1/2. Computed as
// (wins + ties/2) / (n_pos * n_neg) in exact half-integer arithmetic so it
// matches the O(n^2) pair-counting definition bitwise.
double auc_mann_whitney(const std::vector<double>& scores,
                        const std::vector<int>& labels);

void save_mil(const MilParams& p, const std::filesystem::path& path);
MilParams load_mil(const std::filesystem::path& path);

}  // namespace stainkit::mil
