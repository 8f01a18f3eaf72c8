#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "stainkit/feature_bag.hpp"
#include "stainkit/nn_core.hpp"
#include "stainkit/stain_stats.hpp"
#include "stainkit/wsaug.hpp"

namespace stainkit::st {

struct StConfig {
  std::size_t dim = 32;       // feature dim C (also the model dim)
  std::size_t n_layers = 2;   // transformer blocks L
  std::size_t n_experts = 4;  // MoE experts n
  // Features are divided by this on the way in and multiplied back on the
  // way out. The layernorms make the blocks scale-blind, so this sets the
  // exchange rate between weight movement and raw-unit output effect: at a
  // fixed small learning rate, a larger scale lets the residual blocks
  // produce full-size feature corrections with small weights. A power of
  // two keeps the round trip exact.
  double feature_scale = 64.0;
};

// Z-scores raw style 6-vectors before embedding: LAB means (~0-100) and
// stds (~0-30) are badly scaled for a linear layer otherwise.
struct StyleNormalizer {
  std::array<double, 6> mean{0, 0, 0, 0, 0, 0};
  std::array<double, 6> stddev{1, 1, 1, 1, 1, 1};

  static StyleNormalizer from_prior(const wsaug::StylePrior& prior);
  // Components with stddev below 1e-6 are only mean-shifted.
  std::array<double, 6> apply(const stats::StyleDescriptor& s) const;
};

struct ExpertParams {
  nn::ParamTensor w1, b1;  // C -> 2C
  nn::ParamTensor w2, b2;  // 2C -> C
};

struct MoeParams {
  nn::ParamTensor router_w, router_b;  // C -> n, applied to the stain embedding
  std::vector<ExpertParams> experts;
};

struct BlockParams {
  nn::ParamTensor ln1_g, ln1_b;
  nn::AttentionParams attn;
  nn::ParamTensor ln2_g, ln2_b;
  MoeParams moe;
};

struct StParams {
  StConfig cfg;
  StyleNormalizer norm;
  nn::ParamTensor embed_w, embed_b;  // 12 -> C stain embedder
  std::vector<BlockParams> blocks;
  nn::ParamTensor head_w, head_b;  // C -> C output head, identity-initialized

  static StParams create(const StConfig& cfg, const StyleNormalizer& norm,
                         rng::Stream& stream);
  std::vector<nn::ParamTensor*> tensors();
};

struct MoeCtx {
  nn::Matrix x;                   // block input to the experts
  nn::Matrix router_weights;      // [1,n] simplex
  std::vector<nn::Matrix> pre1;   // per expert: x@w1+b1
  std::vector<nn::Matrix> hid;    // per expert: gelu(pre1)
  std::vector<nn::Matrix> out;    // per expert: hid@w2+b2
  nn::Matrix mix;                 // sum_i w_i * out_i (pre-GeLU)
};

struct BlockCtx {
  nn::Matrix x_in;
  nn::LayerNormCtx ln1;
  nn::AttentionCtx attn;
  nn::Matrix x_mid;  // after attention residual
  nn::LayerNormCtx ln2;
  MoeCtx moe;
};

struct StCtx {
  nn::Matrix z;      // [1,12] normalized style pair
  nn::Matrix embed;  // [1,C]
  std::vector<BlockCtx> blocks;
  nn::Matrix x_out;  // input to the output head
};

// [1,C] embedding of the normalized (source, target) style pair.
nn::Matrix stain_embed(const StParams& p, const stats::StyleDescriptor& s_src,
                       const stats::StyleDescriptor& s_dst);

// Routing weights for an embedding: softmax(embed @ router_w + router_b).
nn::Matrix routing_weights(const MoeParams& moe, const nn::Matrix& embed);

// out = GeLU(sum_i w_i * E_i(x)); GeLU sits outside the weighted sum.
nn::Matrix moe_forward(const MoeParams& moe, const nn::Matrix& x,
                       const nn::Matrix& embed, MoeCtx* ctx);
// Returns dx; accumulates expert/router grads; adds the router path's
// embedding gradient into d_embed.
nn::Matrix moe_backward(MoeParams& moe, const MoeCtx& ctx,
                        const nn::Matrix& dout, const nn::Matrix& embed,
                        nn::Matrix& d_embed);

// Pre-norm blocks: x += Attn(LN(x)); x += MoE(LN(x), e); then the head.
nn::Matrix st_forward(const StParams& p, const nn::Matrix& features,
                      const stats::StyleDescriptor& s_src,
                      const stats::StyleDescriptor& s_dst,
                      StCtx* ctx = nullptr);
// Returns d(features).
nn::Matrix st_backward(StParams& p, const StCtx& ctx, const nn::Matrix& dout);

// All renditions of one source slide (original first), rows aligned by tile.
struct SlideGroup {
  std::vector<nn::FeatureBag> bags;
};

// Throws unless every bag in the group has identical [N,C].
void validate_group(const SlideGroup& g, std::size_t dim);

struct StTrainConfig {
  int epochs = 100;
  int batch_groups = 8;
  // Ordered (j,k) pairs drawn per group per step. Averaging several pairs
  // tames the style-sampling noise in each gradient step without touching
  // the schedule.
  int pairs_per_group = 4;
  double lr = 1e-4;
  double lr_decay = 0.98;  // multiplicative per epoch
  std::uint64_t seed = 0;
};

struct StTrainResult {
  std::vector<double> epoch_loss;
};

// Minimizes mean L1 of ST(F_j, s_j, s_k) against F_k over uniformly sampled
// ordered pairs (j,k) per group, j=k included so the identity is learned.
StTrainResult st_train(StParams& p, const std::vector<SlideGroup>& groups,
                       const StTrainConfig& cfg);

struct MaeReport {
  double mae_before = 0;
  double mae_after = 0;
  std::uint64_t n_pairs = 0;
};

// Over all ordered pairs j != k of every group: mae_before = mean
// L1(F_j, F_k); mae_after = mean L1(ST(F_j, s_j, s_k), F_k).
MaeReport st_evaluate_mae(const StParams& p,
                          const std::vector<SlideGroup>& groups);

void save_st(const StParams& p, const std::filesystem::path& path);
StParams load_st(const std::filesystem::path& path);

}  // namespace stainkit::st
