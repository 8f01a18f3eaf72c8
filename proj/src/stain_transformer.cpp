#include "stainkit/stain_transformer.hpp"

#include <algorithm>
#include <cmath>

#include "stainkit/checkpoint.hpp"
#include "stainkit/errors.hpp"

namespace stainkit::st {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

nn::ParamTensor normal_param(const std::string& name, std::size_t rows,
                             std::size_t cols, rng::Stream& stream,
                             double gain = 1.0) {
  nn::ParamTensor t(name, rows, cols);
  nn::fill_normal(t.value, stream,
                  gain / std::sqrt(static_cast<double>(rows)));
  return t;
}

// Output-side projections (attention wo, expert w2) start near zero so each
// block contributes almost nothing before training: together with the
// identity head the whole untrained network is very nearly the identity
// map, and the optimizer spends its budget on signal instead of on
// unwinding initialization noise.
constexpr double kResidualOutGain = 0.02;

}  // namespace

StyleNormalizer StyleNormalizer::from_prior(const wsaug::StylePrior& prior) {
  StyleNormalizer n;
  for (int c = 0; c < 6; ++c) {
    n.mean[c] = prior.components[c].mean;
    n.stddev[c] = prior.components[c].stddev;
  }
  return n;
}

std::array<double, 6> StyleNormalizer::apply(
    const stats::StyleDescriptor& s) const {
  const auto raw = s.as_array();
  std::array<double, 6> z{};
  for (int c = 0; c < 6; ++c) {
    const double centered = raw[c] - mean[c];
    z[c] = stddev[c] < 1e-6 ? centered : centered / stddev[c];
  }
  return z;
}

StParams StParams::create(const StConfig& cfg, const StyleNormalizer& norm,
                          rng::Stream& stream) {
  require(cfg.dim >= 1 && cfg.n_layers >= 1 && cfg.n_experts >= 1,
          "stain transformer config: dim, n_layers, n_experts must be >= 1");
  require(cfg.feature_scale > 0.0,
          "stain transformer config: feature_scale must be positive");
  StParams p;
  p.cfg = cfg;
  p.norm = norm;
  const std::size_t c = cfg.dim;
  p.embed_w = normal_param("embed.w", 12, c, stream);
  p.embed_b = nn::ParamTensor("embed.b", 1, c);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string bp = "block" + std::to_string(l);
    BlockParams blk;
    blk.ln1_g = nn::ParamTensor(bp + ".ln1.g", 1, c);
    std::fill(blk.ln1_g.value.data.begin(), blk.ln1_g.value.data.end(), 1.0);
    blk.ln1_b = nn::ParamTensor(bp + ".ln1.b", 1, c);
    blk.attn = nn::AttentionParams::create(c, bp + ".attn");
    for (nn::ParamTensor* t : {&blk.attn.wq, &blk.attn.wk, &blk.attn.wv})
      nn::fill_normal(t->value, stream, 1.0 / std::sqrt(double(c)));
    nn::fill_normal(blk.attn.wo.value, stream,
                    kResidualOutGain / std::sqrt(double(c)));
    blk.ln2_g = nn::ParamTensor(bp + ".ln2.g", 1, c);
    std::fill(blk.ln2_g.value.data.begin(), blk.ln2_g.value.data.end(), 1.0);
    blk.ln2_b = nn::ParamTensor(bp + ".ln2.b", 1, c);
    // The router starts live (logits O(1)): with near-zero expert outputs
    // AND uniform routing the style path sits in a flat bilinear saddle the
    // fixed small learning rate escapes too slowly; style-sensitive mixing
    // from step one gives each expert a distinct gradient immediately.
    blk.moe.router_w = normal_param(bp + ".moe.router.w", c, cfg.n_experts,
                                    stream);
    blk.moe.router_b = nn::ParamTensor(bp + ".moe.router.b", 1,
                                       cfg.n_experts);
    for (std::size_t i = 0; i < cfg.n_experts; ++i) {
      const std::string ep = bp + ".moe.expert" + std::to_string(i);
      ExpertParams e;
      e.w1 = normal_param(ep + ".w1", c, 2 * c, stream);
      e.b1 = nn::ParamTensor(ep + ".b1", 1, 2 * c);
      e.w2 = normal_param(ep + ".w2", 2 * c, c, stream, kResidualOutGain);
      e.b2 = nn::ParamTensor(ep + ".b2", 1, c);
      blk.moe.experts.push_back(std::move(e));
    }
    p.blocks.push_back(std::move(blk));
  }
  // Identity head: the untrained network starts as (nearly) a no-op.
  p.head_w = nn::ParamTensor("head.w", c, c);
  for (std::size_t i = 0; i < c; ++i) p.head_w.value.at(i, i) = 1.0;
  p.head_b = nn::ParamTensor("head.b", 1, c);
  return p;
}

std::vector<nn::ParamTensor*> StParams::tensors() {
  std::vector<nn::ParamTensor*> out = {&embed_w, &embed_b};
  for (auto& blk : blocks) {
    out.push_back(&blk.ln1_g);
    out.push_back(&blk.ln1_b);
    for (nn::ParamTensor* t : blk.attn.tensors()) out.push_back(t);
    out.push_back(&blk.ln2_g);
    out.push_back(&blk.ln2_b);
    out.push_back(&blk.moe.router_w);
    out.push_back(&blk.moe.router_b);
    for (auto& e : blk.moe.experts) {
      out.push_back(&e.w1);
      out.push_back(&e.b1);
      out.push_back(&e.w2);
      out.push_back(&e.b2);
    }
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

nn::Matrix stain_embed(const StParams& p, const stats::StyleDescriptor& s_src,
                       const stats::StyleDescriptor& s_dst) {
  const auto zs = p.norm.apply(s_src);
  const auto zd = p.norm.apply(s_dst);
  nn::Matrix z(1, 12);
  for (int c = 0; c < 6; ++c) {
    z.at(0, c) = zs[c];
    z.at(0, 6 + c) = zd[c];
  }
  return nn::linear_forward(z, p.embed_w, p.embed_b);
}

nn::Matrix routing_weights(const MoeParams& moe, const nn::Matrix& embed) {
  return nn::softmax_rows(
      nn::linear_forward(embed, moe.router_w, moe.router_b));
}

nn::Matrix moe_forward(const MoeParams& moe, const nn::Matrix& x,
                       const nn::Matrix& embed, MoeCtx* ctx) {
  const std::size_t n_experts = moe.experts.size();
  nn::Matrix w = routing_weights(moe, embed);
  nn::Matrix mix(x.rows, x.cols);
  MoeCtx local;
  MoeCtx& c = ctx ? *ctx : local;
  c.pre1.clear();
  c.hid.clear();
  c.out.clear();
  for (std::size_t i = 0; i < n_experts; ++i) {
    const auto& e = moe.experts[i];
    nn::Matrix pre1 = nn::linear_forward(x, e.w1, e.b1);
    nn::Matrix hid = nn::gelu(pre1);
    nn::Matrix out = nn::linear_forward(hid, e.w2, e.b2);
    const double wi = w.at(0, i);
    for (std::size_t k = 0; k < mix.data.size(); ++k)
      mix.data[k] += wi * out.data[k];
    if (ctx) {
      c.pre1.push_back(std::move(pre1));
      c.hid.push_back(std::move(hid));
      c.out.push_back(std::move(out));
    }
  }
  nn::Matrix y = nn::gelu(mix);
  if (ctx) {
    c.x = x;
    c.router_weights = std::move(w);
    c.mix = std::move(mix);
  }
  return y;
}

nn::Matrix moe_backward(MoeParams& moe, const MoeCtx& ctx,
                        const nn::Matrix& dout, const nn::Matrix& embed,
                        nn::Matrix& d_embed) {
  const std::size_t n_experts = moe.experts.size();
  nn::Matrix dmix = nn::gelu_backward(ctx.mix, dout);
  nn::Matrix dx(ctx.x.rows, ctx.x.cols);
  nn::Matrix dw(1, n_experts);
  for (std::size_t i = 0; i < n_experts; ++i) {
    auto& e = moe.experts[i];
    const double wi = ctx.router_weights.at(0, i);
    // d(router weight i) = <dmix, expert_i output>
    double s = 0.0;
    for (std::size_t k = 0; k < dmix.data.size(); ++k)
      s += dmix.data[k] * ctx.out[i].data[k];
    dw.at(0, i) = s;
    nn::Matrix dout_i = dmix;
    nn::scale_inplace(dout_i, wi);
    nn::Matrix dhid = nn::linear_backward(ctx.hid[i], dout_i, e.w2, e.b2);
    nn::Matrix dpre1 = nn::gelu_backward(ctx.pre1[i], dhid);
    nn::add_inplace(dx, nn::linear_backward(ctx.x, dpre1, e.w1, e.b1));
  }
  nn::Matrix dlogits = nn::softmax_rows_backward(ctx.router_weights, dw);
  nn::add_inplace(d_embed, nn::linear_backward(embed, dlogits, moe.router_w,
                                               moe.router_b));
  return dx;
}

nn::Matrix st_forward(const StParams& p, const nn::Matrix& features,
                      const stats::StyleDescriptor& s_src,
                      const stats::StyleDescriptor& s_dst, StCtx* ctx) {
  require(features.rows >= 1, "stain transformer input needs N >= 1 rows");
  require(features.cols == p.cfg.dim,
          "stain transformer input dim " + std::to_string(features.cols) +
              " != model dim " + std::to_string(p.cfg.dim));
  const auto zs = p.norm.apply(s_src);
  const auto zd = p.norm.apply(s_dst);
  nn::Matrix z(1, 12);
  for (int c = 0; c < 6; ++c) {
    z.at(0, c) = zs[c];
    z.at(0, 6 + c) = zd[c];
  }
  nn::Matrix embed = nn::linear_forward(z, p.embed_w, p.embed_b);

  if (ctx) ctx->blocks.resize(p.blocks.size());
  nn::Matrix x = features;
  nn::scale_inplace(x, 1.0 / p.cfg.feature_scale);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const BlockParams& blk = p.blocks[l];
    BlockCtx* bc = ctx ? &ctx->blocks[l] : nullptr;
    if (bc) bc->x_in = x;
    nn::Matrix ln1 = nn::layernorm_forward(x, blk.ln1_g, blk.ln1_b,
                                           bc ? &bc->ln1 : nullptr);
    nn::Matrix attn = nn::attention_forward(ln1, blk.attn,
                                            bc ? &bc->attn : nullptr);
    nn::add_inplace(x, attn);
    if (bc) bc->x_mid = x;
    nn::Matrix ln2 = nn::layernorm_forward(x, blk.ln2_g, blk.ln2_b,
                                           bc ? &bc->ln2 : nullptr);
    nn::Matrix ffn = moe_forward(blk.moe, ln2, embed, bc ? &bc->moe : nullptr);
    nn::add_inplace(x, ffn);
  }
  if (ctx) {
    ctx->z = std::move(z);
    ctx->embed = embed;
    ctx->x_out = x;
  }
  nn::Matrix out = nn::linear_forward(x, p.head_w, p.head_b);
  nn::scale_inplace(out, p.cfg.feature_scale);
  return out;
}

nn::Matrix st_backward(StParams& p, const StCtx& ctx, const nn::Matrix& dout) {
  nn::Matrix dhead = dout;
  nn::scale_inplace(dhead, p.cfg.feature_scale);
  nn::Matrix dx = nn::linear_backward(ctx.x_out, dhead, p.head_w, p.head_b);
  nn::Matrix d_embed(1, p.cfg.dim);
  for (std::size_t l = p.blocks.size(); l-- > 0;) {
    BlockParams& blk = p.blocks[l];
    const BlockCtx& bc = ctx.blocks[l];
    // x3 = x2 + moe(ln2(x2)): residual passes dx through, plus the ffn path.
    nn::Matrix dffn = moe_backward(blk.moe, bc.moe, dx, ctx.embed, d_embed);
    nn::add_inplace(dx, nn::layernorm_backward(bc.ln2, dffn, blk.ln2_g,
                                               blk.ln2_b));
    // x2 = x1 + attn(ln1(x1))
    nn::Matrix dattn = nn::attention_backward(bc.attn, dx, blk.attn);
    nn::add_inplace(dx, nn::layernorm_backward(bc.ln1, dattn, blk.ln1_g,
                                               blk.ln1_b));
  }
  // Style inputs are data, not parameters; only embedder grads are kept.
  nn::linear_backward(ctx.z, d_embed, p.embed_w, p.embed_b);
  nn::scale_inplace(dx, 1.0 / p.cfg.feature_scale);
  return dx;
}

void validate_group(const SlideGroup& g, std::size_t dim) {
  require(!g.bags.empty(), "slide group has no bags");
  const auto& first = g.bags.front().features;
  require(first.cols == dim, "bag dim " + std::to_string(first.cols) +
                                 " != model dim " + std::to_string(dim));
  for (const auto& bag : g.bags)
    require(bag.features.rows == first.rows &&
                bag.features.cols == first.cols,
            "misaligned bag shapes within group of slide " + bag.slide_id);
}

StTrainResult st_train(StParams& p, const std::vector<SlideGroup>& groups,
                       const StTrainConfig& cfg) {
  require(!groups.empty(), "st_train: no groups");
  require(cfg.epochs >= 1 && cfg.batch_groups >= 1 &&
              cfg.pairs_per_group >= 1,
          "st_train: epochs, batch_groups, pairs_per_group must be >= 1");
  for (const auto& g : groups) validate_group(g, p.cfg.dim);

  auto params = p.tensors();
  StTrainResult result;
  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng::Stream stream(rng::derive_seed(cfg.seed, "st/epoch",
                                        static_cast<std::uint64_t>(epoch)));
    rng::shuffle(order, stream);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_groups) {
      const std::size_t end =
          std::min(order.size(), start + cfg.batch_groups);
      const double inv_batch =
          1.0 / (static_cast<double>(end - start) *
                 static_cast<double>(cfg.pairs_per_group));
      double batch_loss = 0.0;
      for (std::size_t bi = start; bi < end; ++bi) {
        const SlideGroup& g = groups[order[bi]];
        const std::size_t m = g.bags.size();
        for (int pr = 0; pr < cfg.pairs_per_group; ++pr) {
          const auto j = stream.uniform_int(m);
          const auto k = stream.uniform_int(m);
          const auto& src = g.bags[j];
          const auto& dst = g.bags[k];
          StCtx ctx;
          nn::Matrix pred =
              st_forward(p, src.features, src.style, dst.style, &ctx);
          nn::Matrix dpred;
          batch_loss += nn::l1_loss(pred, dst.features, &dpred);
          nn::scale_inplace(dpred, inv_batch);
          st_backward(p, ctx, dpred);
        }
      }
      nn::adam_step(params, lr);
      epoch_loss += batch_loss * inv_batch;
      ++n_batches;
    }
    result.epoch_loss.push_back(epoch_loss /
                                static_cast<double>(n_batches));
    lr *= cfg.lr_decay;
  }
  return result;
}

MaeReport st_evaluate_mae(const StParams& p,
                          const std::vector<SlideGroup>& groups) {
  MaeReport report;
  double before = 0.0, after = 0.0;
  for (const auto& g : groups) {
    validate_group(g, p.cfg.dim);
    const std::size_t m = g.bags.size();
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < m; ++k) {
        if (j == k) continue;
        const auto& src = g.bags[j];
        const auto& dst = g.bags[k];
        before += nn::l1_loss(src.features, dst.features, nullptr);
        nn::Matrix pred = st_forward(p, src.features, src.style, dst.style);
        after += nn::l1_loss(pred, dst.features, nullptr);
        ++report.n_pairs;
      }
    }
  }
  if (report.n_pairs > 0) {
    before /= static_cast<double>(report.n_pairs);
    after /= static_cast<double>(report.n_pairs);
  }
  report.mae_before = before;
  report.mae_after = after;
  return report;
}

void save_st(const StParams& p, const std::filesystem::path& path) {
  nn::Checkpoint ckpt;
  ckpt.meta = {
      {"model", "stain_transformer"},
      {"dim", p.cfg.dim},
      {"n_layers", p.cfg.n_layers},
      {"n_experts", p.cfg.n_experts},
      {"feature_scale", p.cfg.feature_scale},
      {"style_normalizer",
       {{"mean", p.norm.mean}, {"stddev", p.norm.stddev}}},
  };
  // tensors() is non-const only because it yields mutable pointers.
  auto& mutable_p = const_cast<StParams&>(p);
  for (nn::ParamTensor* t : mutable_p.tensors())
    ckpt.tensors.emplace_back(t->name, t->value);
  save_checkpoint(ckpt, path);
}

StParams load_st(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  StConfig cfg;
  StyleNormalizer norm;
  try {
    if (ckpt.meta.at("model").get<std::string>() != "stain_transformer")
      throw ValidationError(path.string() +
                            " is not a stain transformer checkpoint");
    cfg.dim = ckpt.meta.at("dim").get<std::size_t>();
    cfg.n_layers = ckpt.meta.at("n_layers").get<std::size_t>();
    cfg.n_experts = ckpt.meta.at("n_experts").get<std::size_t>();
    cfg.feature_scale = ckpt.meta.at("feature_scale").get<double>();
    const auto& nj = ckpt.meta.at("style_normalizer");
    norm.mean = nj.at("mean").get<std::array<double, 6>>();
    norm.stddev = nj.at("stddev").get<std::array<double, 6>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint metadata: " + std::string(e.what()));
  }
  rng::Stream stream(0);
  StParams p = StParams::create(cfg, norm, stream);
  for (nn::ParamTensor* t : p.tensors()) {
    const nn::Matrix* m = ckpt.find(t->name);
    if (!m) throw IoError("checkpoint missing tensor " + t->name);
    if (!m->same_shape(t->value))
      throw IoError("checkpoint tensor " + t->name + " has wrong shape");
    t->value = *m;
  }
  return p;
}

}  // namespace stainkit::st
