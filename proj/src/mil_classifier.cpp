#include "stainkit/mil_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stainkit/checkpoint.hpp"
#include "stainkit/errors.hpp"

namespace stainkit::mil {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kPi = 3.14159265358979323846;

}  // namespace

MilParams MilParams::create(const MilConfig& cfg, rng::Stream& stream) {
  require(cfg.dim >= 1 && cfg.attn_dim >= 1,
          "mil config: dim and attn_dim must be >= 1");
  const std::size_t c = cfg.dim, d = cfg.attn_dim;
  MilParams p;
  p.cfg = cfg;
  p.v_w = nn::ParamTensor("attn.v.w", c, d);
  p.v_b = nn::ParamTensor("attn.v.b", 1, d);
  p.u_w = nn::ParamTensor("attn.u.w", c, d);
  p.u_b = nn::ParamTensor("attn.u.b", 1, d);
  p.w_w = nn::ParamTensor("attn.score.w", d, 1);
  p.w_b = nn::ParamTensor("attn.score.b", 1, 1);
  p.head_w = nn::ParamTensor("head.w", c, 2);
  p.head_b = nn::ParamTensor("head.b", 1, 2);
  // Bag features run a few units in magnitude, so the gate branches get a
  // scaled-down init to keep their pre-activations inside the responsive
  // range of tanh/sigmoid.
  nn::fill_normal(p.v_w.value, stream, 0.3 / std::sqrt(double(c)));
  nn::fill_normal(p.u_w.value, stream, 0.3 / std::sqrt(double(c)));
  nn::fill_normal(p.w_w.value, stream, 1.0 / std::sqrt(double(d)));
  // The head starts at zero so every update is label-driven from step one.
  // At the short stock schedule the optimizer cannot walk back a large
  // random start, which would otherwise dominate the final logits.
  return p;
}

std::vector<nn::ParamTensor*> MilParams::tensors() {
  return {&v_w, &v_b, &u_w, &u_b, &w_w, &w_b, &head_w, &head_b};
}

MilOutput mil_forward(const MilParams& p, const nn::Matrix& features,
                      MilCtx* ctx) {
  require(features.rows >= 1, "mil_forward: bag needs N >= 1 instances");
  require(features.cols == p.cfg.dim,
          "mil_forward: feature dim " + std::to_string(features.cols) +
              " != model dim " + std::to_string(p.cfg.dim));
  nn::Matrix t = nn::linear_forward(features, p.v_w, p.v_b);
  for (double& v : t.data) v = std::tanh(v);
  nn::Matrix s = nn::linear_forward(features, p.u_w, p.u_b);
  for (double& v : s.data) v = sigmoid(v);
  nn::Matrix gated = t;
  for (std::size_t i = 0; i < gated.data.size(); ++i)
    gated.data[i] *= s.data[i];
  nn::Matrix scores = nn::linear_forward(gated, p.w_w, p.w_b);  // [N,1]

  // Softmax over the instance axis.
  nn::Matrix weights(features.rows, 1);
  double mx = scores.at(0, 0);
  for (std::size_t i = 1; i < scores.rows; ++i)
    mx = std::max(mx, scores.at(i, 0));
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.rows; ++i) {
    weights.at(i, 0) = std::exp(scores.at(i, 0) - mx);
    sum += weights.at(i, 0);
  }
  for (std::size_t i = 0; i < scores.rows; ++i) weights.at(i, 0) /= sum;

  nn::Matrix pooled = nn::matmul_tn(weights, features);  // [1,C]
  MilOutput out;
  out.logits = nn::linear_forward(pooled, p.head_w, p.head_b);
  out.attention.resize(features.rows);
  for (std::size_t i = 0; i < features.rows; ++i)
    out.attention[i] = weights.at(i, 0);
  if (ctx) {
    ctx->x = features;
    ctx->t = std::move(t);
    ctx->s = std::move(s);
    ctx->gated = std::move(gated);
    ctx->weights = std::move(weights);
    ctx->pooled = std::move(pooled);
  }
  return out;
}

void mil_backward(MilParams& p, const MilCtx& ctx, const nn::Matrix& dlogits) {
  nn::Matrix dpooled = nn::linear_backward(ctx.pooled, dlogits, p.head_w,
                                           p.head_b);  // [1,C]
  // pooled = weights^T x
  nn::Matrix dweights = nn::matmul_nt(ctx.x, dpooled);  // [N,1]
  // Softmax over the instance axis.
  double dot = 0.0;
  for (std::size_t i = 0; i < dweights.rows; ++i)
    dot += dweights.at(i, 0) * ctx.weights.at(i, 0);
  nn::Matrix dscores(dweights.rows, 1);
  for (std::size_t i = 0; i < dweights.rows; ++i)
    dscores.at(i, 0) = ctx.weights.at(i, 0) * (dweights.at(i, 0) - dot);

  nn::Matrix dgated = nn::linear_backward(ctx.gated, dscores, p.w_w, p.w_b);
  nn::Matrix dpre_t(dgated.rows, dgated.cols);
  nn::Matrix dpre_s(dgated.rows, dgated.cols);
  for (std::size_t i = 0; i < dgated.data.size(); ++i) {
    const double ti = ctx.t.data[i], si = ctx.s.data[i];
    dpre_t.data[i] = dgated.data[i] * si * (1.0 - ti * ti);
    dpre_s.data[i] = dgated.data[i] * ti * si * (1.0 - si);
  }
  nn::linear_backward(ctx.x, dpre_t, p.v_w, p.v_b);
  nn::linear_backward(ctx.x, dpre_s, p.u_w, p.u_b);
}

nn::Matrix lsa_augment(const LsaConfig& cfg, const nn::FeatureBag& bag,
                       rng::Stream& step_rng) {
  require(cfg.p >= 0.0 && cfg.p <= 1.0, "lsa probability must be in [0,1]");
  if (cfg.p > 0.0)
    require(cfg.prior != nullptr && cfg.st != nullptr,
            "lsa_augment: prior and stain transformer required when p > 0");
  const double u = step_rng.uniform();
  if (u >= cfg.p) return bag.features;
  const stats::StyleDescriptor target = cfg.prior->sample(step_rng);
  return st::st_forward(*cfg.st, bag.features, bag.style, target);
}

MilTrainResult train_mil(MilParams& p, const std::vector<nn::FeatureBag>& bags,
                         const LsaConfig& lsa, const MilTrainConfig& cfg) {
  require(!bags.empty(), "train_mil: no bags");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1,
          "train_mil: epochs and batch_size must be >= 1");
  if (lsa.p > 0.0)
    require(lsa.prior != nullptr && lsa.st != nullptr,
            "train_mil: prior and stain transformer required when p > 0");
  for (const auto& bag : bags) {
    require(bag.label.has_value(), "unlabeled bag " + bag.slide_id);
    require(bag.features.cols == p.cfg.dim,
            "bag " + bag.slide_id + " dim mismatch");
  }

  auto params = p.tensors();
  // Style sampling uses its own stream so p-sweeps share the shuffle order.
  rng::Stream lsa_stream(rng::derive_seed(cfg.seed, "mil/lsa"));
  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  MilTrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.lr * 0.5 *
        (1.0 + std::cos(kPi * static_cast<double>(epoch) / cfg.epochs));
    rng::Stream stream(rng::derive_seed(cfg.seed, "mil/epoch",
                                        static_cast<std::uint64_t>(epoch)));
    rng::shuffle(order, stream);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t b = end - start;
      nn::Matrix logits(b, 2);
      std::vector<int> labels(b);
      std::vector<MilCtx> ctxs(b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto& bag = bags[order[start + i]];
        const nn::Matrix feats = lsa_augment(lsa, bag, lsa_stream);
        MilOutput out = mil_forward(p, feats, &ctxs[i]);
        logits.at(i, 0) = out.logits.at(0, 0);
        logits.at(i, 1) = out.logits.at(0, 1);
        labels[i] = *bag.label;
      }
      nn::Matrix dlogits;
      epoch_loss += nn::cross_entropy(logits, labels, &dlogits);
      for (std::size_t i = 0; i < b; ++i) {
        nn::Matrix drow(1, 2);
        drow.at(0, 0) = dlogits.at(i, 0);
        drow.at(0, 1) = dlogits.at(i, 1);
        mil_backward(p, ctxs[i], drow);
      }
      nn::adam_step(params, lr);
      ++n_batches;
    }
    result.epoch_loss.push_back(epoch_loss /
                                static_cast<double>(n_batches));
  }
  return result;
}

double auc_mann_whitney(const std::vector<double>& scores,
                        const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "auc: score/label count mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) {
    require(y == 0 || y == 1, "auc: labels must be 0/1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0,
          "auc undefined: evaluation set contains a single class");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Average ranks within tie groups; ranks are exact half-integers, so the
  // rank-sum route is bitwise equal to counting wins + ties/2.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) +
                             static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

EvalReport evaluate(const MilParams& p,
                    const std::vector<nn::FeatureBag>& bags) {
  require(!bags.empty(), "evaluate: no bags");
  EvalReport report;
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t correct = 0;
  for (const auto& bag : bags) {
    require(bag.label.has_value(), "unlabeled bag " + bag.slide_id);
    const MilOutput out = mil_forward(p, bag.features);
    const nn::Matrix probs = nn::softmax_rows(out.logits);
    const double score = probs.at(0, 1);
    scores.push_back(score);
    labels.push_back(*bag.label);
    const int pred = score > 0.5 ? 1 : 0;
    if (pred == *bag.label) ++correct;
    if (*bag.label == 1)
      ++report.n_pos;
    else
      ++report.n_neg;
  }
  report.acc = static_cast<double>(correct) / static_cast<double>(bags.size());
  if (report.n_pos > 0 && report.n_neg > 0)
    report.auc = auc_mann_whitney(scores, labels);
  return report;
}

void save_mil(const MilParams& p, const std::filesystem::path& path) {
  nn::Checkpoint ckpt;
  ckpt.meta = {{"model", "abmil"},
               {"dim", p.cfg.dim},
               {"attn_dim", p.cfg.attn_dim}};
  auto& mutable_p = const_cast<MilParams&>(p);
  for (nn::ParamTensor* t : mutable_p.tensors())
    ckpt.tensors.emplace_back(t->name, t->value);
  save_checkpoint(ckpt, path);
}

MilParams load_mil(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(path);
  MilConfig cfg;
  try {
    if (ckpt.meta.at("model").get<std::string>() != "abmil")
      throw ValidationError(path.string() + " is not a MIL checkpoint");
    cfg.dim = ckpt.meta.at("dim").get<std::size_t>();
    cfg.attn_dim = ckpt.meta.at("attn_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint metadata: " + std::string(e.what()));
  }
  rng::Stream stream(0);
  MilParams p = MilParams::create(cfg, stream);
  for (nn::ParamTensor* t : p.tensors()) {
    const nn::Matrix* m = ckpt.find(t->name);
    if (!m) throw IoError("checkpoint missing tensor " + t->name);
    if (!m->same_shape(t->value))
      throw IoError("checkpoint tensor " + t->name + " has wrong shape");
    t->value = *m;
  }
  return p;
}

}  // namespace stainkit::mil
