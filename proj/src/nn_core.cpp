#include "stainkit/nn_core.hpp"

#include <algorithm>
#include <cmath>

#include "stainkit/errors.hpp"
#include "stainkit/kernels.hpp"

namespace stainkit::nn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, "matmul: inner dimensions disagree");
  Matrix c(a.rows, b.cols);
  kernels::active().matmul(a.data.data(), b.data.data(), c.data.data(), a.rows,
                           a.cols, b.cols);
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  return matmul(transpose(a), b);
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  return matmul(a, transpose(b));
}

void add_inplace(Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "add_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void scale_inplace(Matrix& a, double s) {
  for (double& v : a.data) v *= s;
}

void check_finite(const Matrix& m, std::string_view what) {
  for (double v : m.data)
    if (!std::isfinite(v))
      throw NumericError(std::string(what) + " contains non-finite values");
}

void fill_normal(Matrix& m, rng::Stream& stream, double stddev) {
  for (double& v : m.data) v = stream.normal(0.0, stddev);
}

void adam_step(const std::vector<ParamTensor*>& params, double lr,
               double beta1, double beta2, double eps) {
  for (ParamTensor* p : params) {
    check_finite(p->grad, "gradient of " + p->name);
    p->adam_steps += 1;
    const double t = static_cast<double>(p->adam_steps);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double g = p->grad.data[i];
      double& m = p->adam_m.data[i];
      double& v = p->adam_v.data[i];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p->zero_grad();
  }
}

Matrix linear_forward(const Matrix& x, const ParamTensor& w,
                      const ParamTensor& b) {
  require(x.cols == w.value.rows, "linear: input dim " +
                                      std::to_string(x.cols) +
                                      " != weight rows " +
                                      std::to_string(w.value.rows));
  require(b.value.rows == 1 && b.value.cols == w.value.cols,
          "linear: bias shape mismatch");
  Matrix y = matmul(x, w.value);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y.at(i, j) += b.value.at(0, j);
  return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& dy, ParamTensor& w,
                       ParamTensor& b) {
  require(dy.cols == w.value.cols && x.cols == w.value.rows &&
              dy.rows == x.rows,
          "linear backward: shape mismatch");
  add_inplace(w.grad, matmul_tn(x, dy));
  for (std::size_t i = 0; i < dy.rows; ++i)
    for (std::size_t j = 0; j < dy.cols; ++j) b.grad.at(0, j) += dy.at(i, j);
  return matmul_nt(dy, w.value);
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

Matrix gelu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data) v = gelu_scalar(v);
  return y;
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  require(x.same_shape(dy), "gelu backward: shape mismatch");
  Matrix dx = x;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double v = x.data[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    dx.data[i] = dy.data[i] * (cdf + v * pdf);
  }
  return dx;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix y = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* r = y.row(i);
    const double mx = *std::max_element(r, r + x.cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (std::size_t j = 0; j < x.cols; ++j) r[j] /= sum;
  }
  return y;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
  require(y.same_shape(dy), "softmax backward: shape mismatch");
  Matrix dx(y.rows, y.cols);
  for (std::size_t i = 0; i < y.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) dot += dy.at(i, j) * y.at(i, j);
    for (std::size_t j = 0; j < y.cols; ++j)
      dx.at(i, j) = y.at(i, j) * (dy.at(i, j) - dot);
  }
  return dx;
}

Matrix layernorm_forward(const Matrix& x, const ParamTensor& gain,
                         const ParamTensor& bias, LayerNormCtx* ctx) {
  require(gain.value.rows == 1 && gain.value.cols == x.cols &&
              bias.value.rows == 1 && bias.value.cols == x.cols,
          "layernorm: gain/bias shape mismatch");
  Matrix xhat(x.rows, x.cols);
  std::vector<double> inv_std(x.rows);
  const double c = static_cast<double>(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x.at(i, j);
    mean /= c;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= c;
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < x.cols; ++j)
      xhat.at(i, j) = (x.at(i, j) - mean) * inv_std[i];
  }
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j)
      y.at(i, j) = gain.value.at(0, j) * xhat.at(i, j) + bias.value.at(0, j);
  if (ctx) {
    ctx->xhat = std::move(xhat);
    ctx->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix layernorm_backward(const LayerNormCtx& ctx, const Matrix& dy,
                          ParamTensor& gain, ParamTensor& bias) {
  const Matrix& xhat = ctx.xhat;
  require(xhat.same_shape(dy), "layernorm backward: shape mismatch");
  const double c = static_cast<double>(dy.cols);
  Matrix dx(dy.rows, dy.cols);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t j = 0; j < dy.cols; ++j) {
      const double g = dy.at(i, j) * gain.value.at(0, j);
      sum_g += g;
      sum_gx += g * xhat.at(i, j);
      gain.grad.at(0, j) += dy.at(i, j) * xhat.at(i, j);
      bias.grad.at(0, j) += dy.at(i, j);
    }
    const double mean_g = sum_g / c;
    const double mean_gx = sum_gx / c;
    for (std::size_t j = 0; j < dy.cols; ++j) {
      const double g = dy.at(i, j) * gain.value.at(0, j);
      dx.at(i, j) = (g - mean_g - xhat.at(i, j) * mean_gx) * ctx.inv_std[i];
    }
  }
  return dx;
}

AttentionParams AttentionParams::create(std::size_t dim,
                                        std::string_view prefix) {
  const std::string p(prefix);
  AttentionParams a;
  a.wq = ParamTensor(p + ".wq", dim, dim);
  a.bq = ParamTensor(p + ".bq", 1, dim);
  a.wk = ParamTensor(p + ".wk", dim, dim);
  a.bk = ParamTensor(p + ".bk", 1, dim);
  a.wv = ParamTensor(p + ".wv", dim, dim);
  a.bv = ParamTensor(p + ".bv", 1, dim);
  a.wo = ParamTensor(p + ".wo", dim, dim);
  a.bo = ParamTensor(p + ".bo", 1, dim);
  return a;
}

std::vector<ParamTensor*> AttentionParams::tensors() {
  return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo};
}

Matrix attention_forward(const Matrix& x, const AttentionParams& p,
                         AttentionCtx* ctx) {
  require(x.cols == p.wq.value.rows, "attention: feature dim mismatch");
  Matrix q = linear_forward(x, p.wq, p.bq);
  Matrix k = linear_forward(x, p.wk, p.bk);
  Matrix v = linear_forward(x, p.wv, p.bv);
  Matrix scores = matmul_nt(q, k);
  scale_inplace(scores, 1.0 / std::sqrt(static_cast<double>(x.cols)));
  Matrix weights = softmax_rows(scores);
  Matrix pooled = matmul(weights, v);
  Matrix y = linear_forward(pooled, p.wo, p.bo);
  if (ctx) {
    ctx->x = x;
    ctx->q = std::move(q);
    ctx->k = std::move(k);
    ctx->v = std::move(v);
    ctx->weights = std::move(weights);
    ctx->pooled = std::move(pooled);
  }
  return y;
}

Matrix attention_backward(const AttentionCtx& ctx, const Matrix& dy,
                          AttentionParams& p) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(ctx.x.cols));
  Matrix dpooled = linear_backward(ctx.pooled, dy, p.wo, p.bo);
  Matrix dweights = matmul_nt(dpooled, ctx.v);
  Matrix dv = matmul_tn(ctx.weights, dpooled);
  Matrix dscores = softmax_rows_backward(ctx.weights, dweights);
  scale_inplace(dscores, scale);
  Matrix dq = matmul(dscores, ctx.k);
  Matrix dk = matmul_tn(dscores, ctx.q);
  Matrix dx = linear_backward(ctx.x, dq, p.wq, p.bq);
  add_inplace(dx, linear_backward(ctx.x, dk, p.wk, p.bk));
  add_inplace(dx, linear_backward(ctx.x, dv, p.wv, p.bv));
  return dx;
}

double l1_loss(const Matrix& pred, const Matrix& target, Matrix* dpred) {
  require(pred.same_shape(target), "l1_loss: shape mismatch");
  const std::size_t n = pred.data.size();
  if (dpred) *dpred = Matrix(pred.rows, pred.cols);
  if (n == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.data[i] - target.data[i];
    total += std::abs(d);
    if (dpred)
      dpred->data[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
  }
  return total * inv_n;
}

double cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                     Matrix* dlogits) {
  require(logits.cols >= 2, "cross_entropy: needs at least 2 classes");
  require(labels.size() == logits.rows,
          "cross_entropy: label count != logit rows");
  for (int y : labels)
    require(y >= 0 && y < static_cast<int>(logits.cols),
            "cross_entropy: label " + std::to_string(y) + " out of range");
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  Matrix probs = softmax_rows(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* r = logits.row(i);
    const double mx = *std::max_element(r, r + logits.cols);
    double lse = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) lse += std::exp(r[j] - mx);
    total += std::log(lse) - (r[labels[i]] - mx);
  }
  if (dlogits) {
    *dlogits = std::move(probs);
    for (std::size_t i = 0; i < logits.rows; ++i) {
      dlogits->at(i, labels[i]) -= 1.0;
      for (std::size_t j = 0; j < logits.cols; ++j)
        dlogits->at(i, j) *= inv_b;
    }
  }
  return total * inv_b;
}

}  // namespace stainkit::nn
