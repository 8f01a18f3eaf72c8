#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stainkit/rng.hpp"

namespace stainkit::nn {

// Dense row-major matrix of doubles. Training runs in 64-bit throughout so
// finite-difference gradient checks are meaningful.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

Matrix matmul(const Matrix& a, const Matrix& b);     // a @ b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T @ b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a @ b^T
Matrix transpose(const Matrix& a);
void add_inplace(Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, double s);

// Throws NumericError when any entry is NaN or infinite.
void check_finite(const Matrix& m, std::string_view what);

void fill_normal(Matrix& m, rng::Stream& stream, double stddev);

// Trainable tensor: value, gradient, and Adam moments of identical shape.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  std::int64_t adam_steps = 0;

  ParamTensor() = default;
  ParamTensor(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)),
        value(rows, cols),
        grad(rows, cols),
        adam_m(rows, cols),
        adam_v(rows, cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Standard Adam with bias correction; checks gradients are finite, updates
// values, then zeroes gradients.
void adam_step(const std::vector<ParamTensor*>& params, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// ---- Layers. Forward returns outputs; backward takes the saved inputs  ----
// ---- (or a context), accumulates parameter gradients, and returns dx.  ----

// y[N,out] = x[N,in] @ W[in,out] + b[1,out]
Matrix linear_forward(const Matrix& x, const ParamTensor& w,
                      const ParamTensor& b);
Matrix linear_backward(const Matrix& x, const Matrix& dy, ParamTensor& w,
                       ParamTensor& b);

// Exact-erf GeLU, elementwise.
double gelu_scalar(double x);
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

// Row-wise softmax with max subtraction. Backward takes the forward output.
Matrix softmax_rows(const Matrix& x);
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCtx {
  Matrix xhat;                  // normalized input before gain/bias
  std::vector<double> inv_std;  // 1/sqrt(var + eps) per row
};

// Per-row normalization: y = gain * (x - mean)/sqrt(var + eps) + bias.
// gain/bias are [1,C].
Matrix layernorm_forward(const Matrix& x, const ParamTensor& gain,
                         const ParamTensor& bias, LayerNormCtx* ctx);
Matrix layernorm_backward(const LayerNormCtx& ctx, const Matrix& dy,
                          ParamTensor& gain, ParamTensor& bias);

// Single-head scaled dot-product self-attention with learned Q,K,V,O
// projections; model dim equals the feature dim.
struct AttentionParams {
  ParamTensor wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams create(std::size_t dim, std::string_view prefix);
  std::vector<ParamTensor*> tensors();
};

struct AttentionCtx {
  Matrix x, q, k, v;
  Matrix weights;  // softmax(q k^T / sqrt(C)), [N,N]
  Matrix pooled;   // weights @ v, [N,C]
};

Matrix attention_forward(const Matrix& x, const AttentionParams& p,
                         AttentionCtx* ctx);
Matrix attention_backward(const AttentionCtx& ctx, const Matrix& dy,
                          AttentionParams& p);

// Mean absolute error over all entries; subgradient 0 at exact ties.
double l1_loss(const Matrix& pred, const Matrix& target, Matrix* dpred);

// Mean softmax cross-entropy over rows of logits[B,K] against integer
// labels; dlogits = (softmax - onehot)/B.
double cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                     Matrix* dlogits);

}  // namespace stainkit::nn
