#pragma once

// Differentiable tensor operations. Broadcasting is limited to
// scalar-vs-tensor and equal shapes; the *_rowwise ops tile a vector/matrix
// across leading rows with their own explicit gradient rules.

#include <cstddef>
#include <span>
#include <vector>

#include "ftlab/tensor.hpp"

namespace ftlab::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
double gelu_value(double x);
Tensor gelu(const Tensor& x);

// [m x k] . [k x n], or batched [g x m x k] . [g x k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& x);

// x viewed as [rows x v.numel()]; v is tiled over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& v);
Tensor mul_rowwise(const Tensor& x, const Tensor& v);

// x . w + b for x [n x in], w [in x out], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax(const Tensor& x);  // last axis

constexpr double kLayerNormEps = 1e-5;
// Normalizes over the last axis, then applies gain and bias (both [D]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Mean cross-entropy of logits [B x C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// out[i*r + u, j*s + v] = a[i,j] * b[u,v]
Tensor kron(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// out.flat[i] = x.flat[index[i]]; gradient scatter-adds.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape);
// Concatenates along axis 0; trailing dimensions must agree.
Tensor concat(const std::vector<Tensor>& parts);

}  // namespace ftlab::ops
