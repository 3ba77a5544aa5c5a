#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "avgn/numeric/tensor.hpp"

// Differentiable ops over Tensor. Each op computes its value eagerly and, when a
// tape is active and some input requires a gradient, records its backward rule.
namespace avgn {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x: [n x m] (or [m]), bias: [m], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// [n x m] -> [m]
Tensor mean_rows(const Tensor& x);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
// Row-wise normalization over the last axis; eps sits inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// 1-D parts join end to end; 2-D parts join along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// Row r of a matrix as a vector.
Tensor row(const Tensor& x, std::size_t r);
// Vectors of equal length -> matrix.
Tensor stack_rows(std::span<const Tensor> rows);
Tensor reshape(const Tensor& x, Shape shape);

// out[i] = elementwise max of rows 0..i. Ties route gradient to the earliest row.
Tensor cummax_rows(const Tensor& x);

// x: [Cin x H x W], w: [Cout x Cin x k x k], b: [Cout]. im2col + matmul.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad);
// [C x H x W] -> [C]
Tensor spatial_mean(const Tensor& x);
// [C x H x W] -> [(H*W) x C]
Tensor map_to_tokens(const Tensor& x);
// [(H*W) x C] -> [C x H x W]
Tensor tokens_to_map(const Tensor& x, std::size_t height, std::size_t width);

// Per-head softmax(Q K^T / sqrt(d/heads)) V with heads concatenated; no projections.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    std::size_t heads);

// Cross-entropy of probability rows against a class index, averaged over rows.
// Probabilities are floored at 1e-12 inside the log.
Tensor cross_entropy(const Tensor& probs, std::size_t label);
inline constexpr double kProbabilityFloor = 1e-12;
// Mean squared difference over all elements.
Tensor mse(const Tensor& a, const Tensor& b);
// Mean absolute difference; subgradient 0 at equality.
Tensor l1(const Tensor& a, const Tensor& b);

}  // namespace avgn
