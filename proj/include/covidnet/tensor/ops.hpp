#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "covidnet/tensor/tensor.hpp"

// Differentiable primitives. Each returns a fresh tensor and, when a tape is
// active and an input requires gradients, records its backward rule.
namespace covidnet::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);

Tensor relu(const Tensor& x);

/// Max pooling over [N,C,H,W] with a square window and no padding.
/// Output extent is floor((H - window) / stride) + 1. Ties route the gradient
/// to the first maximum in row-major window order.
Tensor max_pool2d(const Tensor& x, std::size_t window, std::size_t stride);

/// [N,C,H,W] -> [N,C], mean over the spatial extent.
Tensor global_avg_pool(const Tensor& x);

/// x[N,in] * W[out,in]^T + b[out]. `b` may be undefined.
Tensor dense(const Tensor& x, const Tensor& weights, const Tensor& bias);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Mean negative log-likelihood of `labels` under row-wise probabilities
/// probs[N,K]. Probabilities are clamped to [1e-12, 1] before the log.
Tensor cross_entropy(const Tensor& probs, std::span<const int> labels);

/// Channel-axis concatenation of [N,C_i,H,W] tensors.
Tensor concat_channels(std::span<const Tensor> inputs);

inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace covidnet::ops
