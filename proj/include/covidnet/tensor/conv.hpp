#pragma once

#include <cstddef>

#include "covidnet/tensor/tensor.hpp"

namespace covidnet {

/// Geometry of a 2-D grouped convolution over NCHW input.
///
/// Weights are laid out [out_channels, in_channels / groups, kernel_h, kernel_w].
/// groups == in_channels == out_channels is a depthwise convolution.
struct ConvSpec {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  static ConvSpec pointwise(std::size_t in, std::size_t out);
  static ConvSpec depthwise(std::size_t channels, std::size_t kernel, std::size_t stride = 1);

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  std::size_t out_extent(std::size_t in_extent, std::size_t kernel) const;
  std::size_t out_h(std::size_t h) const { return out_extent(h, kernel_h); }
  std::size_t out_w(std::size_t w) const { return out_extent(w, kernel_w); }
  Shape weight_shape() const;
  bool is_depthwise() const { return groups == in_channels && groups == out_channels; }

  std::size_t param_count(bool with_bias) const;
  /// kernel_h * kernel_w * (in_channels / groups) * out_channels * H_out * W_out
  std::size_t mac_count(std::size_t in_h, std::size_t in_w) const;
};

/// Grouped 2-D convolution, differentiable with respect to input, weights and
/// bias. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);

}  // namespace covidnet
