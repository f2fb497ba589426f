#pragma once

#include <random>
#include <string>

#include "covidnet/tensor/tensor.hpp"

namespace covidnet::data {

struct AugmentationConfig {
  double max_translation_frac = 0.1;  // of the image side
  double max_rotation_deg = 10.0;
  double hflip_prob = 0.5;
  double zoom_lo = 0.9;
  double zoom_hi = 1.1;
  double max_intensity_shift_frac = 0.1;  // of the [0, 1] intensity range
  std::uint64_t seed = 0;

  void validate() const;
  /// Configuration that leaves every image unchanged.
  static AugmentationConfig identity();
};

/// One concrete draw of the augmentation magnitudes.
struct AugmentParams {
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
  double rotation_deg = 0.0;
  bool hflip = false;
  double zoom = 1.0;
  double intensity_shift = 0.0;

  bool geometric_identity() const {
    return shift_x == 0.0 && shift_y == 0.0 && rotation_deg == 0.0 && zoom == 1.0;
  }
};

/// Draws each magnitude independently and uniformly within the bounds.
/// Always consumes the same number of values from `rng`.
AugmentParams draw_augmentation(const AugmentationConfig& config, std::size_t height,
                                std::size_t width, std::mt19937_64& rng);

/// Flips, zooms about the centre, rotates and translates, sampling the
/// source bilinearly. Zooming in crops; zooming out or moving the content
/// pads with zeros. The intensity shift is then added and the result
/// clamped to [0, 1]. A geometric identity never resamples, so flips and
/// pure shifts are exact.
Tensor apply_augmentation(const Tensor& image, const AugmentParams& params);

Tensor augment(const Tensor& image, const AugmentationConfig& config, std::mt19937_64& rng);

}  // namespace covidnet::data
