#include "covidnet/data/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace covidnet::data {

void AugmentationConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("augmentation ") + name + " must be a nonnegative number");
    }
  };
  nonneg(max_translation_frac, "max_translation_frac");
  nonneg(max_rotation_deg, "max_rotation_deg");
  nonneg(max_intensity_shift_frac, "max_intensity_shift_frac");
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) {
    throw std::invalid_argument("augmentation hflip_prob must lie in [0, 1]");
  }
  if (!(zoom_lo > 0.0 && zoom_lo <= 1.0 && zoom_hi >= 1.0 && std::isfinite(zoom_hi))) {
    throw std::invalid_argument("augmentation zoom range must satisfy 0 < lo <= 1 <= hi");
  }
}

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.max_translation_frac = c.max_rotation_deg = c.hflip_prob = c.max_intensity_shift_frac = 0.0;
  c.zoom_lo = c.zoom_hi = 1.0;
  return c;
}

AugmentParams draw_augmentation(const AugmentationConfig& config, std::size_t height,
                                std::size_t width, std::mt19937_64& rng) {
  config.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto symmetric = [&](double bound) { return bound * (2.0 * unit(rng) - 1.0); };
  AugmentParams p;
  p.shift_x = symmetric(config.max_translation_frac * static_cast<double>(width));
  p.shift_y = symmetric(config.max_translation_frac * static_cast<double>(height));
  p.rotation_deg = symmetric(config.max_rotation_deg);
  p.hflip = unit(rng) < config.hflip_prob;
  p.zoom = config.zoom_lo + (config.zoom_hi - config.zoom_lo) * unit(rng);
  p.intensity_shift = symmetric(config.max_intensity_shift_frac);
  return p;
}

Tensor apply_augmentation(const Tensor& image, const AugmentParams& p) {
  if (image.rank() != 2) {
    throw std::invalid_argument("augment: expected a [H, W] image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  const auto in = image.values();
  std::vector<double> out(h * w);

  if (p.geometric_identity()) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) out[i * w + j] = in[i * w + (p.hflip ? w - 1 - j : j)];
    }
  } else {
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double theta = p.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    auto sample = [&](double y, double x) {
      const double fy = std::floor(y), fx = std::floor(x);
      const double ay = y - fy, ax = x - fx;
      const auto y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
      auto px = [&](long yy, long xx) {
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
        return in[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
      };
      return (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) +
             ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
    };
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        // Inverse map: undo translation, rotation, zoom, then flip.
        const double dy = static_cast<double>(i) - cy - p.shift_y;
        const double dx = static_cast<double>(j) - cx - p.shift_x;
        const double ry = (c * dy - s * dx) / p.zoom;
        const double rx = (s * dy + c * dx) / p.zoom;
        const double sx = p.hflip ? cx - rx : cx + rx;
        out[i * w + j] = sample(cy + ry, sx);
      }
    }
  }
  if (p.intensity_shift != 0.0) {
    for (double& v : out) v += p.intensity_shift;
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor({h, w}, std::move(out));
}

Tensor augment(const Tensor& image, const AugmentationConfig& config, std::mt19937_64& rng) {
  if (image.rank() != 2) {
    throw std::invalid_argument("augment: expected a [H, W] image, got " + shape_str(image.shape()));
  }
  return apply_augmentation(image, draw_augmentation(config, image.dim(0), image.dim(1), rng));
}

}  // namespace covidnet::data
