#include "covidnet/explain/occlusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "covidnet/data/image.hpp"
#include "covidnet/util/kv.hpp"

namespace covidnet::explain {

namespace {

void check_image(const Tensor& image) {
  if (image.rank() != 2) {
    throw std::invalid_argument("explain: expected a [H, W] image, got " + shape_str(image.shape()));
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Classifier network_classifier(const arch::ArchGraph& graph, const arch::ParameterStore& params) {
  return [&graph, &params](const Tensor& batch) { return arch::forward(graph, params, batch); };
}

void AttributionConfig::validate() const {
  if (patch_size == 0) throw std::invalid_argument("patch size must be at least 1");
  if (stride == 0) throw std::invalid_argument("stride must be at least 1");
  if (!(occlusion_value >= 0.0 && occlusion_value <= 1.0)) {
    throw std::invalid_argument("occlusion value must lie in [0, 1]");
  }
  if (!(selection_fraction > 0.0 && selection_fraction <= 1.0)) {
    throw std::invalid_argument("selection fraction must lie in (0, 1]");
  }
}

PatchGrid::PatchGrid(std::size_t h, std::size_t w, std::size_t p, std::size_t s)
    : height(h), width(w), patch(p), stride(s) {
  if (p == 0 || s == 0) throw std::invalid_argument("patch size and stride must be positive");
  if (p > h || p > w) {
    throw std::invalid_argument("patch size " + std::to_string(p) + " exceeds the " + std::to_string(h) +
                                "x" + std::to_string(w) + " image");
  }
  rows = ceil_div(h, s);
  cols = ceil_div(w, s);
}

std::size_t PatchGrid::row_end(std::size_t i) const { return std::min(height, i * stride + patch); }
std::size_t PatchGrid::col_end(std::size_t j) const { return std::min(width, j * stride + patch); }

Tensor InterpretationMask::pixel_mask() const {
  Tensor m({grid.height, grid.width}, 0.0);
  auto v = m.mutable_values();
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      if (!is_selected(i, j)) continue;
      for (std::size_t y = grid.row_begin(i); y < grid.row_end(i); ++y) {
        for (std::size_t x = grid.col_begin(j); x < grid.col_end(j); ++x) v[y * grid.width + x] = 1.0;
      }
    }
  }
  return m;
}

std::size_t selection_count(double fraction, std::size_t total) {
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(total) - 1e-9));
  return std::clamp<std::size_t>(k, 1, total);
}

std::vector<std::size_t> select_top(const std::vector<double>& values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

Tensor occlude(const Tensor& image, const PatchGrid& grid, const std::vector<std::size_t>& patches,
               double value) {
  check_image(image);
  Tensor out = image.clone();
  auto v = out.mutable_values();
  for (std::size_t p : patches) {
    const std::size_t i = p / grid.cols, j = p % grid.cols;
    for (std::size_t y = grid.row_begin(i); y < grid.row_end(i); ++y) {
      for (std::size_t x = grid.col_begin(j); x < grid.col_end(j); ++x) v[y * grid.width + x] = value;
    }
  }
  return out;
}

InterpretationMask critical_factors(const Classifier& model, const Tensor& image, int target_class,
                                    const AttributionConfig& config) {
  check_image(image);
  config.validate();
  if (target_class < 0 || target_class > 2) {
    throw std::invalid_argument("target class " + std::to_string(target_class) + " is not 0, 1 or 2");
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  InterpretationMask mask{PatchGrid(h, w, config.patch_size, config.stride), target_class, 0.0, {}, {}, 0, 0.0, false};
  const auto t = static_cast<std::size_t>(target_class);

  auto score = [&](const Tensor& img) {
    const Tensor probs = model(Tensor({1, 1, h, w}, std::vector<double>(img.values().begin(), img.values().end())));
    if (probs.shape() != Shape{1, 3}) {
      throw std::invalid_argument("explain: classifier returned shape " + shape_str(probs.shape()));
    }
    return probs.at(t);
  };
  mask.original_score = score(image);
  mask.score_drop.resize(mask.grid.count());
  for (std::size_t p = 0; p < mask.grid.count(); ++p) {
    mask.score_drop[p] = mask.original_score - score(occlude(image, mask.grid, {p}, config.occlusion_value));
  }

  const std::vector<std::size_t> top =
      select_top(mask.score_drop, selection_count(config.selection_fraction, mask.grid.count()));
  mask.selected.assign(mask.grid.count(), 0);
  for (std::size_t p : top) mask.selected[p] = 1;
  mask.selected_count = top.size();
  mask.threshold = mask.score_drop[top.back()];
  mask.no_critical_factors = mask.score_drop[top.front()] <= 0.0;
  return mask;
}

void overlay(const Tensor& image, const InterpretationMask& mask, const std::string& path) {
  check_image(image);
  if (image.dim(0) != mask.grid.height || image.dim(1) != mask.grid.width) {
    throw std::invalid_argument("overlay: mask was computed for a " + std::to_string(mask.grid.height) + "x" +
                                std::to_string(mask.grid.width) + " image, got " + shape_str(image.shape()));
  }
  const Tensor chosen = mask.pixel_mask();
  const std::size_t n = image.numel();
  if (ends_with(path, ".png") || ends_with(path, ".PNG")) {
    data::RgbImage rgb{image.dim(0), image.dim(1), std::vector<std::uint8_t>(3 * n)};
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint8_t g = data::to_byte(image.at(k));
      if (chosen.at(k) != 0.0) {
        rgb.pixels[3 * k] = static_cast<std::uint8_t>((g + 256) / 2);
        rgb.pixels[3 * k + 1] = static_cast<std::uint8_t>(g / 2);
        rgb.pixels[3 * k + 2] = static_cast<std::uint8_t>(g / 2);
      } else {
        rgb.pixels[3 * k] = rgb.pixels[3 * k + 1] = rgb.pixels[3 * k + 2] = g;
      }
    }
    data::write_png_rgb(path, rgb);
  } else if (ends_with(path, ".pgm") || ends_with(path, ".PGM")) {
    std::vector<double> v(n);
    for (std::size_t k = 0; k < n; ++k) {
      int b = data::to_byte(image.at(k));
      if (chosen.at(k) != 0.0) b = b < 128 ? b + 128 : b - 128;
      v[k] = b / 255.0;
    }
    data::write_pgm(path, Tensor(image.shape(), std::move(v)));
  } else {
    throw std::invalid_argument(path + ": overlay output must end in .png or .pgm");
  }
}

std::string drop_map_csv(const InterpretationMask& mask) {
  std::string out;
  for (std::size_t i = 0; i < mask.grid.rows; ++i) {
    for (std::size_t j = 0; j < mask.grid.cols; ++j) {
      if (j) out += ',';
      out += util::format_double(mask.score_drop[i * mask.grid.cols + j]);
    }
    out += '\n';
  }
  return out;
}

std::string mask_report(const InterpretationMask& mask, const AttributionConfig& config) {
  std::ostringstream out;
  out << "# covidnet-explain 1\n"
      << "target_class = " << mask.target_class << '\n'
      << "original_score = " << util::format_double(mask.original_score) << '\n'
      << "patch_size = " << config.patch_size << '\n'
      << "stride = " << config.stride << '\n'
      << "occlusion_value = " << util::format_double(config.occlusion_value) << '\n'
      << "selection_fraction = " << util::format_double(config.selection_fraction) << '\n'
      << "grid = " << mask.grid.rows << "x" << mask.grid.cols << '\n'
      << "selected = " << mask.selected_count << '\n'
      << "threshold = " << util::format_double(mask.threshold) << '\n'
      << "no_critical_factors = " << (mask.no_critical_factors ? "true" : "false") << '\n'
      << "selected_patches =";
  for (std::size_t p = 0; p < mask.grid.count(); ++p) {
    if (mask.selected[p]) out << ' ' << p / mask.grid.cols << ':' << p % mask.grid.cols;
  }
  out << '\n';
  return out.str();
}

}  // namespace covidnet::explain
