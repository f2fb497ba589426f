#pragma once

#include <functional>
#include <string>
#include <vector>

#include "covidnet/arch/graph.hpp"
#include "covidnet/arch/model.hpp"
#include "covidnet/tensor/tensor.hpp"

namespace covidnet::explain {

/// Maps an [N, 1, H, W] batch to [N, 3] class probabilities.
using Classifier = std::function<Tensor(const Tensor& batch)>;

Classifier network_classifier(const arch::ArchGraph& graph, const arch::ParameterStore& params);

struct AttributionConfig {
  std::size_t patch_size = 8;
  std::size_t stride = 8;
  double occlusion_value = 0.5;
  double selection_fraction = 0.1;

  void validate() const;
};

/// Patch (i, j) covers rows [i*stride, min(i*stride + patch, H)) and the
/// matching columns. The grid has ceil(H/stride) x ceil(W/stride) patches.
struct PatchGrid {
  std::size_t height = 0, width = 0;  // image extent
  std::size_t rows = 0, cols = 0;
  std::size_t patch = 0, stride = 0;

  PatchGrid(std::size_t height, std::size_t width, std::size_t patch, std::size_t stride);
  std::size_t count() const { return rows * cols; }
  std::size_t row_begin(std::size_t i) const { return i * stride; }
  std::size_t row_end(std::size_t i) const;
  std::size_t col_begin(std::size_t j) const { return j * stride; }
  std::size_t col_end(std::size_t j) const;
};

struct InterpretationMask {
  PatchGrid grid;
  int target_class = 0;
  double original_score = 0.0;
  std::vector<double> score_drop;   // row-major, grid.count() entries
  std::vector<std::uint8_t> selected;  // 1 for chosen patches
  std::size_t selected_count = 0;
  double threshold = 0.0;  // smallest drop among the chosen patches
  /// No chosen patch lowers the target score.
  bool no_critical_factors = false;

  bool is_selected(std::size_t i, std::size_t j) const { return selected[i * grid.cols + j] != 0; }
  /// Image pixels covered by at least one chosen patch, as a [H, W] 0/1 tensor.
  Tensor pixel_mask() const;
};

/// ceil(fraction * total), at least 1.
std::size_t selection_count(double fraction, std::size_t total);

/// Indices of the `k` largest values; equal values are taken in index order.
std::vector<std::size_t> select_top(const std::vector<double>& values, std::size_t k);

/// Replaces the pixels of the listed patches (row-major indices) with `value`.
Tensor occlude(const Tensor& image, const PatchGrid& grid, const std::vector<std::size_t>& patches,
               double value);

/// Occludes each patch in turn, re-evaluates the classifier on that single
/// image and records original minus occluded target probability. Throws
/// std::invalid_argument when the patch does not fit the image or the
/// target is not a class index.
InterpretationMask critical_factors(const Classifier& model, const Tensor& image, int target_class,
                                    const AttributionConfig& config);

/// Writes the image with chosen patches highlighted. PNG output is RGB with
/// chosen pixels tinted red; PGM output shifts chosen pixels by half the
/// intensity range. The format follows the file extension.
void overlay(const Tensor& image, const InterpretationMask& mask, const std::string& path);

/// One CSV line per grid row of score drops.
std::string drop_map_csv(const InterpretationMask& mask);
/// `key = value` summary of a mask.
std::string mask_report(const InterpretationMask& mask, const AttributionConfig& config);

}  // namespace covidnet::explain
