#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "covidnet/arch/graph.hpp"

namespace covidnet::arch {

/// Channel widths of one projection-expansion-projection-extension block.
struct PEPXSpec {
  std::size_t in_channels = 0;
  std::size_t proj1_channels = 0;
  std::size_t expand_channels = 0;
  std::size_t proj2_channels = 0;
  std::size_t out_channels = 0;

  /// Requires proj1 < in, expand > proj1 and proj2 < expand.
  void validate() const;
  bool residual() const { return in_channels == out_channels; }
};

/// Nodes and internal edges of a PEPX block, in stage order:
/// 1x1 projection, 1x1 expansion, 3x3 depthwise, 1x1 projection, 1x1 extension.
struct PEPXFragment {
  std::vector<LayerNode> nodes;
  std::vector<Edge> edges;
  bool residual = false;

  const std::string& entry() const { return nodes.front().id; }
  const std::string& exit() const { return nodes.back().id; }
};

PEPXFragment build_pepx(const PEPXSpec& spec, const std::string& prefix, int stage);

/// Adds `fragment` to `graph` fed from `source`. A residual edge from
/// `source` to the fragment exit is added when the block preserves width.
void attach_pepx(ArchGraph& graph, const PEPXFragment& fragment, const std::string& source);

enum class HubPolicy { PerStage, None };

/// Configuration of a COVID-Net-style network.
///
/// Text form is `key = value` lines; `#` starts a comment. Keys:
///   input_size, input_channels, stem_kernel, stem_stride, stem_channels,
///   stages, widths (comma separated), blocks_per_stage,
///   hub_policy (per_stage | none), projection_ratio, expansion_ratio,
///   head_hidden, classes.
struct ArchConfig {
  std::size_t input_size = 64;
  std::size_t input_channels = 1;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;
  std::size_t stem_channels = 32;
  std::vector<std::size_t> widths{32, 64, 128, 256};
  std::size_t blocks_per_stage = 2;
  HubPolicy hub_policy = HubPolicy::PerStage;
  // PEPX projections are this fraction of the block's input (first) or
  // output (second) width; expansion is this multiple of the output width.
  double projection_ratio = 0.5;
  double expansion_ratio = 2.0;
  std::size_t head_hidden = 64;
  std::size_t classes = kNumClasses;

  /// Parses the key/value text form on top of the defaults. Keys not given
  /// keep their default. Unknown keys are rejected.
  static ArchConfig parse(const std::string& text);
  static ArchConfig load(const std::string& path);
  std::string to_text() const;

  void validate() const;
  PEPXSpec block_spec(std::size_t in, std::size_t out) const;
};

/// Returns true when `key` is one of the recognised ArchConfig keys.
bool is_arch_key(const std::string& key);

/// Builds stem, PEPX stages with max-pool downsampling between stages, one
/// hub per stage under HubPolicy::PerStage, and a pooling/dense/softmax head.
/// Throws std::invalid_argument naming the stage whose widths violate the
/// PEPX ordering.
ArchGraph build_covidnet(const ArchConfig& config);

}  // namespace covidnet::arch
