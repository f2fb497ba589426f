#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covidnet/arch/graph.hpp"

namespace covidnet::arch {

struct LayerComplexity {
  std::string id;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

/// Parameter and multiply-accumulate totals. Only convolution and dense
/// layers contribute; totals are the sums of `layers`.
struct ComplexityReport {
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
  std::vector<LayerComplexity> layers;

  /// `layer <id> params=<n> macs=<n>` lines in topological order followed by
  /// `total params=<n> macs=<n>` and a line in millions / billions.
  std::string to_text() const;
};

ComplexityReport analyze(const ArchGraph& graph);

std::uint64_t count_params(const ArchGraph& graph);
/// MACs for one image of `channels x height x width`.
std::uint64_t count_macs(const ArchGraph& graph, std::size_t channels, std::size_t height,
                         std::size_t width);

// Reference figures of the full-size production model (not reproduced here;
// its per-layer widths are not available).
inline constexpr double kReferenceParamsMillions = 11.75;
inline constexpr double kReferenceMacsBillions = 7.50;

}  // namespace covidnet::arch
