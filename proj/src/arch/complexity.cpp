#include "covidnet/arch/complexity.hpp"

#include <cstdio>
#include <sstream>

namespace covidnet::arch {

ComplexityReport analyze(const ArchGraph& graph) {
  const ShapeMap shapes = graph.infer_shapes();
  ComplexityReport report;
  for (const std::string& id : graph.topological_order()) {
    const LayerNode& n = graph.node(id);
    LayerComplexity layer{id, 0, 0};
    if (n.kind == LayerKind::Conv) {
      const ConvSpec spec = graph.conv_spec(id, shapes);
      const ActivationShape& in = shapes.at(graph.merged_inputs(id).front());
      layer.params = spec.param_count(n.bias);
      layer.macs = spec.mac_count(in.height, in.width);
    } else if (n.kind == LayerKind::Dense) {
      const std::uint64_t in = shapes.at(graph.merged_inputs(id).front()).channels;
      layer.params = in * n.out_features + (n.bias ? n.out_features : 0);
      layer.macs = in * n.out_features;
    } else {
      continue;
    }
    report.total_params += layer.params;
    report.total_macs += layer.macs;
    report.layers.push_back(layer);
  }
  return report;
}

std::uint64_t count_params(const ArchGraph& graph) { return analyze(graph).total_params; }

std::uint64_t count_macs(const ArchGraph& graph, std::size_t channels, std::size_t height,
                         std::size_t width) {
  return analyze(graph.with_input_shape(channels, height, width)).total_macs;
}

std::string ComplexityReport::to_text() const {
  std::ostringstream out;
  for (const LayerComplexity& l : layers) {
    out << "layer " << l.id << " params=" << l.params << " macs=" << l.macs << '\n';
  }
  out << "total params=" << total_params << " macs=" << total_macs << '\n';
  char summary[96];
  std::snprintf(summary, sizeof summary, "summary params_M=%.4f macs_G=%.4f\n",
                static_cast<double>(total_params) / 1e6, static_cast<double>(total_macs) / 1e9);
  out << summary;
  return out.str();
}

}  // namespace covidnet::arch
