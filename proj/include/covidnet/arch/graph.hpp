#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "covidnet/tensor/conv.hpp"

namespace covidnet::arch {

enum class LayerKind { Input, Conv, MaxPool, GlobalAvgPool, Dense, Softmax };
enum class EdgeKind { Data, LongRange, Residual };

const char* to_string(LayerKind kind);
const char* to_string(EdgeKind kind);

/// One vertex of the architecture graph. Only the fields relevant to `kind`
/// are meaningful; input channel counts of convolutions are not stored but
/// inferred from incoming edges, so rewiring a hub changes its width.
struct LayerNode {
  std::string id;
  LayerKind kind = LayerKind::Conv;
  int stage = 0;
  std::string role;

  // Input
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  // Conv, MaxPool
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool bias = true;

  // Dense
  std::size_t out_features = 0;

  // Conv, Dense: activation applied after any residual addition.
  bool relu = false;
};

struct Edge {
  std::string from;
  std::string to;
  EdgeKind kind = EdgeKind::Data;
};

/// Inferred activation geometry. Flat tensors ([N, features]) use `channels`
/// for the feature count.
struct ActivationShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool flat = false;

  bool operator==(const ActivationShape&) const = default;
  std::string str() const;
};

using ShapeMap = std::map<std::string, ActivationShape>;

/// Directed acyclic layer graph.
///
/// Data and LongRange edges into a node are concatenated along channels in
/// edge insertion order before the node's operation; Residual edges are added
/// to a convolution's output before its activation.
class ArchGraph {
 public:
  void add_node(LayerNode node);
  void add_edge(const std::string& from, const std::string& to, EdgeKind kind = EdgeKind::Data);
  /// Returns false when no such edge exists.
  bool remove_edge(const std::string& from, const std::string& to);
  void mark_hub(const std::string& id);

  bool has_node(const std::string& id) const { return index_.count(id) != 0; }
  const LayerNode& node(const std::string& id) const;
  const std::vector<LayerNode>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::string>& hubs() const { return hubs_; }

  /// Concatenated (Data + LongRange) inputs of `id`, in edge order.
  std::vector<std::string> merged_inputs(const std::string& id) const;
  std::vector<std::string> residual_inputs(const std::string& id) const;
  std::vector<std::string> successors(const std::string& id) const;

  std::string input_id() const;
  std::string output_id() const;

  /// Kahn ordering; throws std::invalid_argument on a cycle.
  std::vector<std::string> topological_order() const;

  /// Propagates shapes from the input node. Throws std::invalid_argument
  /// naming the node whose inputs are inconsistent.
  ShapeMap infer_shapes() const;

  /// Convolution geometry of a Conv node given inferred shapes.
  ConvSpec conv_spec(const std::string& id, const ShapeMap& shapes) const;

  /// Full structural check: acyclic, one input, one output producing a 3-way
  /// distribution, every hub fed from at least two distinct stages.
  void validate() const;

  /// Returns a copy whose input node has the given geometry.
  ArchGraph with_input_shape(std::size_t channels, std::size_t height, std::size_t width) const;

  /// Same graph with nodes stored in the given order (a permutation of
  /// 0..size-1). Edges and hubs are unchanged.
  ArchGraph with_node_order(const std::vector<std::size_t>& order) const;

  /// Line-oriented dump: a header line, one `node` line per node in
  /// topological order, then one `edge` line per edge in insertion order.
  std::string describe() const;

 private:
  std::size_t index_of(const std::string& id) const;

  std::vector<LayerNode> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::string> hubs_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr std::size_t kNumClasses = 3;

}  // namespace covidnet::arch
