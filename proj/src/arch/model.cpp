#include "covidnet/arch/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "covidnet/tensor/conv.hpp"
#include "covidnet/tensor/ops.hpp"

namespace covidnet::arch {

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("missing parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore copy;
  for (const auto& [name, t] : entries_) copy.set(name, t.clone());
  return copy;
}

void ParameterStore::set_requires_grad(bool flag) {
  for (auto& [name, t] : entries_) t.set_requires_grad(flag);
}

bool ParameterStore::identical(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (const auto& [name, t] : entries_) {
    auto it = other.entries_.find(name);
    if (it == other.entries_.end() || !t.identical(it->second)) return false;
  }
  return true;
}

std::string weight_name(const std::string& node_id) { return node_id + ".weight"; }
std::string bias_name(const std::string& node_id) { return node_id + ".bias"; }

ParameterStore init_parameters(const ArchGraph& graph, std::uint64_t seed) {
  const ShapeMap shapes = graph.infer_shapes();
  std::map<std::string, const LayerNode*> by_id;
  for (const LayerNode& n : graph.nodes()) by_id.emplace(n.id, &n);

  std::mt19937_64 rng(seed);
  ParameterStore params;
  for (const auto& [id, node] : by_id) {
    Shape weight_shape;
    std::size_t fan_in = 0;
    std::size_t bias_len = 0;
    if (node->kind == LayerKind::Conv) {
      const ConvSpec spec = graph.conv_spec(id, shapes);
      weight_shape = spec.weight_shape();
      fan_in = weight_shape[1] * weight_shape[2] * weight_shape[3];
      bias_len = spec.out_channels;
    } else if (node->kind == LayerKind::Dense) {
      const std::size_t in = shapes.at(graph.merged_inputs(id).front()).channels;
      weight_shape = {node->out_features, in};
      fan_in = in;
      bias_len = node->out_features;
    } else {
      continue;
    }
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> w(shape_numel(weight_shape));
    for (double& v : w) v = dist(rng);
    params.set(weight_name(id), Tensor(weight_shape, std::move(w)));
    if (node->bias) params.set(bias_name(id), Tensor({bias_len}, 0.0));
  }
  return params;
}

Tensor forward(const ArchGraph& graph, const ParameterStore& params, const Tensor& input) {
  const ShapeMap shapes = graph.infer_shapes();
  const std::vector<std::string> order = graph.topological_order();
  const std::string input_id = graph.input_id();
  const ActivationShape& expected = shapes.at(input_id);
  if (input.rank() != 4 || input.dim(1) != expected.channels || input.dim(2) != expected.height ||
      input.dim(3) != expected.width) {
    throw std::invalid_argument("node '" + input_id + "': expected [N," + std::to_string(expected.channels) +
                                "," + std::to_string(expected.height) + "," +
                                std::to_string(expected.width) + "] input, got " +
                                shape_str(input.shape()));
  }

  std::map<std::string, std::size_t> remaining;
  for (const Edge& e : graph.edges()) ++remaining[e.from];
  std::map<std::string, Tensor> acts;
  auto take = [&](const std::string& id) {
    Tensor t = acts.at(id);
    if (--remaining[id] == 0) acts.erase(id);
    return t;
  };

  const std::string output_id = graph.output_id();
  for (const std::string& id : order) {
    const LayerNode& n = graph.node(id);
    Tensor out;
    try {
      switch (n.kind) {
        case LayerKind::Input:
          out = input;
          break;
        case LayerKind::Conv: {
          const ConvSpec spec = graph.conv_spec(id, shapes);
          std::vector<Tensor> parts;
          for (const std::string& src : graph.merged_inputs(id)) parts.push_back(take(src));
          Tensor x = parts.size() == 1 ? parts.front() : ops::concat_channels(parts);
          const Tensor bias = n.bias ? params.at(bias_name(id)) : Tensor();
          out = conv2d(x, params.at(weight_name(id)), bias, spec);
          for (const std::string& src : graph.residual_inputs(id)) out = ops::add(out, take(src));
          if (n.relu) out = ops::relu(out);
          break;
        }
        case LayerKind::MaxPool:
          out = ops::max_pool2d(take(graph.merged_inputs(id).front()), n.kernel, n.stride);
          break;
        case LayerKind::GlobalAvgPool:
          out = ops::global_avg_pool(take(graph.merged_inputs(id).front()));
          break;
        case LayerKind::Dense: {
          const Tensor bias = n.bias ? params.at(bias_name(id)) : Tensor();
          out = ops::dense(take(graph.merged_inputs(id).front()), params.at(weight_name(id)), bias);
          if (n.relu) out = ops::relu(out);
          break;
        }
        case LayerKind::Softmax:
          out = ops::softmax(take(graph.merged_inputs(id).front()), 1);
          break;
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("node '" + id + "': " + e.what());
    }
    if (id == output_id) return out;
    acts.emplace(id, std::move(out));
  }
  throw std::logic_error("output node was not evaluated");
}

}  // namespace covidnet::arch
