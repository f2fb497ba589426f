#include "covidnet/arch/graph.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <sstream>
#include <stdexcept>

namespace covidnet::arch {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

const char* to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::Data: return "data";
    case EdgeKind::LongRange: return "long_range";
    case EdgeKind::Residual: return "residual";
  }
  return "?";
}

std::string ActivationShape::str() const {
  std::ostringstream out;
  if (flat) {
    out << channels;
  } else {
    out << channels << 'x' << height << 'x' << width;
  }
  return out.str();
}

namespace {

[[noreturn]] void fail(const std::string& node, const std::string& message) {
  throw std::invalid_argument("node '" + node + "': " + message);
}

}  // namespace

void ArchGraph::add_node(LayerNode node) {
  if (node.id.empty()) throw std::invalid_argument("node id must be non-empty");
  if (index_.count(node.id)) throw std::invalid_argument("duplicate node id '" + node.id + "'");
  index_.emplace(node.id, nodes_.size());
  nodes_.push_back(std::move(node));
}

void ArchGraph::add_edge(const std::string& from, const std::string& to, EdgeKind kind) {
  index_of(from);
  index_of(to);
  if (from == to) fail(from, "self edge");
  for (const Edge& e : edges_) {
    if (e.from == from && e.to == to) {
      throw std::invalid_argument("duplicate edge " + from + " -> " + to);
    }
  }
  edges_.push_back(Edge{from, to, kind});
}

bool ArchGraph::remove_edge(const std::string& from, const std::string& to) {
  auto it = std::find_if(edges_.begin(), edges_.end(),
                         [&](const Edge& e) { return e.from == from && e.to == to; });
  if (it == edges_.end()) return false;
  edges_.erase(it);
  return true;
}

void ArchGraph::mark_hub(const std::string& id) {
  index_of(id);
  if (std::find(hubs_.begin(), hubs_.end(), id) == hubs_.end()) hubs_.push_back(id);
}

std::size_t ArchGraph::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::invalid_argument("unknown node '" + id + "'");
  return it->second;
}

const LayerNode& ArchGraph::node(const std::string& id) const { return nodes_[index_of(id)]; }

std::vector<std::string> ArchGraph::merged_inputs(const std::string& id) const {
  std::vector<std::string> out;
  for (const Edge& e : edges_) {
    if (e.to == id && e.kind != EdgeKind::Residual) out.push_back(e.from);
  }
  return out;
}

std::vector<std::string> ArchGraph::residual_inputs(const std::string& id) const {
  std::vector<std::string> out;
  for (const Edge& e : edges_) {
    if (e.to == id && e.kind == EdgeKind::Residual) out.push_back(e.from);
  }
  return out;
}

std::vector<std::string> ArchGraph::successors(const std::string& id) const {
  std::vector<std::string> out;
  for (const Edge& e : edges_) {
    if (e.from == id) out.push_back(e.to);
  }
  return out;
}

std::string ArchGraph::input_id() const {
  std::string found;
  for (const LayerNode& n : nodes_) {
    if (n.kind != LayerKind::Input) continue;
    if (!found.empty()) throw std::invalid_argument("graph has more than one input node");
    found = n.id;
  }
  if (found.empty()) throw std::invalid_argument("graph has no input node");
  return found;
}

std::string ArchGraph::output_id() const {
  std::set<std::string> has_successor;
  for (const Edge& e : edges_) has_successor.insert(e.from);
  std::string found;
  for (const LayerNode& n : nodes_) {
    if (has_successor.count(n.id)) continue;
    if (!found.empty()) {
      throw std::invalid_argument("graph has more than one output node ('" + found + "', '" +
                                  n.id + "')");
    }
    found = n.id;
  }
  if (found.empty()) throw std::invalid_argument("graph has no output node");
  return found;
}

std::vector<std::string> ArchGraph::topological_order() const {
  std::vector<std::size_t> pending(nodes_.size(), 0);
  for (const Edge& e : edges_) ++pending[index_of(e.to)];
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (pending[i] == 0) ready.push_back(i);
  }
  std::vector<std::string> order;
  order.reserve(nodes_.size());
  while (!ready.empty()) {
    const std::size_t i = ready.front();
    ready.pop_front();
    order.push_back(nodes_[i].id);
    for (const Edge& e : edges_) {
      if (e.from != nodes_[i].id) continue;
      const std::size_t j = index_of(e.to);
      if (--pending[j] == 0) ready.push_back(j);
    }
  }
  if (order.size() != nodes_.size()) throw std::invalid_argument("architecture graph has a cycle");
  return order;
}

ShapeMap ArchGraph::infer_shapes() const {
  ShapeMap shapes;
  for (const std::string& id : topological_order()) {
    const LayerNode& n = node(id);
    const std::vector<std::string> inputs = merged_inputs(id);
    const std::vector<std::string> residuals = residual_inputs(id);
    if (!residuals.empty() && n.kind != LayerKind::Conv) fail(id, "residual edges only feed convolutions");

    auto single_input = [&]() -> const ActivationShape& {
      if (inputs.size() != 1) {
        fail(id, std::string(to_string(n.kind)) + " expects one input, has " +
                     std::to_string(inputs.size()));
      }
      return shapes.at(inputs.front());
    };

    ActivationShape out;
    switch (n.kind) {
      case LayerKind::Input:
        if (!inputs.empty()) fail(id, "input node has incoming edges");
        if (n.channels == 0 || n.height == 0 || n.width == 0) fail(id, "input shape must be positive");
        out = {n.channels, n.height, n.width, false};
        break;
      case LayerKind::Conv: {
        const ConvSpec spec = conv_spec(id, shapes);
        const ActivationShape& first = shapes.at(inputs.front());
        try {
          out = {spec.out_channels, spec.out_h(first.height), spec.out_w(first.width), false};
        } catch (const std::invalid_argument& e) {
          fail(id, e.what());
        }
        for (const std::string& r : residuals) {
          if (!(shapes.at(r) == out)) {
            fail(id, "residual input '" + r + "' has shape " + shapes.at(r).str() +
                         ", convolution output is " + out.str());
          }
        }
        break;
      }
      case LayerKind::MaxPool: {
        const ActivationShape& in = single_input();
        if (in.flat) fail(id, "max pooling needs a spatial input");
        if (n.kernel == 0 || n.stride == 0) fail(id, "pool window and stride must be positive");
        if (in.height < n.kernel || in.width < n.kernel) {
          fail(id, "pool window " + std::to_string(n.kernel) + " exceeds input " + in.str());
        }
        out = {in.channels, (in.height - n.kernel) / n.stride + 1,
               (in.width - n.kernel) / n.stride + 1, false};
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const ActivationShape& in = single_input();
        if (in.flat) fail(id, "global pooling needs a spatial input");
        out = {in.channels, 1, 1, true};
        break;
      }
      case LayerKind::Dense: {
        const ActivationShape& in = single_input();
        if (!in.flat) fail(id, "dense layer needs a flat input, got " + in.str());
        if (n.out_features == 0) fail(id, "dense layer needs positive out_features");
        out = {n.out_features, 1, 1, true};
        break;
      }
      case LayerKind::Softmax: {
        const ActivationShape& in = single_input();
        if (!in.flat) fail(id, "softmax needs a flat input");
        out = in;
        break;
      }
    }
    shapes.emplace(id, out);
  }
  return shapes;
}

ConvSpec ArchGraph::conv_spec(const std::string& id, const ShapeMap& shapes) const {
  const LayerNode& n = node(id);
  if (n.kind != LayerKind::Conv) fail(id, "not a convolution");
  const std::vector<std::string> inputs = merged_inputs(id);
  if (inputs.empty()) fail(id, "convolution has no inputs");
  const ActivationShape& first = shapes.at(inputs.front());
  std::size_t in_channels = 0;
  for (const std::string& src : inputs) {
    const ActivationShape& s = shapes.at(src);
    if (s.flat) fail(id, "input '" + src + "' is flat");
    if (s.height != first.height || s.width != first.width) {
      fail(id, "cannot concatenate input '" + src + "' (" + s.str() + ") with '" + inputs.front() +
                   "' (" + first.str() + "): spatial extents differ");
    }
    in_channels += s.channels;
  }
  ConvSpec spec;
  spec.kernel_h = spec.kernel_w = n.kernel;
  spec.stride = n.stride;
  spec.padding = n.padding;
  spec.groups = n.groups;
  spec.in_channels = in_channels;
  spec.out_channels = n.out_channels;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    fail(id, e.what());
  }
  return spec;
}

void ArchGraph::validate() const {
  topological_order();
  input_id();
  const std::string out = output_id();
  const ShapeMap shapes = infer_shapes();
  const LayerNode& out_node = node(out);
  if (out_node.kind != LayerKind::Softmax || shapes.at(out).channels != kNumClasses) {
    fail(out, "output must be a softmax over " + std::to_string(kNumClasses) + " classes");
  }
  for (const std::string& hub : hubs_) {
    const LayerNode& h = node(hub);
    if (h.kind != LayerKind::Conv || h.kernel != 1) fail(hub, "hub must be a 1x1 convolution");
    std::set<int> stages;
    for (const Edge& e : edges_) {
      if (e.to == hub) stages.insert(node(e.from).stage);
    }
    if (stages.size() < 2) fail(hub, "hub must receive edges from at least two distinct stages");
  }
}

ArchGraph ArchGraph::with_input_shape(std::size_t channels, std::size_t height,
                                      std::size_t width) const {
  ArchGraph copy = *this;
  LayerNode& in = copy.nodes_[copy.index_of(input_id())];
  in.channels = channels;
  in.height = height;
  in.width = width;
  return copy;
}

ArchGraph ArchGraph::with_node_order(const std::vector<std::size_t>& order) const {
  if (order.size() != nodes_.size()) throw std::invalid_argument("node order has wrong length");
  ArchGraph copy;
  for (std::size_t i : order) copy.add_node(nodes_.at(i));
  copy.edges_ = edges_;
  copy.hubs_ = hubs_;
  return copy;
}

std::string ArchGraph::describe() const {
  const ShapeMap shapes = infer_shapes();
  std::ostringstream out;
  out << "covidnet-arch 1\n";
  for (const std::string& id : topological_order()) {
    const LayerNode& n = node(id);
    out << "node " << id << " kind=" << to_string(n.kind) << " stage=" << n.stage;
    if (!n.role.empty()) out << " role=" << n.role;
    switch (n.kind) {
      case LayerKind::Conv: {
        const ConvSpec spec = conv_spec(id, shapes);
        out << " kernel=" << n.kernel << 'x' << n.kernel << " stride=" << n.stride
            << " pad=" << n.padding << " groups=" << n.groups << " in=" << spec.in_channels
            << " out=" << n.out_channels << " bias=" << (n.bias ? 1 : 0)
            << " relu=" << (n.relu ? 1 : 0);
        break;
      }
      case LayerKind::MaxPool:
        out << " window=" << n.kernel << " stride=" << n.stride;
        break;
      case LayerKind::Dense:
        out << " in=" << shapes.at(merged_inputs(id).front()).channels << " out=" << n.out_features
            << " bias=" << (n.bias ? 1 : 0) << " relu=" << (n.relu ? 1 : 0);
        break;
      default:
        break;
    }
    if (std::find(hubs_.begin(), hubs_.end(), id) != hubs_.end()) out << " hub=1";
    out << " shape=" << shapes.at(id).str() << '\n';
  }
  for (const Edge& e : edges_) {
    out << "edge " << e.from << ' ' << e.to << ' ' << to_string(e.kind) << '\n';
  }
  return out.str();
}

}  // namespace covidnet::arch
