#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "covidnet/arch/graph.hpp"
#include "covidnet/tensor/tensor.hpp"

namespace covidnet::arch {

/// Named trainable tensors, `<node>.weight` and `<node>.bias`, iterated in
/// name order.
class ParameterStore {
 public:
  void set(const std::string& name, Tensor value) { entries_[name] = std::move(value); }
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  ParameterStore clone() const;
  void set_requires_grad(bool flag);
  /// Same names, shapes and bitwise-equal values.
  bool identical(const ParameterStore& other) const;

 private:
  std::map<std::string, Tensor> entries_;
};

std::string weight_name(const std::string& node_id);
std::string bias_name(const std::string& node_id);

/// Kaiming fan-in initialization: weights ~ N(0, 2 / fan_in), biases zero.
ParameterStore init_parameters(const ArchGraph& graph, std::uint64_t seed);

/// Evaluates the graph on an [N, C, H, W] batch in topological order and
/// returns the [N, 3] output distribution. Multi-input nodes concatenate
/// their inputs along channels; residual inputs are added after the
/// convolution. Errors name the offending node.
Tensor forward(const ArchGraph& graph, const ParameterStore& params, const Tensor& input);

}  // namespace covidnet::arch
