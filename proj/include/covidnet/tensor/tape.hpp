#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "covidnet/tensor/tensor.hpp"

namespace covidnet {

/// Maps the gradient of a node's output to gradients of its inputs, one entry
/// per input. An undefined tensor means "no contribution".
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

/// Records differentiable operations in execution order.
///
/// Recording order is a valid topological order because an operation can only
/// consume tensors that already exist. A tape is bound to the calling thread
/// through Tape::Scope; operations executed with no active tape, or whose
/// inputs do not require gradients, are not recorded.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* current();

  void record(std::string op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

/// Gradient map produced by backward(). Lookups of tensors that did not lie
/// on a path to the loss yield zeros of the matching shape.
class Gradients {
 public:
  Tensor operator[](const Tensor& t) const;
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

  void accumulate(const Tensor& key, const Tensor& grad);

 private:
  std::unordered_map<const void*, std::pair<Tensor, Tensor>> grads_;
};

/// Reverse-mode sweep over `tape` seeded with d(loss)/d(loss) = 1.
/// Throws std::invalid_argument if loss is not a scalar.
Gradients backward(const Tape& tape, const Tensor& loss);

namespace detail {

/// Marks `output` as requiring gradients and records it when a tape is active
/// and any input requires gradients.
void record(const char* op, std::vector<Tensor> inputs, Tensor& output, BackwardFn backward);

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace detail

}  // namespace covidnet
