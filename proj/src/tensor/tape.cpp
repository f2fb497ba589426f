#include "covidnet/tensor/tape.hpp"

#include <stdexcept>

namespace covidnet {

namespace {
thread_local Tape* active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

Tape::Scope::~Scope() { active_tape = previous_; }

Tape* Tape::current() { return active_tape; }

void Tape::record(std::string op, std::vector<Tensor> inputs, Tensor output,
                  BackwardFn backward) {
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

Tensor Gradients::operator[](const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros_like(t);
  return it->second.second;
}

void Gradients::accumulate(const Tensor& key, const Tensor& grad) {
  if (grad.shape() != key.shape()) {
    throw std::logic_error("gradient shape " + shape_str(grad.shape()) +
                           " does not match tensor shape " + shape_str(key.shape()));
  }
  auto it = grads_.find(key.id());
  if (it == grads_.end()) {
    // Own a private copy so later accumulation never aliases op results.
    grads_.emplace(key.id(), std::make_pair(key, grad.clone()));
    return;
  }
  auto dst = it->second.second.mutable_values();
  auto src = grad.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Gradients backward(const Tape& tape, const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Gradients grads;
  grads.accumulate(loss, Tensor(loss.shape(), 1.0));

  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (!grads.contains(it->output)) continue;
    std::vector<Tensor> input_grads = it->backward(grads[it->output]);
    if (input_grads.size() != it->inputs.size()) {
      throw std::logic_error("backward rule of '" + it->op + "' returned " +
                             std::to_string(input_grads.size()) + " gradients for " +
                             std::to_string(it->inputs.size()) + " inputs");
    }
    for (std::size_t i = 0; i < input_grads.size(); ++i) {
      if (input_grads[i].defined() && it->inputs[i].requires_grad()) {
        grads.accumulate(it->inputs[i], input_grads[i]);
      }
    }
  }
  return grads;
}

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

void record(const char* op, std::vector<Tensor> inputs, Tensor& output, BackwardFn backward) {
  Tape* tape = Tape::current();
  if (!tape) return;
  bool needed = false;
  for (const Tensor& t : inputs) needed = needed || t.requires_grad();
  if (!needed) return;
  output.set_requires_grad(true);
  tape->record(op, std::move(inputs), output, std::move(backward));
}

}  // namespace detail

}  // namespace covidnet
