#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "covidnet/arch/model.hpp"

namespace covidnet::train {

/// Raised when a non-finite gradient, loss or parameter stops training.
class NumericalHalt : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment accumulators keyed by parameter name.
struct AdamState {
  AdamConfig config;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;

  /// Zero accumulators shaped like `params`.
  static AdamState zeros_like(const arch::ParameterStore& params, AdamConfig config = {});
  bool identical(const AdamState& other) const;
};

/// One bias-corrected Adam update at learning rate `lr`, in place.
/// `grads` must hold a tensor shaped like every parameter. A non-finite
/// gradient throws NumericalHalt naming the parameter before anything is
/// modified.
void adam_step(arch::ParameterStore& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, double lr);

}  // namespace covidnet::train
