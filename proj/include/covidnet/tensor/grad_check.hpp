#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "covidnet/tensor/tensor.hpp"

namespace covidnet {

using DifferentiableOp = std::function<Tensor(const std::vector<Tensor>& inputs)>;
using InputSampler = std::function<std::vector<Tensor>(std::mt19937_64& rng)>;

/// Compares reverse-mode gradients of `op` with central finite differences.
///
/// Inputs come from `sampler`; the op output is contracted with a random
/// projection drawn from the same generator so every output element
/// contributes. Each input element is perturbed by +/- eps. The discrepancy
/// per element is |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// with floor = 1e-6, and the maximum over all elements is returned.
///
/// Samplers are responsible for keeping inputs away from non-differentiable
/// points (ReLU kinks, pooling ties).
double grad_check(const DifferentiableOp& op, const InputSampler& sampler, double eps,
                  std::uint64_t seed);

inline constexpr double kGradCheckFloor = 1e-6;

}  // namespace covidnet
