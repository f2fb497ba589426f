#include "covidnet/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "covidnet/tensor/ops.hpp"
#include "covidnet/tensor/tape.hpp"

namespace covidnet {

namespace {

double projected(const DifferentiableOp& op, const std::vector<Tensor>& inputs,
                 const Tensor& projection) {
  Tensor out = op(inputs);
  auto ov = out.values();
  auto pv = projection.values();
  double total = 0.0;
  for (std::size_t i = 0; i < ov.size(); ++i) total += ov[i] * pv[i];
  return total;
}

}  // namespace

double grad_check(const DifferentiableOp& op, const InputSampler& sampler, double eps,
                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> inputs = sampler(rng);
  for (Tensor& t : inputs) t.set_requires_grad(true);

  Tape tape;
  Tensor projection;
  Gradients grads;
  {
    Tape::Scope scope(tape);
    Tensor out = op(inputs);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> weights(out.numel());
    for (double& w : weights) w = unit(rng);
    projection = Tensor(out.shape(), std::move(weights));
    Tensor loss = ops::sum(ops::mul(out, projection));
    grads = backward(tape, loss);
  }

  double worst = 0.0;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const Tensor analytic = grads[inputs[which]];
    auto av = analytic.values();
    for (std::size_t i = 0; i < inputs[which].numel(); ++i) {
      std::vector<Tensor> shifted = inputs;
      Tensor plus = inputs[which].clone();
      plus.mutable_values()[i] += eps;
      shifted[which] = plus;
      const double f_plus = projected(op, shifted, projection);
      Tensor minus = inputs[which].clone();
      minus.mutable_values()[i] -= eps;
      shifted[which] = minus;
      const double f_minus = projected(op, shifted, projection);
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double scale = std::max({std::abs(av[i]), std::abs(numeric), kGradCheckFloor});
      const double err = std::abs(av[i] - numeric) / scale;
      if (!(err <= worst)) worst = std::isnan(err) ? INFINITY : err;
    }
  }
  return worst;
}

}  // namespace covidnet
