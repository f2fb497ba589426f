#include "covidnet/train/optim.hpp"

#include <cmath>

namespace covidnet::train {

AdamState AdamState::zeros_like(const arch::ParameterStore& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& [name, t] : params.entries()) {
    s.m[name] = Tensor(t.shape());
    s.v[name] = Tensor(t.shape());
  }
  return s;
}

bool AdamState::identical(const AdamState& other) const {
  auto same = [](const std::map<std::string, Tensor>& a, const std::map<std::string, Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
      if (ia->first != ib->first || !ia->second.identical(ib->second)) return false;
    }
    return true;
  };
  return step == other.step && config.beta1 == other.config.beta1 &&
         config.beta2 == other.config.beta2 && config.epsilon == other.config.epsilon &&
         same(m, other.m) && same(v, other.v);
}

void adam_step(arch::ParameterStore& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, double lr) {
  for (const auto& [name, p] : params.entries()) {
    const auto g = grads.find(name);
    if (g == grads.end()) throw std::invalid_argument("adam_step: no gradient for '" + name + "'");
    if (g->second.shape() != p.shape()) {
      throw std::invalid_argument("adam_step: gradient for '" + name + "' has shape " +
                                  shape_str(g->second.shape()) + ", parameter has " +
                                  shape_str(p.shape()));
    }
    if (!state.m.count(name) || state.m.at(name).shape() != p.shape() ||
        state.v.at(name).shape() != p.shape()) {
      throw std::invalid_argument("adam_step: optimizer state does not match parameter '" + name + "'");
    }
    for (double x : g->second.values()) {
      if (!std::isfinite(x)) throw NumericalHalt("non-finite gradient for parameter '" + name + "'");
    }
  }

  ++state.step;
  const double b1 = state.config.beta1, b2 = state.config.beta2, eps = state.config.epsilon;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (const auto& [name, stored] : params.entries()) {
    Tensor p = stored;
    const auto g = grads.at(name).values();
    auto m = state.m.at(name).mutable_values();
    auto v = state.v.at(name).mutable_values();
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace covidnet::train
