#include "covidnet/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "covidnet/tensor/tape.hpp"

namespace covidnet::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                " input, got shape " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  auto o = out.mutable_values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  detail::record("add", {a, b}, out,
                 [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  auto o = out.mutable_values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  detail::record("mul", {a, b}, out, [a, b](const Tensor& g) {
    Tensor ga(a.shape()), gb(b.shape());
    auto gv = g.values();
    auto av = a.values();
    auto bv = b.values();
    auto gav = ga.mutable_values();
    auto gbv = gb.mutable_values();
    for (std::size_t i = 0; i < gv.size(); ++i) {
      gav[i] = gv[i] * bv[i];
      gbv[i] = gv[i] * av[i];
    }
    return std::vector<Tensor>{ga, gb};
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  detail::record("sum", {x}, out, [shape = x.shape()](const Tensor& g) {
    return std::vector<Tensor>{Tensor(shape, g.item())};
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  detail::record("relu", {x}, out, [x](const Tensor& g) {
    Tensor gx(x.shape());
    auto gxv = gx.mutable_values();
    auto gv = g.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < gxv.size(); ++i) gxv[i] = xv[i] > 0.0 ? gv[i] : 0.0;
    return std::vector<Tensor>{gx};
  });
  return out;
}

Tensor max_pool2d(const Tensor& x, std::size_t window, std::size_t stride) {
  require_rank("max_pool2d", x, 4);
  if (window == 0 || stride == 0) {
    throw std::invalid_argument("max_pool2d: window and stride must be positive");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < window || w < window) {
    throw std::invalid_argument("max_pool2d: window " + std::to_string(window) +
                                " exceeds spatial extent of " + shape_str(x.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  Tensor out({n, c, oh, ow});
  auto o = out.mutable_values();
  auto xv = x.values();
  std::vector<std::size_t> argmax(o.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = xv.data() + plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (i * stride) * w + j * stride;
        for (std::size_t di = 0; di < window; ++di) {
          for (std::size_t dj = 0; dj < window; ++dj) {
            std::size_t idx = (i * stride + di) * w + (j * stride + dj);
            if (src[idx] > src[best]) best = idx;
          }
        }
        std::size_t flat = plane * oh * ow + i * ow + j;
        o[flat] = src[best];
        argmax[flat] = plane * h * w + best;
      }
    }
  }
  detail::record("max_pool2d", {x}, out,
                 [shape = x.shape(), argmax = std::move(argmax)](const Tensor& g) {
                   Tensor gx(shape);
                   auto gxv = gx.mutable_values();
                   auto gv = g.values();
                   for (std::size_t i = 0; i < gv.size(); ++i) gxv[argmax[i]] += gv[i];
                   return std::vector<Tensor>{gx};
                 });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double total = 0.0;
    for (std::size_t k = 0; k < hw; ++k) total += xv[plane * hw + k];
    o[plane] = total / static_cast<double>(hw);
  }
  detail::record("global_avg_pool", {x}, out, [shape = x.shape(), hw](const Tensor& g) {
    Tensor gx(shape);
    auto gxv = gx.mutable_values();
    auto gv = g.values();
    const double scale = 1.0 / static_cast<double>(hw);
    for (std::size_t plane = 0; plane < gv.size(); ++plane) {
      std::fill_n(gxv.begin() + plane * hw, hw, gv[plane] * scale);
    }
    return std::vector<Tensor>{gx};
  });
  return out;
}

Tensor dense(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank("dense", x, 2);
  require_rank("dense", weights, 2);
  const std::size_t n = x.dim(0), in = x.dim(1), out_features = weights.dim(0);
  if (weights.dim(1) != in) {
    throw std::invalid_argument("dense: input feature dimension " + std::to_string(in) +
                                " does not match weight shape " + shape_str(weights.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{out_features}) {
    throw std::invalid_argument("dense: bias shape " + shape_str(bias.shape()) +
                                " does not match output features " + std::to_string(out_features));
  }
  Tensor out({n, out_features});
  {
    ConstMatrixMap xm(x.values().data(), n, in);
    ConstMatrixMap wm(weights.values().data(), out_features, in);
    MatrixMap om(out.mutable_values().data(), n, out_features);
    om.noalias() = xm * wm.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> bv(bias.values().data(), out_features);
      om.rowwise() += bv;
    }
  }
  std::vector<Tensor> inputs{x, weights};
  if (bias.defined()) inputs.push_back(bias);
  detail::record("dense", std::move(inputs), out,
                 [x, weights, has_bias = bias.defined(), n, in, out_features](const Tensor& g) {
                   ConstMatrixMap gm(g.values().data(), n, out_features);
                   std::vector<Tensor> grads;
                   if (x.requires_grad()) {
                     Tensor gx({n, in});
                     MatrixMap(gx.mutable_values().data(), n, in).noalias() =
                         gm * ConstMatrixMap(weights.values().data(), out_features, in);
                     grads.push_back(gx);
                   } else {
                     grads.emplace_back();
                   }
                   if (weights.requires_grad()) {
                     Tensor gw({out_features, in});
                     MatrixMap(gw.mutable_values().data(), out_features, in).noalias() =
                         gm.transpose() * ConstMatrixMap(x.values().data(), n, in);
                     grads.push_back(gw);
                   } else {
                     grads.emplace_back();
                   }
                   if (has_bias) {
                     Tensor gb({out_features});
                     Eigen::Map<Eigen::RowVectorXd>(gb.mutable_values().data(), out_features) =
                         gm.colwise().sum();
                     grads.push_back(gb);
                   }
                   return grads;
                 });
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  Tensor out(shape);
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * len * inner + b;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) peak = std::max(peak, xv[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        double e = std::exp(xv[base + k * inner] - peak);
        o[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) o[base + k * inner] /= total;
    }
  }
  detail::record("softmax", {x}, out, [out, outer, inner, len](const Tensor& g) {
    Tensor gx(out.shape());
    auto gxv = gx.mutable_values();
    auto gv = g.values();
    auto yv = out.values();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < inner; ++b) {
        const std::size_t base = a * len * inner + b;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += gv[base + k * inner] * yv[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          gxv[idx] = yv[idx] * (gv[idx] - dot);
        }
      }
    }
    return std::vector<Tensor>{gx};
  });
  return out;
}

Tensor cross_entropy(const Tensor& probs, std::span<const int> labels) {
  require_rank("cross_entropy", probs, 2);
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                  " at row " + std::to_string(i) + " outside [0," +
                                  std::to_string(k) + ")");
    }
  }
  auto pv = probs.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(pv[i * k + static_cast<std::size_t>(labels[i])], kProbabilityFloor, 1.0);
    total -= std::log(p);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  detail::record("cross_entropy", {probs}, out,
                 [probs, label_copy = std::vector<int>(labels.begin(), labels.end()), n, k](const Tensor& g) {
                   Tensor gp(probs.shape());
                   auto gpv = gp.mutable_values();
                   auto pv = probs.values();
                   const double scale = g.item() / static_cast<double>(n);
                   for (std::size_t i = 0; i < n; ++i) {
                     const std::size_t idx = i * k + static_cast<std::size_t>(label_copy[i]);
                     const double p = pv[idx];
                     // Clamped region has zero slope.
                     if (p > kProbabilityFloor && p <= 1.0) gpv[idx] = -scale / p;
                   }
                   return std::vector<Tensor>{gp};
                 });
  return out;
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Tensor& first = inputs.front();
  require_rank("concat_channels", first, 4);
  const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::size_t channels = 0;
  for (const Tensor& t : inputs) {
    require_rank("concat_channels", t, 4);
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
      throw std::invalid_argument("concat_channels: shape " + shape_str(t.shape()) +
                                  " incompatible with " + shape_str(first.shape()));
    }
    channels += t.dim(1);
  }
  const std::size_t hw = h * w;
  Tensor out({n, channels, h, w});
  auto o = out.mutable_values();
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& t : inputs) {
    offsets.push_back(offset);
    const std::size_t block = t.dim(1) * hw;
    auto tv = t.values();
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(tv.begin() + b * block, block, o.begin() + (b * channels * hw + offset * hw));
    }
    offset += t.dim(1);
  }
  std::vector<Tensor> parts(inputs.begin(), inputs.end());
  detail::record("concat_channels", parts, out,
                 [parts, offsets, n, channels, hw](const Tensor& g) {
                   std::vector<Tensor> grads;
                   auto gv = g.values();
                   for (std::size_t p = 0; p < parts.size(); ++p) {
                     Tensor gp(parts[p].shape());
                     auto gpv = gp.mutable_values();
                     const std::size_t block = parts[p].dim(1) * hw;
                     for (std::size_t b = 0; b < n; ++b) {
                       std::copy_n(gv.begin() + (b * channels * hw + offsets[p] * hw), block,
                                   gpv.begin() + b * block);
                     }
                     grads.push_back(gp);
                   }
                   return grads;
                 });
  return out;
}

}  // namespace covidnet::ops
