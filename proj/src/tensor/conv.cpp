#include "covidnet/tensor/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "covidnet/tensor/tape.hpp"

namespace covidnet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

struct Geometry {
  std::size_t n, h, w, oh, ow;
  std::size_t cin_g, cout_g;
  std::size_t k;  // rows of the lowered patch matrix: cin_g * kernel_h * kernel_w
};

bool is_plain_pointwise(const ConvSpec& s) {
  return s.kernel_h == 1 && s.kernel_w == 1 && s.stride == 1 && s.padding == 0;
}

bool is_channelwise(const ConvSpec& s) {
  return s.in_channels == s.groups && s.out_channels == s.groups;
}

// Lowers one group of one image into a [cin_g * kh * kw, oh * ow] patch matrix.
void im2col(const double* src, const ConvSpec& s, const Geometry& g, double* col) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t c = 0; c < g.cin_g; ++c) {
    const double* plane = src + c * g.h * g.w;
    for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
        double* row = col + ((c * s.kernel_h + ki) * s.kernel_w + kj) * cols;
        for (std::size_t i = 0; i < g.oh; ++i) {
          const long y = static_cast<long>(i * s.stride + ki) - static_cast<long>(s.padding);
          for (std::size_t j = 0; j < g.ow; ++j) {
            const long x = static_cast<long>(j * s.stride + kj) - static_cast<long>(s.padding);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.h) &&
                                x < static_cast<long>(g.w);
            row[i * g.ow + j] = inside ? plane[y * static_cast<long>(g.w) + x] : 0.0;
          }
        }
      }
    }
  }
}

// Scatters a patch-matrix gradient back onto one group of one image.
void col2im(const double* col, const ConvSpec& s, const Geometry& g, double* dst) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t c = 0; c < g.cin_g; ++c) {
    double* plane = dst + c * g.h * g.w;
    for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
        const double* row = col + ((c * s.kernel_h + ki) * s.kernel_w + kj) * cols;
        for (std::size_t i = 0; i < g.oh; ++i) {
          const long y = static_cast<long>(i * s.stride + ki) - static_cast<long>(s.padding);
          if (y < 0 || y >= static_cast<long>(g.h)) continue;
          for (std::size_t j = 0; j < g.ow; ++j) {
            const long x = static_cast<long>(j * s.stride + kj) - static_cast<long>(s.padding);
            if (x < 0 || x >= static_cast<long>(g.w)) continue;
            plane[y * static_cast<long>(g.w) + x] += row[i * g.ow + j];
          }
        }
      }
    }
  }
}

// Valid output index range [lo, hi) for kernel tap `tap` so that the source
// coordinate i * stride + tap - padding stays inside [0, extent).
struct TapRange {
  std::size_t lo, hi;
};

TapRange tap_range(std::size_t tap, std::size_t padding, std::size_t stride, std::size_t extent,
                   std::size_t out_extent) {
  const long t = static_cast<long>(tap) - static_cast<long>(padding);
  const long s = static_cast<long>(stride);
  long lo = t >= 0 ? 0 : (-t + s - 1) / s;
  long hi = (static_cast<long>(extent) - 1 - t);
  hi = hi < 0 ? 0 : hi / s + 1;
  lo = std::min<long>(lo, static_cast<long>(out_extent));
  hi = std::min<long>(std::max(hi, lo), static_cast<long>(out_extent));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// One input plane filtered by one kernel into one output plane. Loops run
// tap-major so the innermost loop is a contiguous multiply-add.
void channelwise_forward(const double* src, const double* kernel, const ConvSpec& s,
                         const Geometry& g, double* dst) {
  for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
    const TapRange rows = tap_range(ki, s.padding, s.stride, g.h, g.oh);
    for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
      const TapRange cols = tap_range(kj, s.padding, s.stride, g.w, g.ow);
      const double k = kernel[ki * s.kernel_w + kj];
      const long shift = static_cast<long>(kj) - static_cast<long>(s.padding);
      for (std::size_t i = rows.lo; i < rows.hi; ++i) {
        const double* in_row = src + (i * s.stride + ki - s.padding) * g.w;
        double* out_row = dst + i * g.ow;
        if (s.stride == 1) {
          for (std::size_t j = cols.lo; j < cols.hi; ++j) out_row[j] += k * in_row[static_cast<long>(j) + shift];
        } else {
          for (std::size_t j = cols.lo; j < cols.hi; ++j) {
            out_row[j] += k * in_row[static_cast<long>(j * s.stride) + shift];
          }
        }
      }
    }
  }
}

void channelwise_backward(const double* src, const double* kernel, const double* grad_out,
                          const ConvSpec& s, const Geometry& g, double* grad_src,
                          double* grad_kernel) {
  for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
    const TapRange rows = tap_range(ki, s.padding, s.stride, g.h, g.oh);
    for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
      const TapRange cols = tap_range(kj, s.padding, s.stride, g.w, g.ow);
      const double k = kernel[ki * s.kernel_w + kj];
      const long shift = static_cast<long>(kj) - static_cast<long>(s.padding);
      double k_grad = 0.0;
      for (std::size_t i = rows.lo; i < rows.hi; ++i) {
        const std::size_t row_offset = (i * s.stride + ki - s.padding) * g.w;
        const double* go_row = grad_out + i * g.ow;
        const double* in_row = src + row_offset;
        if (s.stride == 1) {
          if (grad_src) {
            double* gin = grad_src + row_offset + shift;
            for (std::size_t j = cols.lo; j < cols.hi; ++j) gin[j] += k * go_row[j];
          }
          if (grad_kernel) {
            const double* in = in_row + shift;
            for (std::size_t j = cols.lo; j < cols.hi; ++j) k_grad += go_row[j] * in[j];
          }
          continue;
        }
        if (grad_src) {
          double* gin_row = grad_src + row_offset;
          for (std::size_t j = cols.lo; j < cols.hi; ++j) {
            gin_row[static_cast<long>(j * s.stride) + shift] += k * go_row[j];
          }
        }
        if (grad_kernel) {
          for (std::size_t j = cols.lo; j < cols.hi; ++j) {
            k_grad += go_row[j] * in_row[static_cast<long>(j * s.stride) + shift];
          }
        }
      }
      if (grad_kernel) grad_kernel[ki * s.kernel_w + kj] += k_grad;
    }
  }
}

Geometry check_inputs(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const ConvSpec& spec) {
  spec.validate();
  if (input.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  }
  if (input.dim(1) != spec.in_channels) {
    throw std::invalid_argument("conv2d: input channel dimension (axis 1) is " +
                                std::to_string(input.dim(1)) + ", spec expects " +
                                std::to_string(spec.in_channels));
  }
  const Shape expected = spec.weight_shape();
  if (weights.rank() != 4) {
    throw std::invalid_argument("conv2d: weights must be rank 4 " + shape_str(expected) + ", got " +
                                shape_str(weights.shape()));
  }
  static const char* const kWeightAxes[] = {"out_channels", "in_channels/groups", "kernel_h",
                                            "kernel_w"};
  for (std::size_t axis = 0; axis < 4; ++axis) {
    if (weights.dim(axis) != expected[axis]) {
      throw std::invalid_argument("conv2d: weight dimension " + std::to_string(axis) + " (" +
                                  kWeightAxes[axis] + ") is " + std::to_string(weights.dim(axis)) +
                                  ", expected " + std::to_string(expected[axis]));
    }
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) + " != [" +
                                std::to_string(spec.out_channels) + "]");
  }
  Geometry g{};
  g.n = input.dim(0);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.oh = spec.out_h(g.h);
  g.ow = spec.out_w(g.w);
  g.cin_g = spec.in_channels / spec.groups;
  g.cout_g = spec.out_channels / spec.groups;
  g.k = g.cin_g * spec.kernel_h * spec.kernel_w;
  return g;
}

}  // namespace

ConvSpec ConvSpec::pointwise(std::size_t in, std::size_t out) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

ConvSpec ConvSpec::depthwise(std::size_t channels, std::size_t kernel, std::size_t stride) {
  ConvSpec s;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = kernel / 2;
  s.groups = s.in_channels = s.out_channels = channels;
  return s;
}

void ConvSpec::validate() const {
  if (kernel_h == 0 || kernel_w == 0) throw std::invalid_argument("conv: kernel size must be positive");
  if (stride == 0) throw std::invalid_argument("conv: stride must be positive");
  if (groups == 0) throw std::invalid_argument("conv: groups must be positive");
  if (in_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("conv: channel counts must be positive");
  }
  if (in_channels % groups != 0) {
    throw std::invalid_argument("conv: in_channels " + std::to_string(in_channels) +
                                " not divisible by groups " + std::to_string(groups));
  }
  if (out_channels % groups != 0) {
    throw std::invalid_argument("conv: out_channels " + std::to_string(out_channels) +
                                " not divisible by groups " + std::to_string(groups));
  }
}

std::size_t ConvSpec::out_extent(std::size_t in_extent, std::size_t kernel) const {
  if (in_extent + 2 * padding < kernel) {
    throw std::invalid_argument("conv: padded extent " + std::to_string(in_extent + 2 * padding) +
                                " smaller than kernel " + std::to_string(kernel));
  }
  return (in_extent + 2 * padding - kernel) / stride + 1;
}

Shape ConvSpec::weight_shape() const {
  return {out_channels, in_channels / groups, kernel_h, kernel_w};
}

std::size_t ConvSpec::param_count(bool with_bias) const {
  return shape_numel(weight_shape()) + (with_bias ? out_channels : 0);
}

std::size_t ConvSpec::mac_count(std::size_t in_h, std::size_t in_w) const {
  return kernel_h * kernel_w * (in_channels / groups) * out_channels * out_h(in_h) * out_w(in_w);
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
  const Geometry g = check_inputs(input, weights, bias, spec);
  const std::size_t in_plane = g.h * g.w;
  const std::size_t out_plane = g.oh * g.ow;
  Tensor out({g.n, spec.out_channels, g.oh, g.ow});
  auto o = out.mutable_values();
  auto xv = input.values();
  auto wv = weights.values();

  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t b = 0; b < g.n; ++b) {
      for (std::size_t c = 0; c < spec.out_channels; ++c) {
        std::fill_n(o.begin() + (b * spec.out_channels + c) * out_plane, out_plane, bv[c]);
      }
    }
  }

  const bool pointwise = is_plain_pointwise(spec);
  const bool channelwise = !pointwise && is_channelwise(spec);
  AlignedVector col(pointwise || channelwise ? 0 : g.k * out_plane);

  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t grp = 0; grp < spec.groups; ++grp) {
      const double* src = xv.data() + (b * spec.in_channels + grp * g.cin_g) * in_plane;
      double* dst = o.data() + (b * spec.out_channels + grp * g.cout_g) * out_plane;
      const double* kernel = wv.data() + grp * g.cout_g * g.k;
      if (channelwise) {
        channelwise_forward(src, kernel, spec, g, dst);
        continue;
      }
      const double* patches = src;
      if (!pointwise) {
        im2col(src, spec, g, col.data());
        patches = col.data();
      }
      MatrixMap(dst, g.cout_g, out_plane).noalias() +=
          ConstMatrixMap(kernel, g.cout_g, g.k) * ConstMatrixMap(patches, g.k, out_plane);
    }
  }

  std::vector<Tensor> inputs{input, weights};
  if (bias.defined()) inputs.push_back(bias);
  detail::record(
      "conv2d", std::move(inputs), out,
      [input, weights, has_bias = bias.defined(), spec, g, pointwise, channelwise](const Tensor& grad) {
        const std::size_t in_plane = g.h * g.w;
        const std::size_t out_plane = g.oh * g.ow;
        const bool want_input = input.requires_grad();
        const bool want_weights = weights.requires_grad();
        auto gv = grad.values();
        auto xv = input.values();
        auto wv = weights.values();

        Tensor gx, gw;
        double* gxp = nullptr;
        double* gwp = nullptr;
        if (want_input) {
          gx = Tensor(input.shape());
          gxp = gx.mutable_values().data();
        }
        if (want_weights) {
          gw = Tensor(weights.shape());
          gwp = gw.mutable_values().data();
        }
        AlignedVector col(pointwise || channelwise ? 0 : g.k * out_plane);
        AlignedVector grad_col(col.size());

        for (std::size_t b = 0; b < g.n; ++b) {
          for (std::size_t grp = 0; grp < spec.groups; ++grp) {
            const std::size_t in_off = (b * spec.in_channels + grp * g.cin_g) * in_plane;
            const double* src = xv.data() + in_off;
            const double* go = gv.data() + (b * spec.out_channels + grp * g.cout_g) * out_plane;
            const std::size_t w_off = grp * g.cout_g * g.k;
            const double* kernel = wv.data() + w_off;
            if (channelwise) {
              channelwise_backward(src, kernel, go, spec, g, gxp ? gxp + in_off : nullptr,
                                   gwp ? gwp + w_off : nullptr);
              continue;
            }
            ConstMatrixMap go_m(go, g.cout_g, out_plane);
            ConstMatrixMap kernel_m(kernel, g.cout_g, g.k);
            if (pointwise) {
              if (want_weights) {
                MatrixMap(gwp + w_off, g.cout_g, g.k).noalias() +=
                    go_m * ConstMatrixMap(src, g.k, out_plane).transpose();
              }
              if (want_input) {
                MatrixMap(gxp + in_off, g.k, out_plane).noalias() += kernel_m.transpose() * go_m;
              }
              continue;
            }
            if (want_weights) {
              im2col(src, spec, g, col.data());
              MatrixMap(gwp + w_off, g.cout_g, g.k).noalias() +=
                  go_m * ConstMatrixMap(col.data(), g.k, out_plane).transpose();
            }
            if (want_input) {
              MatrixMap(grad_col.data(), g.k, out_plane).noalias() = kernel_m.transpose() * go_m;
              col2im(grad_col.data(), spec, g, gxp + in_off);
            }
          }
        }

        std::vector<Tensor> grads{gx, gw};
        if (has_bias) {
          Tensor gb({spec.out_channels});
          auto gbv = gb.mutable_values();
          for (std::size_t b = 0; b < g.n; ++b) {
            for (std::size_t c = 0; c < spec.out_channels; ++c) {
              const double* plane = gv.data() + (b * spec.out_channels + c) * out_plane;
              double acc = 0.0;
              for (std::size_t k = 0; k < out_plane; ++k) acc += plane[k];
              gbv[c] += acc;
            }
          }
          grads.push_back(gb);
        }
        return grads;
      });
  return out;
}

}  // namespace covidnet
