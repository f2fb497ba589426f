#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "covidnet/tensor/aligned.hpp"

namespace covidnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major n-dimensional array of doubles.
///
/// Copies share storage. Operations never modify their inputs; the only
/// in-place writers are code paths that own a freshly created tensor
/// (constructors, initializers, optimizers updating leaf parameters).
/// A rank-0 shape denotes a scalar holding one value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double at(std::size_t flat_index) const { return values()[flat_index]; }
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  /// Deep copy with requires_grad cleared.
  Tensor clone() const;

  /// Stable identity of the underlying storage; used to key gradients.
  const void* id() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  /// Bitwise equality of shape and data.
  bool identical(const Tensor& other) const;

 private:
  struct Impl {
    Shape shape;
    AlignedVector data;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

}  // namespace covidnet
