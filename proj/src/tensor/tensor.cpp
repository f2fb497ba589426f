#include "covidnet/tensor/tensor.hpp"

#include <cstring>
#include <sstream>
#include <stdexcept>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace covidnet {

#ifdef __GLIBC__
namespace {
// Activation buffers are allocated and freed many times per batch. Keep
// them on the heap instead of mapping and unmapping pages each time.
[[maybe_unused]] const bool kHeapTuned = mallopt(M_MMAP_THRESHOLD, 256 << 20) && mallopt(M_TRIM_THRESHOLD, 512 << 20);
}  // namespace
#endif

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw std::invalid_argument("tensor extent " + std::to_string(i) +
                                  " is zero in shape " + shape_str(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
  check_extents(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  check_extents(shape);
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor shape " + shape_str(shape) + " holds " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape(), 0.0); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  impl_->requires_grad = flag;
  return *this;
}

Tensor Tensor::clone() const {
  Tensor copy;
  copy.impl_ = std::make_shared<Impl>();
  copy.impl_->shape = shape();
  copy.impl_->data = impl_->data;
  return copy;
}

bool Tensor::identical(const Tensor& other) const {
  if (!defined() || !other.defined()) return defined() == other.defined();
  if (shape() != other.shape()) return false;
  return std::memcmp(impl_->data.data(), other.impl_->data.data(),
                     impl_->data.size() * sizeof(double)) == 0;
}

}  // namespace covidnet
