#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "spkemb/error.hpp"

namespace spkemb {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. `float` is the training precision; `double` is
/// used by gradient checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_size(shape_), ErrorKind::kDimension,
            "data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const {
    return data_[offset(idx)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reinterprets the same data with a new shape of equal size.
  BasicTensor reshaped(Shape shape) const {
    require(shape_size(shape) == size(), ErrorKind::kDimension,
            "cannot reshape " + shape_string(shape_) + " to " +
                shape_string(shape));
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const;

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    require(idx.size() == shape_.size(), ErrorKind::kDimension,
            "index rank mismatch for shape " + shape_string(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      require(i < shape_[axis], ErrorKind::kOutOfRange,
              "index out of range on axis " + std::to_string(axis));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
using NamedTensorMap = std::map<std::string, BasicTensor<T>>;
using NamedTensors = NamedTensorMap<float>;

/// Throws kDimension naming `what` when the shapes differ.
void expect_shape(const Shape& actual, const Shape& expected,
                  const std::string& what);

/// Throws kNonFinite naming `where` if any element is NaN or infinite.
template <typename T>
void check_finite(const BasicTensor<T>& t, const std::string& where);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace spkemb
