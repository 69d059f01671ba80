#include "spkemb/tensor.hpp"

#include <cmath>

namespace spkemb {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void expect_shape(const Shape& actual, const Shape& expected,
                  const std::string& what) {
  if (actual == expected) return;
  std::string axes;
  if (actual.size() != expected.size()) {
    axes = "rank " + std::to_string(actual.size()) + " vs " +
           std::to_string(expected.size());
  } else {
    for (std::size_t i = 0; i < actual.size(); ++i) {
      if (actual[i] != expected[i]) {
        if (!axes.empty()) axes += ", ";
        axes += "axis " + std::to_string(i) + " (" + std::to_string(actual[i]) +
                " vs " + std::to_string(expected[i]) + ")";
      }
    }
  }
  raise(ErrorKind::kDimension, what + ": got " + shape_string(actual) +
                                   ", expected " + shape_string(expected) +
                                   "; mismatched " + axes);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
void check_finite(const BasicTensor<T>& t, const std::string& where) {
  if (!t.all_finite()) raise(ErrorKind::kNonFinite, where);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void check_finite(const BasicTensor<float>&, const std::string&);
template void check_finite(const BasicTensor<double>&, const std::string&);

}  // namespace spkemb
