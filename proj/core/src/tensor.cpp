#include "vitlr/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vitlr {

namespace {

int64_t checked_numel(const std::vector<int>& shape) {
  check_arg(!shape.empty() && shape.size() <= 4,
            "tensor rank must be 1..4, got " + shape_to_string(shape));
  int64_t n = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    check_arg(shape[i] >= 1, "tensor extent " + std::to_string(i) + " must be >= 1 in " +
                                 shape_to_string(shape));
    n *= shape[i];
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(checked_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  const int64_t n = checked_numel(shape_);
  check_arg(n == static_cast<int64_t>(data_.size()),
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_to_string(shape_));
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

int Tensor::extent(int axis) const {
  check_arg(axis >= 0 && axis < rank(),
            "axis " + std::to_string(axis) + " out of range for " + shape_str());
  return shape_[axis];
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace vitlr
