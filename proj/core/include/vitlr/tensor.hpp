#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitlr {

// Dense row-major float32 tensor of rank 1..4. Images and feature maps use
// NCHW order (batch, channel, height, width). Ops treat tensors as values:
// they never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float value);
  static Tensor scalar(float value) { return Tensor({1}, {value}); }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int extent(int axis) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& raw() { return data_; }
  const std::vector<float>& raw() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  float& operator()(int a) { return data_[static_cast<size_t>(a)]; }
  float operator()(int a) const { return data_[static_cast<size_t>(a)]; }
  float& operator()(int a, int b) { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  float operator()(int a, int b) const { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  float& operator()(int a, int b, int c) {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  float operator()(int a, int b, int c) const {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  float& operator()(int a, int b, int c, int d) {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  float operator()(int a, int b, int c, int d) const {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

// Shape string like "[1,3,128,256]" for error messages.
std::string shape_to_string(const std::vector<int>& shape);

// Throws std::invalid_argument when the condition fails.
inline void check_arg(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

}  // namespace vitlr
