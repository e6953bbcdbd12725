#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace expres {

using Dims = std::vector<std::size_t>;

std::size_t product(const Dims& dims);
std::string to_string(const Dims& dims);

// Dense row-major f32 array. The innermost dimension is last.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, float fill = 0.0f);
  Tensor(Dims dims, std::vector<float> values);

  static Tensor zeros(Dims dims) { return Tensor(std::move(dims), 0.0f); }
  static Tensor scalar(float v) { return Tensor(Dims{1}, v); }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; no bounds checks beyond debug asserts.
  float& at(std::size_t r, std::size_t c) { return data_[r * dims_.back() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * dims_.back() + c]; }

  // Same data viewed with new extents; element count must match.
  Tensor reshaped(Dims dims) const;

  // Exact element-wise equality (0.0 == -0.0) with identical dims.
  bool equals(const Tensor& other) const;
  // Identical dims and identical bit patterns.
  bool bit_equal(const Tensor& other) const;
  bool all_finite() const;

 private:
  Dims dims_;
  std::vector<float> data_;
};

using TensorMap = std::map<std::string, Tensor>;

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace expres
