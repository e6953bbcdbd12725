#include "expres/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "expres/errors.hpp"

namespace expres {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape_error";
    case ErrorKind::Numeric: return "numeric_error";
    case ErrorKind::Contract: return "contract_error";
    case ErrorKind::Format: return "format_error";
    case ErrorKind::Config: return "config_error";
    case ErrorKind::Io: return "io_error";
  }
  return "error";
}

std::size_t product(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Dims dims, float fill) : dims_(std::move(dims)), data_(product(dims_), fill) {}

Tensor::Tensor(Dims dims, std::vector<float> values) : dims_(std::move(dims)), data_(std::move(values)) {
  if (product(dims_) != data_.size()) {
    throw ShapeError("tensor dims " + to_string(dims_) + " hold " + std::to_string(product(dims_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= dims_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for dims " + to_string(dims_));
  }
  return dims_[axis];
}

Tensor Tensor::reshaped(Dims dims) const {
  if (product(dims) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(dims_) + " to " + to_string(dims));
  }
  return Tensor(std::move(dims), data_);
}

bool Tensor::equals(const Tensor& other) const {
  if (dims_ != other.dims_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!(data_[i] == other.data_[i])) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
  return dims_ == other.dims_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("max_abs_diff: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace expres
