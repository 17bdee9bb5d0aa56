#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace roadseg {

// Shape/contract violations (bad extents, rank mismatches, incompatible operands).
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File and serialization problems.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset-level problems (missing ground truth, empty dataset, bad geometry).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (diverged training).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major N-dimensional array. All extents are >= 1 and
// product(shape) always equals the number of stored elements.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i, int j) { return data_[idx2(i, j)]; }
  const T& operator()(int i, int j) const { return data_[idx2(i, j)]; }

  T& operator()(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[idx3(i, j, k)]; }

  T& operator()(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  const T& operator()(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  // Scalar accessor; valid only for single-element tensors.
  T value() const {
    if (numel() != 1) throw ShapeError("value() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  static std::int64_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
    std::int64_t n = 1;
    for (int e : shape) {
      if (e < 1) throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
      n *= e;
    }
    return n;
  }

  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

}  // namespace roadseg
