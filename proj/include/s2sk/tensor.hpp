#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace s2sk {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Rank 0 holds a single scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  // Contiguous block for index `k` along the leading axis.
  std::span<double> slab(std::size_t k);
  std::span<const double> slab(std::size_t k) const;
  std::size_t slab_size() const;

  // Same data viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

  // Bitwise comparison of shape and payload (NaN payloads compare equal
  // when their bit patterns match).
  bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// FNV-style hash over the shape and the 64-bit payload words. Used for trace
// bookkeeping, not for security.
std::uint64_t fingerprint(const Tensor& t);

}  // namespace s2sk
