#include "s2sk/tensor.hpp"

#include <bit>

#include <cmath>
#include <cstring>
#include <numeric>

#include "s2sk/error.hpp"

namespace s2sk {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw ValidationError("tensor payload has " + std::to_string(data_.size()) +
                          " elements, shape " + shape_string(shape_) +
                          " needs " + std::to_string(element_count(shape_)));
  }
}

std::size_t Tensor::slab_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / shape_[0];
}

std::span<double> Tensor::slab(std::size_t k) {
  const std::size_t n = slab_size();
  return std::span<double>(data_).subspan(k * n, n);
}

std::span<const double> Tensor::slab(std::size_t k) const {
  const std::size_t n = slab_size();
  return std::span<const double>(data_).subspan(k * n, n);
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         std::memcmp(data_.data(), other.data_.data(),
                     data_.size() * sizeof(double)) == 0;
}

std::uint64_t fingerprint(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t w) {
    h ^= w;
    h *= 1099511628211ULL;
    h ^= h >> 29;
  };
  for (std::size_t d : t.shape()) mix(d);
  for (double v : t.values()) mix(std::bit_cast<std::uint64_t>(v));
  return h;
}

}  // namespace s2sk
