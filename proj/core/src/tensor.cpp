#include "fundus/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fundus {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
         std::to_string(h) + ", " + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw std::invalid_argument("tensor extents must be >= 1, got " +
                                shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw std::invalid_argument("tensor extents must be >= 1, got " +
                                shape.str());
  }
  if (data_.size() != shape.numel()) {
    throw std::invalid_argument("tensor payload size does not match shape " +
                                shape.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

double Tensor::min() const {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

Tensor Tensor::slice_batch(int n) const {
  if (n < 0 || n >= shape_.n) throw std::out_of_range("batch index");
  Shape s = shape_;
  s.n = 1;
  const std::size_t per = s.numel();
  std::vector<double> v(data_.begin() + n * per, data_.begin() + (n + 1) * per);
  return Tensor(s, std::move(v));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no items");
  Shape s = items.front().shape();
  std::vector<double> v;
  v.reserve(s.numel() * items.size());
  for (const auto& t : items) {
    if (t.shape() != s) {
      throw std::invalid_argument("stack_batch: shape mismatch " +
                                  t.shape().str() + " vs " + s.str());
    }
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  s.n *= static_cast<int>(items.size());
  return Tensor(s, std::move(v));
}

void round_to_float(Tensor& t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace fundus
