#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fundus {

/// Extent of a rank-4 (batch, channels, height, width) array.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense rank-4 array of doubles in NCHW order. Value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) {
    return data_[index(n, c, h, w)];
  }
  double at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  /// Pointer to the (n, c) plane.
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  void fill(double v);
  bool all_finite() const;
  double sum() const;
  double mean() const { return data_.empty() ? 0.0 : sum() / size(); }
  double min() const;
  double max() const;

  /// Copy of batch entry `n` as a (1, C, H, W) tensor.
  Tensor slice_batch(int n) const;

 private:
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }

  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

/// Stacks (1, C, H, W) tensors of identical shape along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

/// Rounds every entry to the nearest IEEE single-precision value.
void round_to_float(Tensor& t);

}  // namespace fundus
