#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "fundus/tensor.hpp"

namespace fundus {

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};
}  // namespace detail

/// Handle to a value in a reverse-mode computation graph.
///
/// Leaves created with `requires_grad` accumulate gradients when
/// `backward()` is called on a scalar descendant. Operations only record
/// a backward closure when at least one operand requires a gradient, so
/// inference over constant leaves builds no graph.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Accumulated gradient; a zero tensor of the value's shape if none.
  Tensor grad() const;

  /// Seeds d(self)/d(self) = 1 and propagates. Self must hold one element.
  void backward() const;

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  // Used by operation implementations.
  static Var make(Tensor value, std::vector<Var> inputs,
                  std::function<void(detail::Node&)> backward);
  detail::Node& node() const { return *node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace ag {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

struct ConvTranspose2dOptions {
  int stride = 1;
  int padding = 0;
  int output_padding = 0;
};

/// x (B, Cin, H, W), weight (Cout, Cin, k, k), optional bias (1, Cout, 1, 1).
/// Zero padding.
Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias,
           Conv2dOptions opt);

/// x (B, Cin, H, W), weight (Cin, Cout, k, k), optional bias (1, Cout, 1, 1).
/// Output extent (H - 1) * stride - 2 * padding + k + output_padding.
Var conv_transpose2d(const Var& x, const Var& weight,
                     const std::optional<Var>& bias,
                     ConvTranspose2dOptions opt);

/// Per-sample, per-channel standardization followed by a (1, C, 1, 1)
/// scale and offset. No running statistics.
Var instance_norm(const Var& x, const Var& scale, const Var& offset,
                  double eps = 1e-5);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

/// Elementwise sum of equally shaped operands.
Var add(const Var& a, const Var& b);
/// a * b where every extent of b equals a's or is 1 (broadcast).
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double k);

Var global_avg_pool(const Var& x);  // (B, C, 1, 1)
Var global_max_pool(const Var& x);  // (B, C, 1, 1)
Var channel_mean(const Var& x);     // (B, 1, H, W)
Var channel_max(const Var& x);      // (B, 1, H, W)
Var concat_channels(const Var& a, const Var& b);
Var max_pool2x2(const Var& x);

/// Scalar reductions, returned as (1, 1, 1, 1).
Var mean(const Var& x);
Var sum(const Var& x);
Var weighted_sum(const Var& x, const Tensor& weights);
Var mean_squared_to(const Var& x, double target);
Var mean_abs_diff(const Var& a, const Var& b);
/// Mean binary cross-entropy of logistic(logits) against {0,1} targets,
/// evaluated in the numerically stable logit form.
Var bce_with_logits(const Var& logits, const Tensor& targets);

}  // namespace ag
}  // namespace fundus
