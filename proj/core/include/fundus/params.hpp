#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fundus/autograd.hpp"
#include "fundus/tensor.hpp"

namespace fundus {

struct ParamEntry {
  std::string name;
  Tensor value;
};

/// Ordered, uniquely named parameter arrays of one network.
class NetParams {
 public:
  void add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Total number of scalar parameters.
  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Order-sensitive FNV-1a digest of names and values.
  std::uint64_t digest() const;

  bool operator==(const NetParams& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Init { normal, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::normal;
};

using Layout = std::vector<ParamSpec>;

/// Draws every parameter in layout order: Gaussian(0, stddev) weights,
/// zero offsets, unit scales. Values are rounded to single precision so
/// that checkpoints reproduce them exactly.
NetParams init_params(const Layout& layout, std::uint64_t seed,
                      double stddev = 0.02);

std::size_t parameter_count(const Layout& layout);

/// Graph leaves bound to a parameter set.
class ParamVars {
 public:
  static ParamVars leaves(const NetParams& params);
  static ParamVars constants(const NetParams& params);

  const Var& operator[](std::string_view name) const;
  /// Gradients in the bound set's layout (zeros where none flowed).
  NetParams gradients() const;

 private:
  std::vector<std::pair<std::string, Var>> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace fundus
