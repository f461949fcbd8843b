#include "fundus/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "fundus/random.hpp"

namespace fundus {

void NetParams::add(std::string name, Tensor value) {
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
}

bool NetParams::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

const Tensor& NetParams::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + std::string(name));
  }
  return entries_[it->second].value;
}

Tensor& NetParams::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t NetParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool NetParams::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

std::uint64_t NetParams::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    mix(e.value.data(), e.value.size() * sizeof(double));
  }
  return h;
}

bool NetParams::operator==(const NetParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.shape() != b.value.shape()) return false;
    if (std::memcmp(a.value.data(), b.value.data(),
                    a.value.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

NetParams init_params(const Layout& layout, std::uint64_t seed,
                      double stddev) {
  Rng rng(seed);
  NetParams params;
  for (const auto& spec : layout) {
    Tensor t(spec.shape, spec.init == Init::ones ? 1.0 : 0.0);
    if (spec.init == Init::normal) {
      for (double& v : t.values()) v = stddev * rng.normal();
      round_to_float(t);
    }
    params.add(spec.name, std::move(t));
  }
  return params;
}

std::size_t parameter_count(const Layout& layout) {
  std::size_t n = 0;
  for (const auto& s : layout) n += s.shape.numel();
  return n;
}

namespace {
void bind(const NetParams& params, bool requires_grad,
               std::vector<std::pair<std::string, Var>>& vars,
               std::unordered_map<std::string, std::size_t>& index) {
  for (const auto& e : params.entries()) {
    index.emplace(e.name, vars.size());
    vars.emplace_back(e.name, Var(e.value, requires_grad));
  }
}
}  // namespace

ParamVars ParamVars::leaves(const NetParams& params) {
  ParamVars pv;
  bind(params, true, pv.vars_, pv.index_);
  return pv;
}

ParamVars ParamVars::constants(const NetParams& params) {
  ParamVars pv;
  bind(params, false, pv.vars_, pv.index_);
  return pv;
}

const Var& ParamVars::operator[](std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("unbound parameter: " + std::string(name));
  }
  return vars_[it->second].second;
}

NetParams ParamVars::gradients() const {
  NetParams g;
  for (const auto& [name, var] : vars_) g.add(name, var.grad());
  return g;
}

}  // namespace fundus
