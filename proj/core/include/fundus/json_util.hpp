#pragma once

#include <cmath>
#include <nlohmann/json.hpp>

namespace fundus {

/// JSON has no infinities; they are written as the strings "inf"/"-inf"
/// ("nan" for NaN).
inline nlohmann::ordered_json json_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double json_to_double(const nlohmann::ordered_json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
  }
  return j.get<double>();
}

}  // namespace fundus
