// Internal JSON helpers shared by checkpoint and experiment code.
#pragma once

#include <json.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace varnn::detail {

// JSON has no infinities; the report and checkpoint formats use the string
// sentinels "-inf" / "inf".
inline nlohmann::json json_number(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  return v;
}

inline double number_from_json(const nlohmann::json& j, const std::string& ctx) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    throw std::invalid_argument(ctx + ": expected number or inf sentinel, got '" + s + "'");
  }
  return j.get<double>();
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw std::invalid_argument(ctx + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace varnn::detail
