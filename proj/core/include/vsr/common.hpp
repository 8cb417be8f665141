// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsr {

using Shape = std::vector<std::int64_t>;

// Configuration or shape mismatch detected before any numerics ran.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value produced or consumed where a finite one is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem / serialization failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace vsr
