#pragma once

#include <cstdint>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace votrack {

using Shape = std::vector<int>;

// Contract violation: caller passed arguments that break a documented precondition.
class contract_error : public std::logic_error {
  using std::logic_error::logic_error;
};

// Numeric fault: a computation produced NaN/Inf. Recoverable by policy
// (trainer halves the learning rate, tracker keeps the previous box).
class numeric_fault : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input files / malformed external data.
class data_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw contract_error("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw contract_error(msg);
}

inline void log_warn(const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; }

// for warnings that can fire once per inner-loop call (e.g. a config clamp)
inline void log_warn_once(const std::string& msg) {
  static std::mutex mu;
  static std::set<std::string> seen;
  {
    std::lock_guard<std::mutex> lock(mu);
    if (!seen.insert(msg).second) return;
  }
  log_warn(msg);
}

}  // namespace votrack
