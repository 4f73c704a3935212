#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace picodiff {

// Violated precondition or quality-bar refusal. CLI maps this to exit code 2.
class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training failed to reach a required bar within budget. CLI exit code 3.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

template <typename Alloc>
inline uint64_t fnv1a(const std::vector<float, Alloc>& v, uint64_t h = 0xcbf29ce484222325ull) {
  return v.empty() ? h : fnv1a(v.data(), v.size() * sizeof(float), h);
}

inline std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace picodiff
