#pragma once
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace clab {

// Bad input: exit code 2 in the CLI.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An operation declined to produce a result (exit code 3).
struct NumericRefusal : std::runtime_error {
  std::string op, reason;
  NumericRefusal(std::string o, std::string r)
      : std::runtime_error(o + ": " + r), op(std::move(o)), reason(std::move(r)) {}
};

struct SizeCapExceeded : NumericRefusal {
  std::uint64_t requested, cap;
  SizeCapExceeded(std::string o, std::uint64_t req, std::uint64_t c)
      : NumericRefusal(std::move(o), "size cap exceeded (" + std::to_string(req) +
                                         " > " + std::to_string(c) + ")"),
        requested(req), cap(c) {}
};

inline std::uint64_t size_cap() {
  if (const char* s = std::getenv("COCYCLE_LAB_SIZE_CAP")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(s, &end, 10);
    if (end != s && v > 0) return v;
  }
  return std::uint64_t{1} << 24;
}

}  // namespace clab
