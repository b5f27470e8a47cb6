#pragma once
#include <cmath>
#include <cstdint>
#include <vector>

namespace clab {

// SplitMix64 finalizer.
constexpr std::uint64_t fmix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Counter-mode SplitMix64: draw i of a stream with key k is fmix64(k + (i+1)*golden).
class Stream {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit Stream(std::uint64_t key = 0) : key_(key) {}

  std::uint64_t next_u64() { return fmix64(key_ + (++ctr_) * kGolden); }

  // uniform on [0,1) with 53 random bits
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // index drawn from a cumulative distribution (last entry ~1)
  int categorical(const double* cdf, int n) {
    double u = uniform();
    for (int i = 0; i < n - 1; ++i)
      if (u < cdf[i]) return i;
    return n - 1;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return ctr_; }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

inline Stream derive_stream(std::uint64_t seed, std::uint64_t index) {
  return Stream(fmix64(seed ^ fmix64(index + 0x632BE59BD9B4E019ULL)));
}

// Sub-stream of a stream: used where a sample needs several independent draws sequences.
inline Stream derive_stream(const Stream& parent, std::uint64_t index) {
  return derive_stream(parent.key(), index);
}

}  // namespace clab
