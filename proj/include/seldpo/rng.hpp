#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace seldpo {

// Deterministic random source. The engine is std::mt19937_64, whose raw
// 64-bit output sequence is fixed by the C++ standard, and every transform
// below is written out explicitly so results are identical across platforms
// and standard libraries (the std::* distributions make no such promise).
//
// Identifier recorded in dataset provenance: "mt19937_64/u53-lemire/v1".
inline constexpr const char* kRngId = "mt19937_64/u53-lemire/v1";

class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform_real(double lo, double hi) {
    return lo + (hi - lo) * uniform_double();
  }

  // Uniform integer in [0, n). Lemire multiply-shift; the O(2^-64) bias is
  // irrelevant at this scale and the result is exactly reproducible.
  std::uint64_t bounded(std::uint64_t n) {
    using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>(next_u64()) * n) >> 64);
  }

  // In-place Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[bounded(i)]);
    }
  }

  // m distinct values from {0, ..., n-1}, returned ascending.
  std::vector<int> sample_distinct(int n, int m) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < m; ++i) {
      std::size_t j = static_cast<std::size_t>(i) +
                      bounded(static_cast<std::uint64_t>(n - i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(m));
    std::sort(idx.begin(), idx.end());
    return idx;
  }

 private:
  std::mt19937_64 engine_;
};

// splitmix64 finalizer; used to derive independent sub-stream seeds from one
// user-facing seed without correlated low bits.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace seldpo
