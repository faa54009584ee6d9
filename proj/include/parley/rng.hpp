#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace parley {

// All randomness in the pipeline is derived from one root seed expanded into
// named streams. Streams are counter-based: the state of one stream can never
// perturb another, so per-(episode, role, turn) sampling stays deterministic
// under any execution order.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives a stream key from a root seed and a path of labels/counters.
inline std::uint64_t derive_stream(std::uint64_t root, std::string_view label,
                                   std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t key = splitmix64(root ^ hash_str(label));
  for (std::uint64_t p : path) {
    key = splitmix64(key ^ splitmix64(p));
  }
  return key;
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : state_(splitmix64(key ^ 0xda3e39cb94b95bdbULL)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform int in [0, n). Rejection sampling keeps it unbiased.
  int next_int(int n) {
    if (n <= 0) throw std::invalid_argument("RngStream::next_int: n must be positive");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return static_cast<int>(v % bound);
  }

  // Uniform double in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Samples an index from an (unnormalized is fine) nonnegative weight vector
  // by CDF inversion. Ties and rounding resolve toward lower indices.
  int sample_categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw std::invalid_argument("sample_categorical: weights sum to zero");
    double u = next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(next_int(i + 1))]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace parley
