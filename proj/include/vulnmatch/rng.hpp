#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace vulnmatch {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + b + (a << 6) + (a >> 2)));
}

inline uint64_t hash_string(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based deterministic generator. The draw sequence depends only on
// (key, counter), so independent streams can be forked per purpose and the
// schedule of consumers (threads, batches) cannot perturb other streams.
class RngStream {
 public:
  explicit RngStream(uint64_t key) : key_(key) {}

  RngStream fork(std::string_view purpose) const {
    return RngStream(detail::hash_combine(key_, detail::hash_string(purpose)));
  }

  RngStream fork(uint64_t index) const {
    return RngStream(detail::hash_combine(key_, detail::splitmix64(index)));
  }

  uint64_t next_u64() { return detail::splitmix64(key_ ^ detail::splitmix64(++counter_)); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound) via rejection-free multiply-shift.
  uint64_t next_below(uint64_t bound) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * bound) >> 64);
  }

  // Standard normal via Box-Muller; consumes two uniforms per pair.
  double next_gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    cached_ = radius * std::sin(angle);
    have_cached_ = true;
    return radius * std::cos(angle);
  }

  uint64_t key() const { return key_; }

 private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Seeded Fisher-Yates shuffle of an index container.
template <typename Container>
void shuffle(Container& items, RngStream& rng) {
  for (size_t i = items.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace vulnmatch
