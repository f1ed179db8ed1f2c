#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dbridge::rng {

inline constexpr std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::uint64_t h = splitmix(a ^ 0x243F6A8885A308D3ULL);
  h = splitmix(h ^ b);
  h = splitmix(h ^ c);
  return splitmix(h ^ d);
}

// Uniform in the open interval (0, 1).
inline double unit(std::uint64_t h) { return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53; }

// Independent noise families; mixed into the step key so streams never collide.
enum class Purpose : std::uint64_t {
  prior = 1,
  reverse_step = 2,
  forward_step = 3,
  target_sample = 4,
  init = 5,
  search = 6,
  data = 7,
};

inline constexpr std::uint64_t step_key(Purpose p, std::uint64_t step) {
  return (static_cast<std::uint64_t>(p) << 48) ^ step;
}

// Standard normal addressed by (seed, stream, step, index): the value depends only on its address,
// so batch partitioning and thread count cannot change results.
inline double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t step, std::uint64_t index) {
  const std::uint64_t h = hash(seed, stream, step, index >> 1);
  const double u1 = unit(h);
  const double u2 = unit(splitmix(h));
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  return (index & 1) ? r * std::sin(a) : r * std::cos(a);
}

// Sequential generator over one (seed, stream) address space.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t stream, Purpose purpose = Purpose::target_sample)
      : seed_(seed), stream_(stream), purpose_(purpose) {}

  std::uint64_t next_u64() { return hash(seed_, stream_, step_key(purpose_, 0), counter_++); }
  double uniform() { return unit(next_u64()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t seed_, stream_;
  Purpose purpose_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dbridge::rng
