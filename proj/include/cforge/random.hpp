#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace cforge {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// A (seed, stream) pair names an independent sequence; the internal counter
// walks it. Outputs are identical on every platform, which is why the library
// never touches std::*_distribution (their algorithms are implementation
// defined).
class Philox {
 public:
  using result_type = std::uint64_t;

  explicit Philox(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        counter_{0, 0, static_cast<std::uint32_t>(stream),
                 static_cast<std::uint32_t>(stream >> 32)} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (index_ >= 4) refill();
    const std::uint64_t lo = block_[index_++];
    const std::uint64_t hi = block_[index_++];
    return (hi << 32) | lo;
  }

 private:
  void refill() noexcept {
    std::array<std::uint32_t, 4> x = counter_;
    std::array<std::uint32_t, 2> k = key_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * x[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * x[2];
      x = {static_cast<std::uint32_t>(p1 >> 32) ^ x[1] ^ k[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ x[3] ^ k[1], static_cast<std::uint32_t>(p0)};
      k[0] += 0x9E3779B9u;
      k[1] += 0xBB67AE85u;
    }
    block_ = x;
    index_ = 0;
    // 128-bit counter increment over the low two words; the high two hold the stream id.
    if (++counter_[0] == 0) ++counter_[1];
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int index_ = 4;
};

/// Uniform integer in [0, n) without modulo bias (Lemire's method).
template <typename Rng>
std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  __uint128_t m = static_cast<__uint128_t>(rng()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<__uint128_t>(rng()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

/// Uniform double in [0, 1) with 53 random bits.
template <typename Rng>
double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Rng>
bool bernoulli(Rng& rng, double p) {
  return uniform01(rng) < p;
}

// Box-Muller standard normal source; keeps the spare variate.
class Gaussian {
 public:
  template <typename Rng>
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cforge
