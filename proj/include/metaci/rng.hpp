#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace metaci {

// Counter-based random stream (SplitMix64 core). The n-th output is
//
//   mix64(key + n * 0x9E3779B97F4A7C15)
//
// where key is derived from (seed, stream_id) by two rounds of the SplitMix64
// finalizer, and mix64 is that finalizer. State is just the counter, so a
// stream is fully determined by (seed, stream_id, counter) and sequences are
// bit-identical across platforms and runs. Distinct stream ids land at
// unrelated offsets of the underlying sequence, which makes them independent
// for simulation purposes.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id),
        key_(mix64(mix64(seed) + mix64(stream_id ^ 0xE7037ED1A0B428DBull))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  // Independent substream addressed by tag. Derivation uses only
  // (seed, stream_id, tag), never the counter.
  RngStream child(std::uint64_t tag) const {
    return RngStream(seed_, mix64(stream_id_ + 0x9E3779B97F4A7C15ull * (tag + 1)));
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (counter_++) * 0x9E3779B97F4A7C15ull;
    return mix64(z);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::uniform_below: n = 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // One N(0,1) draw by Box-Muller: z = sqrt(-2 ln u1) * cos(2 pi u2) with
  // u1 in (0,1]. Always consumes exactly two uniforms; the sine companion is
  // discarded so that the stream state stays a plain counter.
  double normal() {
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // In-place Fisher-Yates, descending index.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline std::vector<double> sample_standard_normal(RngStream& rng, std::size_t n) {
  if (n == 0) {
    throw std::invalid_argument("sample_standard_normal: empty request (n = 0)");
  }
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

}  // namespace metaci
