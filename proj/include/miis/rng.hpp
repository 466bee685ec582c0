#ifndef MIIS_RNG_HPP
#define MIIS_RNG_HPP

#include <cstdint>
#include <limits>
#include <string_view>

namespace miis {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to fold labels into seeds.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based random stream.
///
/// A stream is identified by a 64-bit key; the n-th output is
/// mix64(key + n * golden). Child streams are derived from (key, tag) without
/// touching the parent's counter, so a chain seed can hand out independent
/// per-iteration and per-particle substreams whose contents do not depend on
/// the order in which they are consumed.
///
/// Satisfies UniformRandomBitGenerator, so it plugs into <random>
/// distributions.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) noexcept : key_(mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

  [[nodiscard]] RngStream derive(std::uint64_t tag) const noexcept {
    RngStream child(0);
    child.key_ = mix64(key_ ^ mix64(tag + 0x9e3779b97f4a7c15ULL));
    return child;
  }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal();

  [[nodiscard]] std::uint64_t key() const noexcept { return key_; }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Seed for replication `r` of the method labelled `label`.
inline std::uint64_t replication_seed(std::uint64_t base_seed, std::string_view label,
                                      std::uint64_t r) noexcept {
  return mix64(mix64(mix64(base_seed) ^ fnv1a64(label)) + r * 0x632be59bd9b4e019ULL);
}

}  // namespace miis

#endif  // MIIS_RNG_HPP
