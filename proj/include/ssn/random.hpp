#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "ssn/types.hpp"

namespace ssn {

/// SplitMix64 finalizer; used only to derive sub-stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a of a stream label, so sub-streams are keyed by name rather than
/// by draw order.
constexpr std::uint64_t stream_key(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seeded 64-bit Mersenne Twister. Every matrix a generator draws gets its
/// own sub-stream: seed' = splitmix64(seed ^ splitmix64(key(label) + index)).
/// Adding a new labelled draw never perturbs existing ones.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng stream(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
    return Rng(splitmix64(seed ^ splitmix64(stream_key(label) + index)));
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  /// rows x cols matrix of i.i.d. N(0, stddev^2), filled row by row.
  Matrix gaussian(Index rows, Index cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = dist(engine_);
    return m;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ssn
