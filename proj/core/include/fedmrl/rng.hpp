#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

namespace fedmrl {

/// Deterministic random stream. All draws are computed here from raw 64-bit
/// engine output so results do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Requires n > 0.
  std::size_t uniform_index(std::size_t n);

  /// Box-Muller; caches the second variate.
  double normal(double mean = 0.0, double stddev = 1.0);

  /// Index drawn with probability proportional to weights (all >= 0).
  /// Falls back to uniform over the whole range when every weight is zero.
  template <typename Weights>
  std::size_t weighted_index(const Weights& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) return uniform_index(weights.size());
    const double target = uniform01() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    std::size_t i = 0;
    for (double w : weights) {
      if (w > 0.0) {
        acc += w;
        last_positive = i;
        if (target < acc) return i;
      }
      ++i;
    }
    return last_positive;
  }

  /// Engine state as text; restoring it reproduces the stream exactly.
  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Seed for the named substream `name` (optionally indexed, e.g. client h at
/// round t) of a master seed. Streams with different names or indices are
/// statistically independent.
std::uint64_t derive_seed(std::uint64_t master, std::string_view name,
                          std::initializer_list<std::uint64_t> indices = {});

inline Rng make_stream(std::uint64_t master, std::string_view name,
                       std::initializer_list<std::uint64_t> indices = {}) {
  return Rng(derive_seed(master, name, indices));
}

}  // namespace fedmrl
