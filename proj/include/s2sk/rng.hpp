#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace s2sk {

// Seeded generator with platform-independent derived distributions.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The normal and bounded-integer draws are implemented here
// because the standard library distributions are implementation-defined,
// which would break cross-machine reproducibility of ensembles.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Standard normal via the Marsaglia polar method.
  double normal();

  // Uniform integer on [0, n) without modulo bias.
  std::uint64_t index(std::uint64_t n);

  void fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

// Counter-based stream derivation: seed for stream `stream` of `master`.
// Independent of thread count and execution order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

// Stream id for a named component (FNV-1a of the name).
std::uint64_t stream_id(std::string_view name);

}  // namespace s2sk
