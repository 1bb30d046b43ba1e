#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace rfrp {

// Seeded generator with portable derived distributions. The std:: distribution
// templates are implementation-defined, so uniform/normal/below are computed
// here directly from the engine output to keep datasets identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; no cached second value, so the engine
  // state fully describes the generator.
  double normal();

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Independent child stream, deterministic in (parent seed sequence, salt).
  Rng split(std::uint64_t salt);

  std::string state() const;
  void set_state(const std::string& text);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

// Stable 64-bit hash for strings (FNV-1a), used to key per-scene streams.
std::uint64_t stable_hash(const std::string& text);

// Order-dependent combination of two seeds (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace rfrp
