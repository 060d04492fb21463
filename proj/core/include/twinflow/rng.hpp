#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "twinflow/common.hpp"

namespace twinflow {

// PCG32 with named sub-streams. Every random quantity in the pipeline is
// drawn from a stream addressed as root -> split("data") -> split(episode) …
// so paired runs share random numbers wherever their addresses agree.
// Distributions are hand-rolled (not <random>) to keep draws bit-stable.
class Rng {
public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0x14057b7ef767814full) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += 0x853c49e6748fea9bull + seed;
    next_u32();
  }

  Rng split(const std::string& name) const {
    std::uint64_t h = fnv1a(name);
    return Rng(state_ ^ h, inc_ ^ (h * 0x9e3779b97f4a7c15ull));
  }
  Rng split(std::uint64_t index) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "#%llu", static_cast<unsigned long long>(index));
    return split(std::string(buf));
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  // Uniform in [0, 1).
  double uniform() { return next_u32() * (1.0 / 4294967296.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; caches the second deviate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-12) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    std::uint32_t span = static_cast<std::uint32_t>(hi - lo + 1);
    return lo + static_cast<int>(next_u32() % (span == 0 ? 1u : span));
  }

private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace twinflow
