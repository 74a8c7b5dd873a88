#pragma once

#include <cstdint>
#include <random>

#include "mflow/core.hpp"
#include "mflow/synth.hpp"

namespace mflow::test {

/// Uniform doubles from a fixed-seed 64-bit stream.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }
  Vec3 vec(double half) { return Vec3(uniform(-half, half), uniform(-half, half), uniform(-half, half)); }

private:
  std::mt19937_64 gen_;
};

inline MedialTemplate flat_slab(int nx = 5, int ny = 4, double r = 0.5) {
  SlabSpec s;
  s.nx = nx;
  s.ny = ny;
  s.extent_x = 4.0;
  s.extent_y = 3.0;
  s.half_thickness = r;
  return make_slab_template(s);
}

inline double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace mflow::test
