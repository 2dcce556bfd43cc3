#include "instyle/rng.hpp"

#include <cmath>
#include <numbers>

namespace instyle {

// Box-Muller, one output per call. std::normal_distribution is
// implementation-defined and would make fixtures library-dependent.
double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace instyle
