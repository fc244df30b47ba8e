#pragma once

#include <cmath>
#include <cstdint>

namespace lhn {

// Counter-based RNG: every draw is a pure function of (seed, stream, counter),
// so parallel consumers get identical values regardless of scheduling.
namespace detail {
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream)
      : key_(detail::mix64(detail::mix64(seed) + 0x9e3779b97f4a7c15ULL * (stream + 1))) {}

  // uniform in (0, 1), indexed draw
  double uniform_at(uint64_t ctr) const {
    uint64_t h = detail::mix64(key_ + 0x9e3779b97f4a7c15ULL * ctr);
    return ((h >> 11) + 0.5) * 0x1.0p-53;
  }

  // standard normal, indexed draw (Box-Muller, cosine branch)
  double normal_at(uint64_t ctr) const {
    double u1 = uniform_at(2 * ctr);
    double u2 = uniform_at(2 * ctr + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // stateful convenience; deterministic since the counter starts at 0
  double uniform() { return uniform_at(ctr_++); }
  double normal() { return normal_at(ctr_++); }

  uint64_t counter() const { return ctr_; }

 private:
  uint64_t key_;
  uint64_t ctr_ = 0;
};

}  // namespace lhn
