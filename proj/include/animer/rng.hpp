#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace animer {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// mt19937_64 wrapped with pinned uniform/normal transforms so that streams
/// do not depend on the standard library's distribution internals.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  /// Independent per-record stream derived from a master seed.
  static Rng stream(std::uint64_t master, std::uint64_t idx) {
    return Rng(splitmix64(master ^ splitmix64(idx)));
  }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return std::ldexp(static_cast<double>(eng_() >> 11), -53); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Box-Muller; draws two uniforms per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Normal redrawn until |x| <= bound.
  double truncated_normal(double sigma, double bound) {
    double x = normal() * sigma;
    while (std::abs(x) > bound) x = normal() * sigma;
    return x;
  }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

private:
  std::mt19937_64 eng_;
};

}  // namespace animer
