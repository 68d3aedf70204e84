#pragma once

#include <cstdint>
#include <random>

namespace msfa {

// Seeded random number generator used by every stochastic routine.
//
// All gamma draws are parameterized by shape and RATE (mean = shape/rate).
// std::gamma_distribution uses shape/scale; the conversion happens here and
// nowhere else.
//
// Distribution objects are constructed fresh per call so a draw consumes a
// deterministic slice of the engine stream regardless of what was drawn
// before it (std::normal_distribution would otherwise cache a spare value).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(gen_); }

  // Gamma(shape, rate); mean = shape/rate, variance = shape/rate^2.
  double gamma_rate(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(gen_);
  }

  // Independent substream seed for worker `stream` (chains, data generation).
  // splitmix64 mixing keeps nearby master seeds / stream indices uncorrelated.
  static std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace msfa
