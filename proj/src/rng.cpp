#include "fedbilevel/rng.hpp"

#include "fedbilevel/types.hpp"

namespace fedbilevel {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                       std::uint64_t d) {
  std::uint64_t state = a;
  std::uint64_t h = splitmix64(state);
  for (std::uint64_t word : {b, c, d}) {
    state ^= word + 0x632BE59BD9B4E019ULL + (h << 6) + (h >> 2);
    h = splitmix64(state);
  }
  return h;
}

std::size_t RngStream::uniform_index(std::size_t n) {
  require(n > 0, "uniform_index: empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

double RngStream::uniform01() {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

double RngStream::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

double RngStream::gamma(double shape) {
  require(shape > 0.0, "gamma: shape must be positive");
  std::gamma_distribution<double> dist(shape, 1.0);
  return dist(engine_);
}

}  // namespace fedbilevel
