#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace fedbilevel {

/// What a random stream is used for. Part of the derivation tuple so that
/// streams for different purposes never collide.
enum class StreamPurpose : std::uint64_t {
  ClientSampling = 1,
  LocalSteps = 2,
  ControlVariate = 3,
  Partition = 4,
  Generator = 5,
  OuterSampling = 6,
  InnerRun = 7,
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes an arbitrary tuple of words into one 64-bit seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                       std::uint64_t d);

/// A reproducible random stream owned by a single consumer.
///
/// Streams are derived from (runSeed, round, clientId, purpose); identical
/// tuples give identical sequences and distinct tuples give independent ones.
/// Copying a stream clones its state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  static RngStream derive(std::uint64_t runSeed, std::uint64_t round,
                          std::uint64_t clientId, StreamPurpose purpose) {
    return RngStream(mix_seed(runSeed, round, clientId,
                              static_cast<std::uint64_t>(purpose)));
  }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  double uniform01();
  double normal();
  double gamma(double shape);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fedbilevel
