#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace fbo {

/// Stream roles. Separate streams keep the own-GP draws of a run independent of
/// how many branch/agent draws were consumed, so runs stay replayable.
enum class StreamRole : std::uint64_t {
  kBranch = 1,
  kOwnSample = 2,
  kObservationNoise = 3,
  kObjective = 4,
  kAgents = 5,
  kBasis = 6,
  kInit = 7,
  kMessages = 8,
  kDiagnostics = 9,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Mix a root seed with an ordered list of ids into a child seed.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> ids);

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  /// Stream keyed by (root, ids...). Same key, same stream, regardless of call order.
  static RngStream keyed(std::uint64_t root, std::initializer_list<std::uint64_t> ids) {
    return RngStream(derive_seed(root, ids));
  }

  double normal() { return normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  bool coin() { return (engine_() >> 63) != 0; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace fbo
