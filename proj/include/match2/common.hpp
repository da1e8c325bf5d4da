#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace match2 {

// Error taxonomy shared by every module. The category string is what the CLI
// reports on stderr, so keep the names stable.
enum class ErrorCategory {
  kDimension,
  kContract,
  kConfig,
  kIngestion,
  kLookup,
  kDegenerateInput,
  kInternal,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kDimension: return "dimension";
    case ErrorCategory::kContract: return "contract";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kIngestion: return "ingestion";
    case ErrorCategory::kLookup: return "lookup";
    case ErrorCategory::kDegenerateInput: return "degenerate_input";
    case ErrorCategory::kInternal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void throw_error(ErrorCategory c, const std::string& msg) {
  throw Error(c, msg);
}

// Deterministic RNG. splitmix64 core instead of std distributions so that two
// runs with the same seed produce identical streams on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed + 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call, the twin is discarded to keep the
  // stream position independent of call parity.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * mag * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Derive an independent stream, e.g. one per subsystem.
  Rng split(uint64_t stream_id) {
    return Rng(next_u64() ^ (stream_id * 0xd1342543de82ef95ULL));
  }

 private:
  uint64_t state_;
};

}  // namespace match2
