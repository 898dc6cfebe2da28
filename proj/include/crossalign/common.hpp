#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace crossalign {

using Index = Eigen::Index;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or inconsistent on-disk data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or other numeric breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (ranges, enum spellings, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

enum class Mode { train, eval };

/// The three compared methods.
enum class Method { vna, direct_encode, direct_decode };

/// Discriminative encoding ranks responses for an image; decoding ranks
/// images for a response.
enum class TaskMode { encoding, decoding };

std::string to_string(Method method);
std::string to_string(TaskMode mode);
/// Accepts "vna", "direct-encode", "direct-decode"; throws ArgumentError.
Method parse_method(const std::string& text);
/// Accepts "encoding", "decoding"; throws ArgumentError.
TaskMode parse_task_mode(const std::string& text);

/// Writes "warning: <message>" to the current warning sink (stderr by
/// default) and bumps a process-wide counter.
void warn(const std::string& message);
std::uint64_t warning_count();

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and any number of integer tags.
template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) {
  std::uint64_t s = mix_seed(seed);
  ((s = mix_seed(s ^ static_cast<std::uint64_t>(tags))), ...);
  return s;
}

using Rng = std::mt19937_64;

// The std distributions are implementation-defined; these are not, so
// seeded streams are identical across standard libraries.

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n), rejection sampled.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t r = rng();
  while (r >= limit) {
    r = rng();
  }
  return r % n;
}

/// Replaces the warning sink; an empty function restores stderr.
void set_warning_sink(std::function<void(const std::string&)> sink);

/// Worker count for parallel evaluation: CROSSALIGN_THREADS when set to a
/// positive integer, otherwise the hardware concurrency (at least 1).
unsigned worker_count();

/// Keeps freed large blocks in the heap instead of returning them to the
/// OS. Training allocates and frees the same large buffers every step, and
/// re-faulting fresh pages costs more than the arithmetic. No-op outside
/// glibc. Call once from main().
void tune_allocator();

/// Standard normal draw (Box-Muller, one value per call).
double standard_normal(Rng& rng);

}  // namespace crossalign
