#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace prerank {

using UserId = std::int32_t;
using QueryId = std::int32_t;
using ItemId = std::int32_t;
using CategoryId = std::int32_t;
using TermId = std::int32_t;
using ScenarioId = std::int32_t;
using Timestamp = std::int64_t;  // seconds

inline constexpr ScenarioId kSearchScenario = 0;
inline constexpr Timestamp kSecondsPerDay = 86400;

// Error hierarchy. Every failure the library reports derives from Error so
// the CLI can map it to a nonzero exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class LookupError : public Error {
 public:
  using Error::Error;
};
class LabelingError : public Error {
 public:
  using Error::Error;
};
class NumericalFault : public Error {
 public:
  using Error::Error;
};
class ContractViolation : public Error {
 public:
  using Error::Error;
};
class EvaluationError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

// splitmix64 finalizer; used to derive independent streams from one seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                    std::uint64_t c = 0) {
  return mix64(mix64(mix64(seed ^ mix64(a)) ^ mix64(b + 0x51ULL)) ^ mix64(c + 0xa7ULL));
}

// Uniform in (0, 1) from a 64-bit hash.
inline double hash_uniform(std::uint64_t h) {
  return (static_cast<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

// Counter-based standard normal: a pure function of its keys.
inline double hash_gaussian(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  const std::uint64_t h = derive_seed(seed, a, b, c);
  const double u1 = hash_uniform(h);
  const double u2 = hash_uniform(mix64(h ^ 0x2545f4914f6cdd1dULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream, index));
}

// 64-bit FNV-1a over bytes, rendered as 16 hex digits.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex_digest(std::string_view bytes);

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace prerank
