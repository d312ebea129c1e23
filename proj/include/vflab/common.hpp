#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vflab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (CSV, JSON).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or violated precondition on user-supplied parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A party broke the message protocol (routing failure, missing frame, deadlock).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class CryptoError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training (non-finite loss, diverged parameters).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Class index in [0, num_classes). CSV files carry 1-based labels.
using Labels = std::vector<int>;

inline constexpr int kNumClasses = 4;

/// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace vflab
