#pragma once

#include <cstdint>
#include <random>

namespace vlltr {

using Rng = std::mt19937_64;

// splitmix64 finalizer; derives independent stream seeds from (seed, tag).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag) { return Rng(mix_seed(seed, tag)); }

// Stream tags. Keeping them in one place prevents accidental reuse.
namespace stream {
inline constexpr std::uint64_t kPrototypes = 1;
inline constexpr std::uint64_t kTrainNoise = 2;
inline constexpr std::uint64_t kTestNoise = 3;
inline constexpr std::uint64_t kCorpus = 4;
inline constexpr std::uint64_t kSampler = 5;
inline constexpr std::uint64_t kTextDraw = 6;
inline constexpr std::uint64_t kProbe = 7;
inline constexpr std::uint64_t kInitVisual = 8;
inline constexpr std::uint64_t kInitLinguistic = 9;
inline constexpr std::uint64_t kInitHead = 10;
inline constexpr std::uint64_t kFinetuneSampler = 11;
inline constexpr std::uint64_t kAttributes = 12;
inline constexpr std::uint64_t kTeacher = 13;
}  // namespace stream

}  // namespace vlltr
