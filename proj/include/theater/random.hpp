#pragma once

#include <cstdint>
#include <string_view>

namespace theater {

// SplitMix64 (Steele, Lea & Flood 2014; the seeding generator of
// xoshiro/xoroshiro). Every random choice in the harness comes from this
// generator so that a master seed fixes a run on any platform.
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();

  // Uniform integer in [0, bound). Rejection sampling: draws below
  // (2^64 - bound) mod bound are discarded so every residue is equally likely.
  std::uint64_t bounded(std::uint64_t bound);

  // Uniform double in [0, 1) from the top 53 bits of one draw.
  double uniform();

 private:
  std::uint64_t state_;
};

// 64-bit FNV-1a over the bytes of `text`.
std::uint64_t fnv1a64(std::string_view text);

// Per-record seed: one SplitMix64 step over master_seed XOR fnv1a64(label).
std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view label);

}  // namespace theater
