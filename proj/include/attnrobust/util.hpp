// SPDX-License-Identifier: Apache-2.0
/**
 * @file   util.hpp
 * @brief  Small helpers: stable hashing, float formatting, summary statistics.
 */
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace attnrobust {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

/// "%.17g"; non-finite values become JSON null.
std::string format_g17(double v);

/// splitmix64 step, used to derive independent per-example seeds.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double sample_std(std::span<const double> xs);
double median(std::span<const double> xs);

} // namespace attnrobust
