#pragma once

#include <cstdint>

namespace gdsrec {

/// Selects between the OpenMP kernels and the serial reference path. The
/// serial path is kept for testing and benchmarking; both produce the same
/// results up to floating-point reduction order.
enum class Exec { serial, parallel };

/// splitmix64 finalizer; used to derive independent per-node seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                    std::uint64_t c = 0) noexcept {
  return mix64(mix64(mix64(mix64(base) ^ a) ^ b) ^ c);
}

}  // namespace gdsrec
