#include "cso/rng.hpp"

#include <cmath>
#include <numbers>

namespace cso {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_string(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<SeedTag> path) noexcept {
  std::uint64_t h = mix64(parent + kGolden);
  for (const auto& tag : path) h = mix64(h ^ mix64(tag.value() + kGolden));
  return h;
}

std::uint64_t RandomStream::next_u64() noexcept {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RandomStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int RandomStream::uniform_int(int n) noexcept {
  // Lemire's multiply-shift; bias is below 2^-32 for the small n used here.
  const auto x = next_u64() >> 32;
  return static_cast<int>((x * static_cast<std::uint64_t>(n)) >> 32);
}

double RandomStream::normal() noexcept {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace cso
