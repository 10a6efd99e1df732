#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>

namespace cso {

std::uint64_t mix64(std::uint64_t x) noexcept;

/// FNV-1a over the bytes of `text`.
std::uint64_t hash_string(std::string_view text) noexcept;

/// A tag used when deriving child seeds: either a label or an integer.
class SeedTag {
 public:
  SeedTag(std::string_view label) : value_(hash_string(label)) {}
  SeedTag(const char* label) : value_(hash_string(label)) {}
  SeedTag(const std::string& label) : value_(hash_string(label)) {}
  template <typename T, typename = std::enable_if_t<std::is_integral_v<T>>>
  SeedTag(T value) : value_(static_cast<std::uint64_t>(value) ^ 0xa0761d6478bd642fULL) {}

  std::uint64_t value() const noexcept { return value_; }

 private:
  std::uint64_t value_;
};

/// Derives an independent child seed from `parent` and an ordered tag path.
/// Different paths give unrelated streams; the result does not depend on
/// evaluation order elsewhere in the program.
std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<SeedTag> path) noexcept;

/// Counter-based SplitMix64 stream. The i-th draw is a pure function of
/// (key, i), so a stream is fully described by its key and draw count.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) noexcept;
  /// Standard normal via Box-Muller (consumes two draws).
  double normal() noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace cso
