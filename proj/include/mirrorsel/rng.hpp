#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace mirrorsel {

/// Counter-based generator (Philox4x32-10) keyed by a 64-bit seed and a
/// 64-bit stream id. The same (seed, stream) pair always yields the same
/// sequence; distinct stream ids under one seed give independent sequences.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  /// Standard normal via the Box-Muller transform.
  double normal() noexcept;
  /// Student-t with `dof` degrees of freedom, Z / sqrt(chi2_dof / dof).
  double student_t(int dof) noexcept;
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Child generator on a derived stream; does not advance this one.
  Rng substream(std::uint64_t id) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// Injective in `index` for a fixed base: distinct run indices never share a seed.
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index) noexcept;

/// Stream ids used by the library. Kept in one place so that no two
/// consumers of the same seed draw from the same stream.
namespace streams {
inline constexpr std::uint64_t kDesign = 1;
inline constexpr std::uint64_t kNoise = 2;
inline constexpr std::uint64_t kSignal = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kSchedule = 6;
inline constexpr std::uint64_t kDropout = 7;
inline constexpr std::uint64_t kLabels = 8;
inline constexpr std::uint64_t kDiag = 9;
inline constexpr std::uint64_t kSpikeRow = 10;
inline constexpr std::uint64_t kSpikeCol = 11;
}  // namespace streams

}  // namespace mirrorsel
