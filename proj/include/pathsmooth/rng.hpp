#ifndef PATHSMOOTH_RNG_HPP_
#define PATHSMOOTH_RNG_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace pathsmooth {

namespace detail {

// Philox4x64-10 block cipher (Salmon et al. 2011). Counter-based: the
// generator state is (key, counter) and every 128-bit key yields an
// independent stream, which is what makes per-repetition and per-particle
// substreams cheap and reproducible regardless of thread count.
inline std::array<std::uint64_t, 4> philox4x64_block(
    std::array<std::uint64_t, 4> ctr, std::array<std::uint64_t, 2> key) {
  constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
  constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
  constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
  constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;
  for (int round = 0; round < 10; ++round) {
    const unsigned __int128 p0 = static_cast<unsigned __int128>(kMul0) * ctr[0];
    const unsigned __int128 p1 = static_cast<unsigned __int128>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint64_t>(p0 >> 64);
    const auto lo0 = static_cast<std::uint64_t>(p0);
    const auto hi1 = static_cast<std::uint64_t>(p1 >> 64);
    const auto lo1 = static_cast<std::uint64_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

// SplitMix64 finalizer, used to derive substream ids.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Splittable counter-based generator. `stream(id)` derives an independent
// generator; chained derivations (e.g. per repetition, then per particle)
// stay independent, so parallel and serial schedules see identical draws.
class Rng {
 public:
  Rng() : Rng(0, 0) {}
  explicit Rng(std::uint64_t seed, std::uint64_t stream_id = 0)
      : key_{seed, stream_id}, counter_{0, 0, 0, 0}, pos_(4) {}

  Rng stream(std::uint64_t id) const {
    return Rng(key_[0], detail::mix64(key_[1] + detail::mix64(id)));
  }

  std::uint64_t next_u64() {
    if (pos_ == 4) {
      block_ = detail::philox4x64_block(counter_, key_);
      pos_ = 0;
      if (++counter_[0] == 0 && ++counter_[1] == 0 && ++counter_[2] == 0) {
        ++counter_[3];
      }
    }
    return block_[pos_++];
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

 private:
  std::array<std::uint64_t, 2> key_;
  std::array<std::uint64_t, 4> counter_;
  std::array<std::uint64_t, 4> block_{};
  unsigned pos_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Index of the cdf cell containing u, by binary search. `cdf` must be
// nondecreasing with cdf.back() ~ 1.
inline std::size_t sample_from_cdf(std::span<const double> cdf, double u) {
  std::size_t lo = 0, hi = cdf.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (u < cdf[mid]) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

inline std::vector<double> cdf_from_weights(std::span<const double> weights) {
  std::vector<double> cdf(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cdf[i] = acc;
  }
  return cdf;
}

}  // namespace pathsmooth

#endif  // PATHSMOOTH_RNG_HPP_
