#pragma once

#include <array>
#include <cstdint>

namespace postop {

// Philox4x32-10 block function (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter counter, Key key) noexcept;

  // kLanes consecutive blocks (block, block + 1, ...) for fixed c2, c3; the
  // output is the concatenation of the individual blocks.
  static constexpr int kLanes = 16;
  static void generate_lanes(std::uint64_t block, std::uint32_t c2, std::uint32_t c3, Key key,
                             std::uint32_t* out) noexcept;
};

namespace detail {

struct ZigguratTables {
  static constexpr int kLayers = 256;
  double edge[kLayers + 1];
  double height[kLayers + 1];
  ZigguratTables();
};

extern const ZigguratTables kZiggurat;

}  // namespace detail

// Independent sub-streams are addressed by (path index, purpose). Changing the
// number of paths never perturbs the draws of existing paths.
enum class StreamPurpose : std::uint32_t {
  kObservation = 1,
  kInitialState = 2,
  kParticleNoise = 3,
  kBranching = 4,
  kJointPath = 5,
  kJointInitial = 6,
  kEuropean = 7,
  kNestedMonteCarlo = 8,
  kFilterPath = 9,
  kTest = 100,
};

// Counter-based random stream. The key is the master seed; the counter packs
// the block index (64 bits), the stream index and the purpose.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint32_t stream, StreamPurpose purpose) noexcept;

  std::uint32_t next_u32() noexcept;

  // Two consecutive words; a word left over at the end of the buffer is skipped.
  std::uint64_t next_u64() noexcept {
    if (used_ + 2 > static_cast<int>(buffer_.size())) refill();
    const std::uint64_t lo = buffer_[used_];
    const std::uint64_t hi = buffer_[used_ + 1];
    used_ += 2;
    return (hi << 32) | lo;
  }

  // Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  // Standard normal via a 256-layer ziggurat.
  double normal() noexcept {
    const std::uint64_t bits = next_u64();
    const int layer = static_cast<int>(bits & 0xff);
    const double x = static_cast<double>(bits >> 11) * 0x1.0p-53 * detail::kZiggurat.edge[layer];
    if (x < detail::kZiggurat.edge[layer + 1]) return ((bits >> 8) & 1u) ? -x : x;
    return normal_slow(layer, ((bits >> 8) & 1u) != 0, x);
  }

  std::uint64_t blocks_generated() const noexcept { return block_; }

 private:
  void refill() noexcept;
  double normal_slow(int layer, bool negative, double x) noexcept;

  Philox4x32::Key key_;
  std::uint32_t stream_;
  std::uint32_t purpose_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4 * Philox4x32::kLanes> buffer_{};
  int used_ = 4 * Philox4x32::kLanes;
};

}  // namespace postop
