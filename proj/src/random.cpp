#include "postop/random.hpp"

#include <cmath>

namespace postop {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void philox_round(Philox4x32::Counter& c, const Philox4x32::Key& k) noexcept {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

constexpr double kTail = 3.6541528853610088;
constexpr double kArea = 0.00492867323399;

}  // namespace

namespace detail {

// Marsaglia-Tsang ziggurat, 256 layers. Layer i spans [0, edge[i]] and
// edge[i + 1] < edge[i]; layer 0 is the base strip plus the tail beyond kTail.
ZigguratTables::ZigguratTables() {
  auto f = [](double x) { return std::exp(-0.5 * x * x); };
  edge[0] = kArea / f(kTail);
  edge[1] = kTail;
  for (int i = 2; i < kLayers; ++i) edge[i] = std::sqrt(-2.0 * std::log(kArea / edge[i - 1] + f(edge[i - 1])));
  edge[kLayers] = 0.0;
  for (int i = 0; i <= kLayers; ++i) height[i] = f(edge[i]);
}

const ZigguratTables kZiggurat;

}  // namespace detail

Philox4x32::Counter Philox4x32::generate(Counter counter, Key key) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    philox_round(counter, key);
  }
  return counter;
}

void Philox4x32::generate_lanes(std::uint64_t block, std::uint32_t c2, std::uint32_t c3, Key key,
                                std::uint32_t* out) noexcept {
  // 64-bit lanes holding 32-bit words, so the products map onto widening
  // unsigned 32x32 vector multiplies.
  constexpr int L = kLanes;
  constexpr std::uint64_t kLow = 0xffffffffull;
  std::uint64_t x0[L], x1[L], x2[L], x3[L];
  for (int l = 0; l < L; ++l) {
    const std::uint64_t b = block + static_cast<std::uint64_t>(l);
    x0[l] = b & kLow;
    x1[l] = b >> 32;
    x2[l] = c2;
    x3[l] = c3;
  }
  std::uint64_t k0 = key[0];
  std::uint64_t k1 = key[1];
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k0 = (k0 + kWeyl0) & kLow;
      k1 = (k1 + kWeyl1) & kLow;
    }
    for (int l = 0; l < L; ++l) {
      const std::uint64_t p0 = (x0[l] & kLow) * static_cast<std::uint64_t>(kMul0);
      const std::uint64_t p1 = (x2[l] & kLow) * static_cast<std::uint64_t>(kMul1);
      const std::uint64_t n0 = (p1 >> 32) ^ x1[l] ^ k0;
      const std::uint64_t n2 = (p0 >> 32) ^ x3[l] ^ k1;
      x1[l] = p1 & kLow;
      x3[l] = p0 & kLow;
      x0[l] = n0;
      x2[l] = n2;
    }
  }
  for (int l = 0; l < L; ++l) {
    out[4 * l] = static_cast<std::uint32_t>(x0[l]);
    out[4 * l + 1] = static_cast<std::uint32_t>(x1[l]);
    out[4 * l + 2] = static_cast<std::uint32_t>(x2[l]);
    out[4 * l + 3] = static_cast<std::uint32_t>(x3[l]);
  }
}

RandomStream::RandomStream(std::uint64_t seed, std::uint32_t stream, StreamPurpose purpose) noexcept
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
      stream_(stream),
      purpose_(static_cast<std::uint32_t>(purpose)) {}

void RandomStream::refill() noexcept {
  Philox4x32::generate_lanes(block_, stream_, purpose_, key_, buffer_.data());
  block_ += Philox4x32::kLanes;
  used_ = 0;
}

std::uint32_t RandomStream::next_u32() noexcept {
  if (used_ >= static_cast<int>(buffer_.size())) refill();
  return buffer_[used_++];
}

// Two consecutive words; a word left over at the end of the buffer is skipped.
double RandomStream::normal_slow(int layer, bool negative, double x) noexcept {
  const detail::ZigguratTables& zt = detail::kZiggurat;
  for (;;) {
    if (layer == 0) {
      double a = 0.0;
      double b = 0.0;
      do {
        a = -std::log(uniform()) / kTail;
        b = -std::log(uniform());
      } while (b + b < a * a);
      return negative ? -(kTail + a) : kTail + a;
    }
    const double y = zt.height[layer] + uniform() * (zt.height[layer + 1] - zt.height[layer]);
    if (y < std::exp(-0.5 * x * x)) return negative ? -x : x;
    const std::uint64_t bits = next_u64();
    layer = static_cast<int>(bits & 0xff);
    negative = (bits >> 8) & 1u;
    x = static_cast<double>(bits >> 11) * 0x1.0p-53 * zt.edge[layer];
    if (x < zt.edge[layer + 1]) return negative ? -x : x;
  }
}

}  // namespace postop
