#include <doctest.h>

#include <cmath>
#include <vector>

#include "postop/random.hpp"

using namespace postop;

TEST_CASE("philox known answers") {
  auto zero = Philox4x32::generate({0, 0, 0, 0}, {0, 0});
  CHECK(zero == Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  auto ones = Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(ones == Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
}

TEST_CASE("lane generation matches single blocks") {
  const Philox4x32::Key key{123u, 456u};
  std::uint32_t lanes[4 * Philox4x32::kLanes];
  const std::uint64_t first = (1ull << 32) - 3;  // straddles the low counter word
  Philox4x32::generate_lanes(first, 7u, 9u, key, lanes);
  for (int l = 0; l < Philox4x32::kLanes; ++l) {
    const std::uint64_t b = first + l;
    auto ref = Philox4x32::generate({static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32), 7u, 9u}, key);
    for (int w = 0; w < 4; ++w) CHECK(lanes[4 * l + w] == ref[w]);
  }
}

TEST_CASE("streams are deterministic and distinct") {
  RandomStream a(42, 3, StreamPurpose::kTest);
  RandomStream b(42, 3, StreamPurpose::kTest);
  RandomStream c(42, 4, StreamPurpose::kTest);
  RandomStream d(42, 3, StreamPurpose::kBranching);
  int same_c = 0;
  int same_d = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    same_c += va == c.next_u64();
    same_d += va == d.next_u64();
  }
  CHECK(same_c == 0);
  CHECK(same_d == 0);
}

TEST_CASE("uniform stays inside the open unit interval") {
  RandomStream rng(1, 0, StreamPurpose::kTest);
  double mean = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    mean += u / n;
  }
  CHECK(std::abs(mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("ziggurat normal moments and tails") {
  RandomStream rng(7, 1, StreamPurpose::kTest);
  const int n = 4000000;
  double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
  int beyond3 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    m1 += z;
    m2 += z * z;
    m3 += z * z * z;
    m4 += z * z * z * z;
    beyond3 += std::abs(z) > 3.0;
  }
  m1 /= n;
  m2 /= n;
  m3 /= n;
  m4 /= n;
  CHECK(std::abs(m1) < 4.0 / std::sqrt(n));
  CHECK(std::abs(m2 - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(m3) < 4.0 * std::sqrt(15.0 / n));
  CHECK(std::abs(m4 - 3.0) < 4.0 * std::sqrt(96.0 / n));
  // P(|Z| > 3) = 0.0026998
  const double p = 0.0026998;
  CHECK(std::abs(beyond3 / double(n) - p) < 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("normal cdf at fixed quantiles") {
  RandomStream rng(9, 2, StreamPurpose::kTest);
  const std::vector<double> q = {-2.0, -1.0, -0.25, 0.0, 0.5, 1.5, 2.5};
  const int n = 2000000;
  std::vector<int> below(q.size(), 0);
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    for (std::size_t k = 0; k < q.size(); ++k) below[k] += z <= q[k];
  }
  for (std::size_t k = 0; k < q.size(); ++k) {
    const double p = 0.5 * std::erfc(-q[k] / std::sqrt(2.0));
    CHECK(std::abs(below[k] / double(n) - p) < 4.5 * std::sqrt(p * (1 - p) / n));
  }
}
