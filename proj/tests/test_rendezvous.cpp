#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <random>
#include <string>

#include "megw/rendezvous.hpp"

using namespace megw;

namespace {

Bytes str_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

std::vector<WeightedCandidate<std::string>> four() { return {{"a", 1}, {"b", 1}, {"c", 2}, {"d", 2}}; }

}  // namespace

// Published FNV-1a 64-bit test vectors.
TEST(Fnv1a64, ReferenceVectors) {
  EXPECT_EQ(hrw::fnv1a64(str_bytes("")), 0xcbf29ce484222325ULL);
  EXPECT_EQ(hrw::fnv1a64(str_bytes("a")), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hrw::fnv1a64(str_bytes("foobar")), 0x85944171f73967e8ULL);
}

TEST(UnitInterval, StaysOpen) {
  EXPECT_GT(hrw::unit_interval(0), 0.0);
  EXPECT_LT(hrw::unit_interval(std::numeric_limits<std::uint64_t>::max()), 1.0);
}

TEST(Rendezvous, SingleCandidateAndErrors) {
  const std::vector<WeightedCandidate<std::string>> one{{"only", 3}};
  EXPECT_EQ(rendezvous_select(str_bytes("k"), one), "only");
  EXPECT_THROW(rendezvous_select(str_bytes("k"), std::vector<WeightedCandidate<std::string>>{}), SelectError);
  for (double bad : {0.0, -1.0, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()})
    EXPECT_THROW(rendezvous_select(str_bytes("k"), std::vector<WeightedCandidate<std::string>>{{"x", bad}}),
                 SelectError);
}

TEST(Rendezvous, OrderIndependent) {
  auto c = four();
  std::mt19937 rng(5);
  for (int k = 0; k < 500; ++k) {
    const auto key = key_bytes(static_cast<std::uint64_t>(k));
    const auto base = rendezvous_select(key, c);
    auto shuffled = c;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    ASSERT_EQ(rendezvous_select(key, shuffled), base);
  }
}

// Pearson chi-square against weights {1,1,2,2}; 16.266 is the 0.999 quantile
// for three degrees of freedom.
TEST(Rendezvous, WeightProportionalityChiSquare) {
  const auto c = four();
  std::map<std::string, double> observed;
  constexpr int kKeys = 100000;
  for (int k = 0; k < kKeys; ++k) observed[rendezvous_select(key_bytes(static_cast<std::uint64_t>(k)), c)] += 1;
  double chi2 = 0;
  for (const auto& cand : c) {
    const double expected = kKeys * cand.weight / 6.0;
    chi2 += (observed[cand.id] - expected) * (observed[cand.id] - expected) / expected;
  }
  EXPECT_LT(chi2, 16.266) << "a=" << observed["a"] << " b=" << observed["b"] << " c=" << observed["c"]
                          << " d=" << observed["d"];
}

TEST(Rendezvous, RemovalRemapsOnlyTheRemovedCandidatesKeys) {
  const auto c = four();
  for (std::size_t removed = 0; removed < c.size(); ++removed) {
    auto fewer = c;
    fewer.erase(fewer.begin() + static_cast<std::ptrdiff_t>(removed));
    std::size_t moved = 0;
    for (std::uint64_t k = 0; k < 10000; ++k) {
      const auto key = key_bytes(k);
      const auto before = rendezvous_select(key, c);
      const auto after = rendezvous_select(key, fewer);
      if (before != c[removed].id) {
        ASSERT_EQ(before, after) << "key " << k;
      } else {
        ++moved;
      }
    }
    EXPECT_GT(moved, 0u);
  }
}

TEST(Rendezvous, AdditionOnlyMovesKeysToTheNewcomer) {
  const auto c = four();
  auto more = c;
  more.push_back({"e", 1});
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const auto key = key_bytes(k);
    const auto after = rendezvous_select(key, more);
    if (after != "e") {
      ASSERT_EQ(after, rendezvous_select(key, c));
    }
  }
}

TEST(Rendezvous, AddressCandidates) {
  const std::vector<WeightedCandidate<Ipv4Address>> dips{{Ipv4Address::parse("10.1.1.10"), 1},
                                                         {Ipv4Address::parse("10.1.1.11"), 1}};
  std::map<Ipv4Address, int> hits;
  for (std::uint32_t ip = 0; ip < 1000; ++ip) ++hits[rendezvous_select(key_bytes(Ipv4Address(0xAC100000 + ip)), dips)];
  EXPECT_EQ(hits.size(), 2u);
}
