#pragma once

// Weighted highest-random-weight selection. For key k each candidate c gets
// score = -w_c / ln(u(k, c)) with u uniform in (0,1); the maximum wins. The
// winner's probability is w_c / sum(w), and removing a losing candidate never
// changes the winner.

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "megw/bytes.hpp"
#include "megw/errors.hpp"
#include "megw/ipv4.hpp"

namespace megw {

template <class Id>
struct WeightedCandidate {
  Id id;
  double weight = 1.0;
};

namespace hrw {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(ByteView data, std::uint64_t h = kFnvOffset) {
  for (auto c : data) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

// MurmurHash3 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

inline std::uint64_t identity_hash(std::string_view s) {
  return mix64(fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
}
inline std::uint64_t identity_hash(const std::string& s) { return identity_hash(std::string_view(s)); }
inline std::uint64_t identity_hash(Ipv4Address a) {
  std::array<std::uint8_t, 4> b{};
  set_u32(b, 0, a.value());
  return mix64(fnv1a64(b));
}
template <std::integral T>
std::uint64_t identity_hash(T v) {
  std::array<std::uint8_t, 8> b{};
  set_u32(b, 0, static_cast<std::uint32_t>(static_cast<std::uint64_t>(v) >> 32));
  set_u32(b, 4, static_cast<std::uint32_t>(v));
  return mix64(fnv1a64(b));
}

// Maps a 64-bit hash to the open interval (0,1). 52 bits keep the upper end
// representable below 1.
inline constexpr double unit_interval(std::uint64_t h) {
  return (static_cast<double>(h >> 12) + 0.5) * 0x1.0p-52;
}

inline std::uint64_t pair_hash(std::uint64_t key_hash, std::uint64_t candidate_hash) {
  return mix64(key_hash ^ mix64(candidate_hash + 0x9e3779b97f4a7c15ULL));
}

inline double score(std::uint64_t key_hash, std::uint64_t candidate_hash, double weight) {
  return -weight / std::log(unit_interval(pair_hash(key_hash, candidate_hash)));
}

}  // namespace hrw

inline Bytes key_bytes(Ipv4Address a) {
  Bytes b;
  put_u32(b, a.value());
  return b;
}

inline Bytes key_bytes(std::uint64_t v) {
  Bytes b;
  put_u32(b, static_cast<std::uint32_t>(v >> 32));
  put_u32(b, static_cast<std::uint32_t>(v));
  return b;
}

/// Index of the winning candidate. Ties (practically impossible) go to the
/// candidate with the smaller identity hash, so the result never depends on
/// candidate order.
template <class Id>
std::size_t rendezvous_index(ByteView key, std::span<const WeightedCandidate<Id>> candidates) {
  if (candidates.empty()) throw SelectError("rendezvous selection over an empty candidate list");
  const std::uint64_t kh = hrw::mix64(hrw::fnv1a64(key));
  std::size_t best = 0;
  double best_score = -1.0;
  std::uint64_t best_id_hash = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (!(c.weight > 0.0) || !std::isfinite(c.weight))
      throw SelectError("rendezvous candidate weight must be positive and finite");
    const std::uint64_t ih = hrw::identity_hash(c.id);
    const double s = hrw::score(kh, ih, c.weight);
    if (s > best_score || (s == best_score && ih < best_id_hash)) {
      best = i;
      best_score = s;
      best_id_hash = ih;
    }
  }
  return best;
}

template <class Id>
const Id& rendezvous_select(ByteView key, std::span<const WeightedCandidate<Id>> candidates) {
  return candidates[rendezvous_index(key, candidates)].id;
}

template <class Id>
const Id& rendezvous_select(ByteView key, const std::vector<WeightedCandidate<Id>>& candidates) {
  return rendezvous_select(key, std::span<const WeightedCandidate<Id>>(candidates));
}

}  // namespace megw
