#pragma once

#include <array>
#include <charconv>
#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "megw/bytes.hpp"
#include "megw/errors.hpp"

namespace megw {

class Ipv4Address {
 public:
  constexpr Ipv4Address() = default;
  constexpr explicit Ipv4Address(std::uint32_t host_order) : value_(host_order) {}
  constexpr Ipv4Address(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d)
      : value_((std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) | d) {}

  static Ipv4Address parse(std::string_view text) {
    std::uint32_t v = 0;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int octet = 0; octet < 4; ++octet) {
      unsigned part = 0;
      auto [next, ec] = std::from_chars(p, end, part);
      if (ec != std::errc{} || part > 255 || next == p)
        throw std::invalid_argument("bad IPv4 address '" + std::string(text) + "'");
      v = (v << 8) | part;
      p = next;
      if (octet < 3) {
        if (p == end || *p != '.')
          throw std::invalid_argument("bad IPv4 address '" + std::string(text) + "'");
        ++p;
      }
    }
    if (p != end) throw std::invalid_argument("bad IPv4 address '" + std::string(text) + "'");
    return Ipv4Address(v);
  }

  constexpr std::uint32_t value() const { return value_; }

  std::string to_string() const {
    return std::to_string(value_ >> 24) + '.' + std::to_string((value_ >> 16) & 0xFF) + '.' +
           std::to_string((value_ >> 8) & 0xFF) + '.' + std::to_string(value_ & 0xFF);
  }

  friend constexpr auto operator<=>(Ipv4Address, Ipv4Address) = default;

 private:
  std::uint32_t value_ = 0;
};

namespace ipproto {
inline constexpr std::uint8_t kIcmp = 1;
inline constexpr std::uint8_t kTcp = 6;
inline constexpr std::uint8_t kUdp = 17;
inline constexpr std::uint8_t kSctp = 132;
}  // namespace ipproto

inline constexpr std::size_t kIpv4HeaderLen = 20;
inline constexpr std::size_t kUdpHeaderLen = 8;
inline constexpr std::size_t kTcpHeaderLen = 20;

struct Ipv4Header {
  Ipv4Address src;
  Ipv4Address dst;
  std::uint8_t protocol = 0;
  std::uint8_t ttl = 64;
  std::uint16_t identification = 0;
  std::size_t header_len = kIpv4HeaderLen;
  std::size_t total_len = kIpv4HeaderLen;
};

// One's-complement sum folded to 16 bits, not yet inverted.
inline std::uint32_t ones_sum(ByteView data, std::uint32_t acc = 0) {
  std::size_t i = 0;
  for (; i + 1 < data.size(); i += 2) acc += (std::uint32_t{data[i]} << 8) | data[i + 1];
  if (i < data.size()) acc += std::uint32_t{data[i]} << 8;
  while (acc >> 16) acc = (acc & 0xFFFF) + (acc >> 16);
  return acc;
}

inline std::uint16_t internet_checksum(ByteView data) {
  return static_cast<std::uint16_t>(~ones_sum(data) & 0xFFFF);
}

// Parses and validates the fixed part of an IPv4 header. Options are skipped,
// not interpreted.
inline Ipv4Header parse_ipv4(ByteView b) {
  if (b.size() < kIpv4HeaderLen) throw DecodeError(DecodeErrc::Truncated, "IPv4 header");
  if ((b[0] >> 4) != 4) throw DecodeError(DecodeErrc::NotIpv4, "IP version is not 4");
  Ipv4Header h;
  h.header_len = std::size_t{b[0] & 0x0Fu} * 4;
  if (h.header_len < kIpv4HeaderLen) throw DecodeError(DecodeErrc::Length, "IHL below 5");
  h.total_len = get_u16(b, 2);
  if (h.total_len < h.header_len) throw DecodeError(DecodeErrc::Length, "IPv4 total length");
  if (h.total_len > b.size()) throw DecodeError(DecodeErrc::Truncated, "IPv4 payload");
  h.identification = get_u16(b, 4);
  h.ttl = b[8];
  h.protocol = b[9];
  h.src = Ipv4Address(get_u32(b, 12));
  h.dst = Ipv4Address(get_u32(b, 16));
  return h;
}

inline void write_ipv4_header(Bytes& out, const Ipv4Header& h, std::size_t payload_len) {
  const auto start = out.size();
  put_u8(out, 0x45);
  put_u8(out, 0);
  put_u16(out, static_cast<std::uint16_t>(kIpv4HeaderLen + payload_len));
  put_u16(out, h.identification);
  put_u16(out, 0x4000);  // DF
  put_u8(out, h.ttl);
  put_u8(out, h.protocol);
  put_u16(out, 0);
  put_u32(out, h.src.value());
  put_u32(out, h.dst.value());
  auto hdr = std::span<std::uint8_t>(out).subspan(start, kIpv4HeaderLen);
  set_u16(hdr, 10, internet_checksum(hdr));
}

inline Bytes build_ipv4(Ipv4Address src, Ipv4Address dst, std::uint8_t protocol, ByteView payload) {
  if (payload.size() > 0xFFFF - kIpv4HeaderLen) throw EncodeError("IPv4 payload too large");
  Bytes out;
  out.reserve(kIpv4HeaderLen + payload.size());
  Ipv4Header h;
  h.src = src;
  h.dst = dst;
  h.protocol = protocol;
  write_ipv4_header(out, h, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline bool ipv4_header_checksum_ok(ByteView packet) {
  if (packet.size() < kIpv4HeaderLen) return false;
  std::size_t ihl = std::size_t{packet[0] & 0x0Fu} * 4;
  if (ihl < kIpv4HeaderLen || ihl > packet.size()) return false;
  return ones_sum(packet.first(ihl)) == 0xFFFF;
}

// Recomputes the TCP or UDP checksum of a complete IPv4 packet in place.
// Other protocols are left untouched.
inline void refresh_l4_checksum(std::span<std::uint8_t> packet) {
  auto h = parse_ipv4(packet);
  std::size_t off;
  if (h.protocol == ipproto::kTcp) {
    off = 16;
    if (h.total_len < h.header_len + kTcpHeaderLen) return;
  } else if (h.protocol == ipproto::kUdp) {
    off = 6;
    if (h.total_len < h.header_len + kUdpHeaderLen) return;
  } else {
    return;
  }
  auto seg = packet.subspan(h.header_len, h.total_len - h.header_len);
  set_u16(seg, off, 0);
  std::array<std::uint8_t, 12> pseudo{};
  set_u32(pseudo, 0, h.src.value());
  set_u32(pseudo, 4, h.dst.value());
  pseudo[9] = h.protocol;
  set_u16(pseudo, 10, static_cast<std::uint16_t>(seg.size()));
  auto sum = ones_sum(seg, ones_sum(pseudo));
  auto csum = static_cast<std::uint16_t>(~sum & 0xFFFF);
  if (h.protocol == ipproto::kUdp && csum == 0) csum = 0xFFFF;
  set_u16(seg, off, csum);
}

inline void refresh_ipv4_checksum(std::span<std::uint8_t> packet) {
  std::size_t ihl = std::size_t{packet[0] & 0x0Fu} * 4;
  set_u16(packet, 10, 0);
  set_u16(packet, 10, internet_checksum(packet.first(ihl)));
}

// Rewrites an address of a well-formed IPv4 packet and fixes both checksums.
inline void rewrite_ipv4_dst(std::span<std::uint8_t> packet, Ipv4Address dst) {
  set_u32(packet, 16, dst.value());
  refresh_ipv4_checksum(packet);
  refresh_l4_checksum(packet);
}

inline void rewrite_ipv4_src(std::span<std::uint8_t> packet, Ipv4Address src) {
  set_u32(packet, 12, src.value());
  refresh_ipv4_checksum(packet);
  refresh_l4_checksum(packet);
}

inline Bytes build_udp(Ipv4Address src, Ipv4Address dst, std::uint16_t sport, std::uint16_t dport,
                       ByteView payload) {
  Bytes seg;
  put_u16(seg, sport);
  put_u16(seg, dport);
  put_u16(seg, static_cast<std::uint16_t>(kUdpHeaderLen + payload.size()));
  put_u16(seg, 0);
  seg.insert(seg.end(), payload.begin(), payload.end());
  auto pkt = build_ipv4(src, dst, ipproto::kUdp, seg);
  refresh_l4_checksum(pkt);
  return pkt;
}

inline Bytes build_tcp(Ipv4Address src, Ipv4Address dst, std::uint16_t sport, std::uint16_t dport,
                       ByteView payload, std::uint32_t seq = 1, std::uint32_t ack = 1) {
  Bytes seg;
  put_u16(seg, sport);
  put_u16(seg, dport);
  put_u32(seg, seq);
  put_u32(seg, ack);
  put_u8(seg, 0x50);  // data offset 5
  put_u8(seg, 0x18);  // PSH|ACK
  put_u16(seg, 0xFFFF);
  put_u16(seg, 0);
  put_u16(seg, 0);
  seg.insert(seg.end(), payload.begin(), payload.end());
  auto pkt = build_ipv4(src, dst, ipproto::kTcp, seg);
  refresh_l4_checksum(pkt);
  return pkt;
}

inline Bytes build_icmp_echo(Ipv4Address src, Ipv4Address dst, std::uint16_t id, std::uint16_t seq,
                             ByteView payload) {
  Bytes msg;
  put_u8(msg, 8);
  put_u8(msg, 0);
  put_u16(msg, 0);
  put_u16(msg, id);
  put_u16(msg, seq);
  msg.insert(msg.end(), payload.begin(), payload.end());
  set_u16(msg, 2, internet_checksum(msg));
  return build_ipv4(src, dst, ipproto::kIcmp, msg);
}

}  // namespace megw

template <>
struct std::hash<megw::Ipv4Address> {
  std::size_t operator()(megw::Ipv4Address a) const noexcept {
    return std::hash<std::uint32_t>{}(a.value());
  }
};
