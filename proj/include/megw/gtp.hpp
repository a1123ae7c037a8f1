#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>

#include "megw/bytes.hpp"
#include "megw/errors.hpp"
#include "megw/ipv4.hpp"

namespace megw {

inline constexpr std::uint16_t kGtpuPort = 2152;
inline constexpr std::size_t kGtpuHeaderLen = 8;
// Version 1, protocol type GTP, no E/S/PN flags.
inline constexpr std::uint8_t kGtpuFlags = 0x30;
inline constexpr std::size_t kMaxGtpuInner = 65507 - kGtpuHeaderLen;

enum class GtpMessageType : std::uint8_t {
  GPdu = 0xFF,
  EndMarker = 0xFE,
};

inline const char* to_string(GtpMessageType t) {
  return t == GtpMessageType::GPdu ? "GPdu" : "EndMarker";
}

struct GtpuPacket {
  Ipv4Address outer_src;
  Ipv4Address outer_dst;
  std::uint32_t teid = 0;
  GtpMessageType message_type = GtpMessageType::GPdu;
  Bytes inner;

  friend bool operator==(const GtpuPacket&, const GtpuPacket&) = default;
};

struct FiveTuple {
  Ipv4Address src_ip;
  Ipv4Address dst_ip;
  std::uint8_t proto = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;

  FiveTuple reversed() const { return {dst_ip, src_ip, proto, dst_port, src_port}; }

  std::string to_string() const {
    return src_ip.to_string() + ':' + std::to_string(src_port) + "->" + dst_ip.to_string() + ':' +
           std::to_string(dst_port) + '/' + std::to_string(proto);
  }

  friend auto operator<=>(const FiveTuple&, const FiveTuple&) = default;
};

enum class PacketClass { ControlPlane, UpstreamGtp, DownstreamGtp, EndMarker, PlainIp };

inline const char* to_string(PacketClass c) {
  switch (c) {
    case PacketClass::ControlPlane: return "ControlPlane";
    case PacketClass::UpstreamGtp: return "UpstreamGtp";
    case PacketClass::DownstreamGtp: return "DownstreamGtp";
    case PacketClass::EndMarker: return "EndMarker";
    case PacketClass::PlainIp: return "PlainIp";
  }
  return "?";
}

enum class Direction { FromRan, FromCore, FromCluster };

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::FromRan: return "FromRan";
    case Direction::FromCore: return "FromCore";
    case Direction::FromCluster: return "FromCluster";
  }
  return "?";
}

/// Encodes outer IPv4 + UDP (port 2152, checksum 0) + GTPv1-U header + inner.
/// The inner bytes are opaque here; callers keep G-PDU payloads IPv4.
inline Bytes encode_gtpu(const GtpuPacket& pkt) {
  if (pkt.inner.size() > kMaxGtpuInner)
    throw EncodeError("GTP-U payload of " + std::to_string(pkt.inner.size()) + " bytes exceeds " +
                      std::to_string(kMaxGtpuInner));
  const std::size_t udp_len = kUdpHeaderLen + kGtpuHeaderLen + pkt.inner.size();
  Bytes out;
  out.reserve(kIpv4HeaderLen + udp_len);
  Ipv4Header h;
  h.src = pkt.outer_src;
  h.dst = pkt.outer_dst;
  h.protocol = ipproto::kUdp;
  write_ipv4_header(out, h, udp_len);
  put_u16(out, kGtpuPort);
  put_u16(out, kGtpuPort);
  put_u16(out, static_cast<std::uint16_t>(udp_len));
  put_u16(out, 0);
  put_u8(out, kGtpuFlags);
  put_u8(out, static_cast<std::uint8_t>(pkt.message_type));
  put_u16(out, static_cast<std::uint16_t>(pkt.inner.size()));
  put_u32(out, pkt.teid);
  out.insert(out.end(), pkt.inner.begin(), pkt.inner.end());
  return out;
}

/// Strict inverse of encode_gtpu. Throws DecodeError; never returns a
/// partially filled packet.
inline GtpuPacket decode_gtpu(ByteView bytes) {
  const auto ip = parse_ipv4(bytes);
  if (ip.total_len != bytes.size())
    throw DecodeError(DecodeErrc::Length, "trailing bytes after IPv4 packet");
  if (ip.protocol != ipproto::kUdp) throw DecodeError(DecodeErrc::NotGtp, "outer protocol is not UDP");
  auto udp = bytes.subspan(ip.header_len);
  if (udp.size() < kUdpHeaderLen) throw DecodeError(DecodeErrc::Truncated, "UDP header");
  if (get_u16(udp, 2) != kGtpuPort) throw DecodeError(DecodeErrc::NotGtp, "UDP port is not 2152");
  if (get_u16(udp, 4) != udp.size()) throw DecodeError(DecodeErrc::Length, "UDP length mismatch");
  auto gtp = udp.subspan(kUdpHeaderLen);
  if (gtp.size() < kGtpuHeaderLen) throw DecodeError(DecodeErrc::Truncated, "GTP-U header");
  const std::uint8_t flags = gtp[0];
  if ((flags >> 5) != 1) throw DecodeError(DecodeErrc::Version, "GTP version is not 1");
  if ((flags & 0x1F) != 0x10) throw DecodeError(DecodeErrc::Flags, "unsupported GTP-U flags");
  GtpuPacket pkt;
  switch (gtp[1]) {
    case 0xFF: pkt.message_type = GtpMessageType::GPdu; break;
    case 0xFE: pkt.message_type = GtpMessageType::EndMarker; break;
    default:
      throw DecodeError(DecodeErrc::MessageType, "GTP message type " + std::to_string(gtp[1]));
  }
  if (get_u16(gtp, 2) != gtp.size() - kGtpuHeaderLen)
    throw DecodeError(DecodeErrc::Length, "GTP length mismatch");
  auto inner = gtp.subspan(kGtpuHeaderLen);
  pkt.outer_src = ip.src;
  pkt.outer_dst = ip.dst;
  pkt.teid = get_u32(gtp, 4);
  pkt.inner.assign(inner.begin(), inner.end());
  return pkt;
}

inline FiveTuple inner_five_tuple(ByteView inner) {
  const auto ip = parse_ipv4(inner);
  FiveTuple t{ip.src, ip.dst, ip.protocol, 0, 0};
  const bool first_fragment = (get_u16(inner, 6) & 0x1FFF) == 0;
  if (!first_fragment) return t;
  auto l4 = inner.subspan(ip.header_len, ip.total_len - ip.header_len);
  if (ip.protocol == ipproto::kTcp || ip.protocol == ipproto::kUdp) {
    const std::size_t need = ip.protocol == ipproto::kTcp ? kTcpHeaderLen : kUdpHeaderLen;
    if (l4.size() < need) throw DecodeError(DecodeErrc::Truncated, "transport header");
    t.src_port = get_u16(l4, 0);
    t.dst_port = get_u16(l4, 2);
  }
  return t;
}

/// Total: unparseable input is PlainIp.
inline PacketClass classify(ByteView bytes, Direction direction) {
  Ipv4Header ip;
  try {
    ip = parse_ipv4(bytes);
  } catch (const DecodeError&) {
    return PacketClass::PlainIp;
  }
  if (ip.protocol == ipproto::kSctp) return PacketClass::ControlPlane;
  if (ip.protocol != ipproto::kUdp) return PacketClass::PlainIp;
  try {
    const auto pkt = decode_gtpu(bytes);
    if (pkt.message_type == GtpMessageType::EndMarker) return PacketClass::EndMarker;
    return direction == Direction::FromRan ? PacketClass::UpstreamGtp : PacketClass::DownstreamGtp;
  } catch (const DecodeError&) {
    return PacketClass::PlainIp;
  }
}

}  // namespace megw

template <>
struct std::hash<megw::FiveTuple> {
  std::size_t operator()(const megw::FiveTuple& t) const noexcept {
    std::uint64_t h = (std::uint64_t{t.src_ip.value()} << 32) | t.dst_ip.value();
    std::uint64_t l = (std::uint64_t{t.proto} << 32) | (std::uint64_t{t.src_port} << 16) | t.dst_port;
    h ^= l + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};
