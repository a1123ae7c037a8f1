#pragma once

// Minimal S1AP stand-in. Carries the four procedures the gateway listens to,
// with the UE address surfaced as a plain field instead of inside a NAS PDU.
//
// Wire layout (all integers big-endian):
//   u16 length of everything that follows
//   u8  kind                     1..4, see S1apKind
//   u32 mme_ue_id
//   u32 enb_ue_id
//   u32 ue_ip
//   u32 enb_addr
//   u32 sgw_addr
//   u8  bearer count             1..255
//   bearer count x {
//     u8  bearer_id
//     u32 teid
//     u32 transport_addr
//     u32 paired_teid            0 when the message does not carry it
//   }

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "megw/bytes.hpp"
#include "megw/errors.hpp"
#include "megw/ipv4.hpp"

namespace megw {

inline constexpr std::uint16_t kS1apSctpPort = 36412;
inline constexpr std::size_t kSctpCommonHeaderLen = 12;

enum class S1apKind : std::uint8_t {
  InitialContextSetupRequest = 1,
  InitialContextSetupResponse = 2,
  PathSwitchRequest = 3,
  PathSwitchAcknowledge = 4,
};

inline const char* to_string(S1apKind k) {
  switch (k) {
    case S1apKind::InitialContextSetupRequest: return "InitialContextSetupRequest";
    case S1apKind::InitialContextSetupResponse: return "InitialContextSetupResponse";
    case S1apKind::PathSwitchRequest: return "PathSwitchRequest";
    case S1apKind::PathSwitchAcknowledge: return "PathSwitchAcknowledge";
  }
  return "?";
}

struct BearerItem {
  std::uint8_t bearer_id = 0;
  // Upstream (SGW-side) TEID on request kinds, downstream (eNB-side) TEID on
  // response/acknowledge kinds.
  std::uint32_t teid = 0;
  Ipv4Address transport_addr;
  // The opposite-direction TEID, when the message carries both. Used by
  // PathSwitchAcknowledge so a gateway that saw no earlier message for the UE
  // can still pair the bearer.
  std::uint32_t paired_teid = 0;

  friend bool operator==(const BearerItem&, const BearerItem&) = default;
};

struct S1apLiteMessage {
  S1apKind kind = S1apKind::InitialContextSetupRequest;
  std::uint32_t mme_ue_id = 0;
  std::uint32_t enb_ue_id = 0;
  Ipv4Address ue_ip;
  std::vector<BearerItem> bearers;
  Ipv4Address enb_addr;
  Ipv4Address sgw_addr;

  friend bool operator==(const S1apLiteMessage&, const S1apLiteMessage&) = default;
};

inline constexpr std::size_t kS1apFixedLen = 1 + 4 * 5 + 1;
inline constexpr std::size_t kS1apBearerLen = 1 + 4 + 4 + 4;

inline Bytes encode_message(const S1apLiteMessage& msg) {
  if (msg.bearers.empty()) throw EncodeError("s1ap-lite message without bearers");
  if (msg.bearers.size() > 255) throw EncodeError("s1ap-lite message with more than 255 bearers");
  std::set<std::uint8_t> ids;
  for (const auto& b : msg.bearers)
    if (!ids.insert(b.bearer_id).second)
      throw EncodeError("duplicate bearer id " + std::to_string(b.bearer_id));

  const std::size_t body = kS1apFixedLen + msg.bearers.size() * kS1apBearerLen;
  Bytes out;
  out.reserve(2 + body);
  put_u16(out, static_cast<std::uint16_t>(body));
  put_u8(out, static_cast<std::uint8_t>(msg.kind));
  put_u32(out, msg.mme_ue_id);
  put_u32(out, msg.enb_ue_id);
  put_u32(out, msg.ue_ip.value());
  put_u32(out, msg.enb_addr.value());
  put_u32(out, msg.sgw_addr.value());
  put_u8(out, static_cast<std::uint8_t>(msg.bearers.size()));
  for (const auto& b : msg.bearers) {
    put_u8(out, b.bearer_id);
    put_u32(out, b.teid);
    put_u32(out, b.transport_addr.value());
    put_u32(out, b.paired_teid);
  }
  return out;
}

inline S1apLiteMessage decode_message(ByteView bytes) {
  if (bytes.size() < 2) throw DecodeError(DecodeErrc::Truncated, "s1ap-lite length prefix");
  const std::size_t body = get_u16(bytes, 0);
  if (bytes.size() - 2 < body) throw DecodeError(DecodeErrc::Truncated, "s1ap-lite body");
  if (bytes.size() - 2 > body) throw DecodeError(DecodeErrc::Length, "trailing bytes after s1ap-lite body");
  auto b = bytes.subspan(2);
  if (b.empty()) throw DecodeError(DecodeErrc::Truncated, "s1ap-lite kind");
  if (b[0] < 1 || b[0] > 4)
    throw DecodeError(DecodeErrc::UnknownKind, "s1ap-lite kind " + std::to_string(b[0]));
  if (b.size() < kS1apFixedLen) throw DecodeError(DecodeErrc::Truncated, "s1ap-lite fixed fields");
  S1apLiteMessage msg;
  msg.kind = static_cast<S1apKind>(b[0]);
  msg.mme_ue_id = get_u32(b, 1);
  msg.enb_ue_id = get_u32(b, 5);
  msg.ue_ip = Ipv4Address(get_u32(b, 9));
  msg.enb_addr = Ipv4Address(get_u32(b, 13));
  msg.sgw_addr = Ipv4Address(get_u32(b, 17));
  const std::size_t count = b[21];
  if (count == 0) throw DecodeError(DecodeErrc::NoBearers, "s1ap-lite message without bearers");
  if (b.size() != kS1apFixedLen + count * kS1apBearerLen)
    throw DecodeError(b.size() < kS1apFixedLen + count * kS1apBearerLen ? DecodeErrc::Truncated
                                                                        : DecodeErrc::Length,
                      "s1ap-lite bearer list");
  std::set<std::uint8_t> ids;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = kS1apFixedLen + i * kS1apBearerLen;
    BearerItem item;
    item.bearer_id = b[off];
    item.teid = get_u32(b, off + 1);
    item.transport_addr = Ipv4Address(get_u32(b, off + 5));
    item.paired_teid = get_u32(b, off + 9);
    if (!ids.insert(item.bearer_id).second)
      throw DecodeError(DecodeErrc::DuplicateBearer, "bearer id " + std::to_string(item.bearer_id));
    msg.bearers.push_back(item);
  }
  return msg;
}

// Wraps a message in IPv4 + a bare SCTP common header. Chunks are not modelled;
// the s1ap-lite bytes follow the common header directly.
inline Bytes encode_s1ap_frame(Ipv4Address src, Ipv4Address dst, const S1apLiteMessage& msg) {
  Bytes payload;
  put_u16(payload, kS1apSctpPort);
  put_u16(payload, kS1apSctpPort);
  put_u32(payload, 0);
  put_u32(payload, 0);
  auto body = encode_message(msg);
  payload.insert(payload.end(), body.begin(), body.end());
  return build_ipv4(src, dst, ipproto::kSctp, payload);
}

inline S1apLiteMessage decode_s1ap_frame(ByteView frame) {
  const auto ip = parse_ipv4(frame);
  if (ip.protocol != ipproto::kSctp) throw DecodeError(DecodeErrc::NotIpv4, "frame is not SCTP");
  auto sctp = frame.subspan(ip.header_len, ip.total_len - ip.header_len);
  if (sctp.size() < kSctpCommonHeaderLen) throw DecodeError(DecodeErrc::Truncated, "SCTP common header");
  return decode_message(sctp.subspan(kSctpCommonHeaderLen));
}

}  // namespace megw
