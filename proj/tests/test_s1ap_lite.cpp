#include <gtest/gtest.h>

#include <random>

#include "megw/s1ap_lite.hpp"

using namespace megw;

namespace {

S1apLiteMessage ics_request() {
  return {S1apKind::InitialContextSetupRequest,
          1,
          1001,
          Ipv4Address::parse("172.16.0.2"),
          {{5, 100, Ipv4Address::parse("192.168.0.1"), 0}},
          Ipv4Address::parse("192.168.10.1"),
          Ipv4Address::parse("192.168.0.1")};
}

DecodeErrc decode_error(ByteView b) {
  try {
    decode_message(b);
  } catch (const DecodeError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decoded";
  return DecodeErrc::Truncated;
}

}  // namespace

TEST(S1apLite, IcsRequestMatchesHandAssembledLayout) {
  const auto bytes = encode_message(ics_request());
  // len=35 | kind 1 | mme 1 | enb 1001 | ue | enb_addr | sgw | count 1 | {5, 100, sgw, 0}
  EXPECT_EQ(to_hex(bytes),
            "0023"
            "01"
            "00000001"
            "000003e9"
            "ac100002"
            "c0a80a01"
            "c0a80001"
            "01"
            "05"
            "00000064"
            "c0a80001"
            "00000000");
  EXPECT_EQ(decode_message(bytes), ics_request());
}

TEST(S1apLite, PathSwitchRequestWithTwoBearers) {
  auto m = ics_request();
  m.kind = S1apKind::PathSwitchRequest;
  m.bearers.push_back({6, 101, Ipv4Address::parse("192.168.0.1"), 201});
  const auto bytes = encode_message(m);
  EXPECT_EQ(bytes[2 + 21], 2);
  EXPECT_EQ(decode_message(bytes), m);
}

TEST(S1apLite, EncodeRejectsInvalidBearerLists) {
  auto m = ics_request();
  m.bearers.clear();
  EXPECT_THROW(encode_message(m), EncodeError);
  m = ics_request();
  m.bearers.push_back(m.bearers.front());
  EXPECT_THROW(encode_message(m), EncodeError);
  m = ics_request();
  m.bearers.resize(256);
  for (std::size_t i = 0; i < m.bearers.size(); ++i) m.bearers[i].bearer_id = static_cast<std::uint8_t>(i);
  EXPECT_THROW(encode_message(m), EncodeError);
}

TEST(S1apLite, DecodeErrors) {
  const auto good = encode_message(ics_request());
  EXPECT_EQ(decode_error(ByteView(good).first(1)), DecodeErrc::Truncated);
  EXPECT_EQ(decode_error(ByteView(good).first(good.size() - 1)), DecodeErrc::Truncated);

  auto kind = good;
  kind[2] = 0x09;
  EXPECT_EQ(decode_error(kind), DecodeErrc::UnknownKind);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(decode_error(trailing), DecodeErrc::Length);

  Bytes none(good.begin(), good.begin() + 2 + 22);
  set_u16(none, 0, 22);
  none[2 + 21] = 0;
  EXPECT_EQ(decode_error(none), DecodeErrc::NoBearers);

  auto m = ics_request();
  m.bearers.push_back({6, 1, {}, 0});
  auto dup = encode_message(m);
  dup[2 + 22 + 13] = 5;  // second bearer id := first
  EXPECT_EQ(decode_error(dup), DecodeErrc::DuplicateBearer);

  auto count = good;
  count[2 + 21] = 2;  // claims a bearer that is not there
  EXPECT_EQ(decode_error(count), DecodeErrc::Truncated);
}

TEST(S1apLite, RandomRoundTripAndFuzz) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<std::uint32_t> u32;
  std::uniform_int_distribution<int> kind(1, 4), n(1, 12), byte(0, 255), len(0, 200);
  for (int i = 0; i < 1000; ++i) {
    S1apLiteMessage m{static_cast<S1apKind>(kind(rng)), u32(rng), u32(rng), Ipv4Address(u32(rng)), {},
                      Ipv4Address(u32(rng)), Ipv4Address(u32(rng))};
    const int count = n(rng);
    for (int b = 0; b < count; ++b)
      m.bearers.push_back({static_cast<std::uint8_t>(b * 7 + 1), u32(rng), Ipv4Address(u32(rng)), u32(rng)});
    ASSERT_EQ(decode_message(encode_message(m)), m);
  }
  for (int i = 0; i < 20000; ++i) {
    Bytes b(static_cast<std::size_t>(len(rng)));
    for (auto& x : b) x = static_cast<std::uint8_t>(byte(rng));
    if (b.size() >= 2 && i % 2) set_u16(b, 0, static_cast<std::uint16_t>(b.size() - 2));
    try {
      const auto m = decode_message(b);
      EXPECT_EQ(encode_message(m), b);
    } catch (const DecodeError&) {
    }
  }
}

TEST(S1apFrame, SctpFramingRoundTrip) {
  const auto frame = encode_s1ap_frame(Ipv4Address::parse("192.168.0.1"), Ipv4Address::parse("192.168.10.1"),
                                       ics_request());
  const auto ip = parse_ipv4(frame);
  EXPECT_EQ(ip.protocol, ipproto::kSctp);
  EXPECT_EQ(get_u16(frame, 20), kS1apSctpPort);
  EXPECT_EQ(get_u16(frame, 22), kS1apSctpPort);
  EXPECT_EQ(decode_s1ap_frame(frame), ics_request());

  const auto udp = build_udp(ip.src, ip.dst, 1, 2, Bytes(40, 0));
  EXPECT_THROW(decode_s1ap_frame(udp), DecodeError);
  const auto bare = build_ipv4(ip.src, ip.dst, ipproto::kSctp, Bytes(5, 0));
  EXPECT_THROW(decode_s1ap_frame(bare), DecodeError);
}
