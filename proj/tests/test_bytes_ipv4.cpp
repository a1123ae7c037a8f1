#include <gtest/gtest.h>

#include "megw/bytes.hpp"
#include "megw/ipv4.hpp"

using namespace megw;

TEST(Hex, RoundTripAndSeparators) {
  const Bytes b{0x00, 0x7f, 0x80, 0xff};
  EXPECT_EQ(to_hex(b), "007f80ff");
  EXPECT_EQ(from_hex("00:7F 80\nff"), b);
  EXPECT_THROW(from_hex("abc"), std::invalid_argument);
  EXPECT_THROW(from_hex("zz"), std::invalid_argument);
}

TEST(BigEndian, PutGetSet) {
  Bytes b;
  put_u16(b, 0x1234);
  put_u32(b, 0xA1B2C3D4);
  EXPECT_EQ(to_hex(b), "1234a1b2c3d4");
  EXPECT_EQ(get_u16(b, 0), 0x1234);
  EXPECT_EQ(get_u32(b, 2), 0xA1B2C3D4u);
  set_u16(b, 0, 0xBEEF);
  EXPECT_EQ(get_u16(b, 0), 0xBEEF);
}

TEST(Ipv4Address, ParseFormatOrder) {
  const auto a = Ipv4Address::parse("10.100.1.1");
  EXPECT_EQ(a.value(), 0x0A640101u);
  EXPECT_EQ(a.to_string(), "10.100.1.1");
  EXPECT_LT(Ipv4Address::parse("9.255.255.255"), a);
  for (const char* bad : {"", "1.2.3", "1.2.3.4.5", "256.1.1.1", "a.b.c.d", "1..2.3", "01.2.3.4x"})
    EXPECT_THROW(Ipv4Address::parse(bad), std::invalid_argument) << bad;
}

// Widely published header example; its checksum field is 0xb861.
TEST(Checksum, KnownHeaderVector) {
  auto h = from_hex("450000730000400040110000c0a80001c0a800c7");
  EXPECT_EQ(internet_checksum(h), 0xb861);
  set_u16(h, 10, 0xb861);
  EXPECT_TRUE(ipv4_header_checksum_ok(h));
  EXPECT_EQ(internet_checksum(h), 0);
}

// Frames below were assembled field by field outside this library.
TEST(Builders, TcpMatchesHandAssembledFrame) {
  const std::string payload = "hi";
  const auto pkt = build_tcp(Ipv4Address::parse("172.16.0.2"), Ipv4Address::parse("10.100.1.1"), 5000, 80,
                             Bytes(payload.begin(), payload.end()));
  EXPECT_EQ(to_hex(pkt), "4500002a0000400040068357ac1000020a6401011388005000000001000000015018ffff7c1000006869");
}

TEST(Builders, UdpMatchesHandAssembledFrame) {
  const std::string payload = "pong";
  const auto pkt = build_udp(Ipv4Address::parse("10.100.1.1"), Ipv4Address::parse("172.16.0.2"), 8080, 40000,
                             Bytes(payload.begin(), payload.end()));
  EXPECT_EQ(to_hex(pkt), "4500002000004000401183560a640101ac1000021f909c40000cadb7706f6e67");
}

TEST(ParseIpv4, RejectsMalformed) {
  const auto good = build_udp(Ipv4Address::parse("1.1.1.1"), Ipv4Address::parse("2.2.2.2"), 1, 2, Bytes{});
  EXPECT_NO_THROW(parse_ipv4(good));

  auto v6 = good;
  v6[0] = 0x65;
  try {
    parse_ipv4(v6);
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.code(), DecodeErrc::NotIpv4);
  }
  auto short_ihl = good;
  short_ihl[0] = 0x44;
  EXPECT_THROW(parse_ipv4(short_ihl), DecodeError);
  EXPECT_THROW(parse_ipv4(ByteView(good).first(19)), DecodeError);
  EXPECT_THROW(parse_ipv4(ByteView(good).first(good.size() - 1)), DecodeError);
}

TEST(Rewrite, DestinationAndSourceKeepChecksumsValid) {
  auto pkt = build_udp(Ipv4Address::parse("172.16.0.2"), Ipv4Address::parse("10.100.1.1"), 40000, 8080,
                       Bytes{'a', 'b', 'c'});
  rewrite_ipv4_dst(pkt, Ipv4Address::parse("10.1.1.10"));
  EXPECT_TRUE(ipv4_header_checksum_ok(pkt));
  const auto rebuilt = build_udp(Ipv4Address::parse("172.16.0.2"), Ipv4Address::parse("10.1.1.10"), 40000, 8080,
                                 Bytes{'a', 'b', 'c'});
  EXPECT_EQ(pkt, rebuilt);

  rewrite_ipv4_src(pkt, Ipv4Address::parse("9.9.9.9"));
  EXPECT_EQ(pkt, build_udp(Ipv4Address::parse("9.9.9.9"), Ipv4Address::parse("10.1.1.10"), 40000, 8080,
                           Bytes{'a', 'b', 'c'}));
}
