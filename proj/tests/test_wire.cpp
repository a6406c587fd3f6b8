#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "peerprof/wire.hpp"

using namespace peerprof;

namespace {

Errc code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Io;
}

Envelope sample() {
  Envelope e;
  e.type = MsgType::Data;
  e.sender = "jetson";
  e.seq = 42;
  e.send_ts = 1'700'000'000'123'456'789;
  e.metadata = R"({"version":1,"root":{"name":"server","kind":"custom:group"}})";
  e.payload = "hello";
  return e;
}

}  // namespace

TEST(Wire, Crc32MatchesBitwiseOracle) {
  EXPECT_EQ(oracle::crc32("123456789"), 0xCBF43926u);
  EXPECT_EQ(crc32_of("123456789"), 0xCBF43926u);
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    std::string s(std::uniform_int_distribution<std::size_t>(0, 5000)(rng), '\0');
    for (auto& c : s) c = static_cast<char>(rng());
    ASSERT_EQ(crc32_of(s), oracle::crc32(s));
  }
}

TEST(Wire, LayoutIsBigEndian) {
  const Envelope e = sample();
  const std::string f = encode(e);
  ASSERT_EQ(f.size(), frame_size(e));
  EXPECT_EQ(f.substr(0, 4), "PEER");
  EXPECT_EQ(f[4], 1);
  EXPECT_EQ(f[5], 0);  // Data
  EXPECT_EQ(f[6], 1);  // metadata present
  EXPECT_EQ(f[7], 6);
  EXPECT_EQ(f.substr(8, 6), "jetson");
  EXPECT_EQ(std::string(f.data() + 14, 8), std::string("\0\0\0\0\0\0\0\x2a", 8));
  const auto body = std::string_view(f).substr(4, f.size() - 8);
  const auto* tail = reinterpret_cast<const unsigned char*>(f.data() + f.size() - 4);
  const std::uint32_t crc = (std::uint32_t{tail[0]} << 24) | (std::uint32_t{tail[1]} << 16) |
                            (std::uint32_t{tail[2]} << 8) | tail[3];
  EXPECT_EQ(crc, oracle::crc32(body));
}

TEST(Wire, FrameSizeArithmetic) {
  Envelope e;
  e.sender = "a";
  e.payload.assign(1 << 20, 'x');
  // magic + ver/type/flags/len + name + seq + ts + meta len + payload len + crc
  EXPECT_EQ(encode(e).size(), 4u + 4 + 1 + 8 + 8 + 4 + 8 + (1u << 20) + 4);
}

TEST(Wire, RandomizedRoundtrip) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 500; ++i) {
    const Envelope e = oracle::random_envelope(rng);
    ASSERT_EQ(decode(encode(e)), e);
  }
}

TEST(Wire, EmptyMetadataDiffersFromAbsent) {
  Envelope e = sample();
  e.metadata = "";
  EXPECT_EQ(decode(encode(e)).metadata, std::optional<std::string>(""));
  e.metadata.reset();
  EXPECT_FALSE(decode(encode(e)).metadata);
}

TEST(Wire, DamageIsMalformed) {
  const std::string f = encode(sample());
  for (std::size_t n = 0; n < f.size(); ++n)
    ASSERT_EQ(code_of([&] { decode(std::string_view(f).substr(0, n)); }), Errc::Malformed) << n;
  for (std::size_t i = 0; i < f.size(); ++i) {
    std::string bad = f;
    bad[i] ^= 0x10;
    ASSERT_EQ(code_of([&] { decode(bad); }), Errc::Malformed) << i;
  }
  EXPECT_EQ(code_of([&] { decode(f + "x"); }), Errc::Malformed);
}

TEST(Wire, CorruptLengthPrefix) {
  std::string f = encode(sample());
  f[14 + 8 + 8] = '\x7f';  // metadata length high byte
  EXPECT_EQ(code_of([&] { decode(f); }), Errc::Malformed);
}

TEST(Wire, StreamDecodeReportsVersion) {
  std::string f = encode(sample());
  f[4] = 2;
  std::size_t pos = 0;
  auto read = [&](char* dst, std::size_t n) {
    if (n > f.size() - pos) fail(Errc::Malformed, "short");
    std::memcpy(dst, f.data() + pos, n);
    pos += n;
  };
  EXPECT_EQ(code_of([&] { decode_from(read, [] { return SIZE_MAX; }); }), Errc::ProtocolVersion);
}

TEST(Wire, Limits) {
  Envelope e = sample();
  e.sender = "";
  EXPECT_EQ(code_of([&] { encode(e); }), Errc::InvalidName);
  e.sender = std::string(256, 's');
  EXPECT_EQ(code_of([&] { encode(e); }), Errc::InvalidName);
  e.sender = std::string(255, 's');
  EXPECT_EQ(decode(encode(e)).sender.size(), 255u);
}
