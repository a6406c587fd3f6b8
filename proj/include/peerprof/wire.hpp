#pragma once

// Framed envelope wire format, all integers big-endian:
//
//   "PEER" | version u8 (=1) | msg_type u8 | flags u8 (bit0: metadata)
//   | name_len u8 | name | seq u64 | send_ts i64
//   | meta_len u32 | metadata | payload_len u64 | payload
//   | crc32 u32  (over every byte after the magic)

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>

#include "peerprof/clock.hpp"
#include "peerprof/error.hpp"

namespace peerprof {

inline constexpr std::string_view kFrameMagic = "PEER";
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::uint64_t kMaxPayloadBytes = 1ull << 30;
inline constexpr std::uint32_t kMaxMetadataBytes = 64u << 20;
inline constexpr std::size_t kMaxSenderBytes = 255;

enum class MsgType : std::uint8_t { Data = 0, Result = 1, ProbeReq = 2, ProbeResp = 3, Control = 4 };

inline const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::Data: return "Data";
    case MsgType::Result: return "Result";
    case MsgType::ProbeReq: return "ProbeReq";
    case MsgType::ProbeResp: return "ProbeResp";
    case MsgType::Control: return "Control";
  }
  return "?";
}

struct Envelope {
  MsgType type = MsgType::Data;
  std::string sender;
  std::uint64_t seq = 0;
  Nanos send_ts = 0;
  std::optional<std::string> metadata;  // serialized MetricNode subtree
  std::string payload;

  bool operator==(const Envelope&) const = default;
};

inline std::uint32_t crc32_update(std::uint32_t crc, const void* data, std::size_t n) {
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = static_cast<std::uint32_t>(::crc32(crc, p, chunk));
    p += chunk;
    n -= chunk;
  }
  return crc;
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  return crc32_update(0, bytes.data(), bytes.size());
}

inline std::size_t frame_size(const Envelope& env) {
  return kFrameMagic.size() + 4 + env.sender.size() + 8 + 8 + 4 +
         (env.metadata ? env.metadata->size() : 0) + 8 + env.payload.size() + 4;
}

namespace detail {

template <class T>
void put_be(std::string& out, T v) {
  std::array<char, sizeof(T)> b{};
  for (std::size_t i = 0; i < sizeof(T); ++i)
    b[sizeof(T) - 1 - i] = static_cast<char>(static_cast<std::uint64_t>(v) >> (8 * i) & 0xFF);
  out.append(b.data(), b.size());
}

template <class T>
T get_be(const char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return static_cast<T>(v);
}

}  // namespace detail

inline void validate_envelope(const Envelope& env) {
  if (env.sender.empty() || env.sender.size() > kMaxSenderBytes)
    fail(Errc::InvalidName, "sender name must be 1..255 bytes");
  if (env.metadata && env.metadata->size() > kMaxMetadataBytes)
    fail(Errc::PayloadTooLarge, "metadata exceeds 64 MiB");
  if (env.payload.size() > kMaxPayloadBytes) fail(Errc::PayloadTooLarge, "payload exceeds 1 GiB");
}

inline std::string encode(const Envelope& env) {
  validate_envelope(env);
  std::string out;
  out.reserve(frame_size(env));
  out.append(kFrameMagic);
  out.push_back(static_cast<char>(kWireVersion));
  out.push_back(static_cast<char>(env.type));
  out.push_back(static_cast<char>(env.metadata ? 1 : 0));
  out.push_back(static_cast<char>(env.sender.size()));
  out.append(env.sender);
  detail::put_be<std::uint64_t>(out, env.seq);
  detail::put_be<std::uint64_t>(out, static_cast<std::uint64_t>(env.send_ts));
  const std::string_view meta = env.metadata ? std::string_view(*env.metadata) : std::string_view{};
  detail::put_be<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.append(meta);
  detail::put_be<std::uint64_t>(out, env.payload.size());
  out.append(env.payload);
  const auto crc = crc32_update(0, out.data() + kFrameMagic.size(), out.size() - kFrameMagic.size());
  detail::put_be<std::uint32_t>(out, crc);
  return out;
}

// Decodes one frame from a byte source. `read_exact(char* dst, size_t n)` must
// fill exactly n bytes or throw (Malformed on truncation, Timeout/ChannelClosed
// for sockets). `remaining()` bounds declared lengths before allocation; it
// returns SIZE_MAX when the source is an unbounded stream.
template <class ReadExact, class Remaining>
Envelope decode_from(ReadExact&& read_exact, Remaining&& remaining) {
  std::array<char, 8> head{};
  read_exact(head.data(), 8);
  if (std::string_view(head.data(), 4) != kFrameMagic) fail(Errc::Malformed, "bad frame magic");
  std::uint32_t crc = crc32_update(0, head.data() + 4, 4);
  const auto version = static_cast<std::uint8_t>(head[4]);
  if (version != kWireVersion)
    fail(Errc::ProtocolVersion, "peer speaks wire version " + std::to_string(version));
  const auto type = static_cast<std::uint8_t>(head[5]);
  if (type > static_cast<std::uint8_t>(MsgType::Control)) fail(Errc::Malformed, "unknown msg_type");
  const auto flags = static_cast<std::uint8_t>(head[6]);
  if ((flags & ~1u) != 0) fail(Errc::Malformed, "unknown frame flags");
  const auto name_len = static_cast<std::uint8_t>(head[7]);
  if (name_len == 0) fail(Errc::Malformed, "empty sender name");

  Envelope env;
  env.type = static_cast<MsgType>(type);
  env.sender.resize(name_len);
  read_exact(env.sender.data(), name_len);
  crc = crc32_update(crc, env.sender.data(), name_len);

  std::array<char, 20> fixed{};
  read_exact(fixed.data(), fixed.size());
  crc = crc32_update(crc, fixed.data(), fixed.size());
  env.seq = detail::get_be<std::uint64_t>(fixed.data());
  env.send_ts = static_cast<Nanos>(detail::get_be<std::uint64_t>(fixed.data() + 8));
  const auto meta_len = detail::get_be<std::uint32_t>(fixed.data() + 16);
  if (meta_len > kMaxMetadataBytes || meta_len > remaining())
    fail(Errc::Malformed, "metadata length out of range");
  if ((flags & 1u) == 0 && meta_len != 0) fail(Errc::Malformed, "metadata without flag");
  if (flags & 1u) {
    std::string meta(meta_len, '\0');
    read_exact(meta.data(), meta_len);
    crc = crc32_update(crc, meta.data(), meta_len);
    env.metadata = std::move(meta);
  }

  std::array<char, 8> plen{};
  read_exact(plen.data(), plen.size());
  crc = crc32_update(crc, plen.data(), plen.size());
  const auto payload_len = detail::get_be<std::uint64_t>(plen.data());
  if (payload_len > kMaxPayloadBytes || payload_len > remaining())
    fail(Errc::Malformed, "payload length out of range");
  env.payload.resize(payload_len);
  read_exact(env.payload.data(), payload_len);
  crc = crc32_update(crc, env.payload.data(), payload_len);

  std::array<char, 4> tail{};
  read_exact(tail.data(), tail.size());
  if (detail::get_be<std::uint32_t>(tail.data()) != crc) fail(Errc::Malformed, "frame checksum mismatch");
  return env;
}

// Decodes a complete frame held in memory; the buffer must contain exactly
// one frame. The checksum is verified before any field is trusted, so a
// damaged buffer is always reported as Malformed.
inline Envelope decode(std::string_view buf) {
  constexpr std::size_t kMinFrame = 4 + 4 + 1 + 8 + 8 + 4 + 8 + 4;
  if (buf.size() < kMinFrame) fail(Errc::Malformed, "frame truncated");
  if (buf.substr(0, 4) != kFrameMagic) fail(Errc::Malformed, "bad frame magic");
  const auto body = buf.substr(4, buf.size() - 8);
  if (crc32_of(body) != detail::get_be<std::uint32_t>(buf.data() + buf.size() - 4))
    fail(Errc::Malformed, "frame checksum mismatch");
  std::size_t pos = 0;
  Envelope env = decode_from(
      [&](char* dst, std::size_t n) {
        if (n > buf.size() - pos) fail(Errc::Malformed, "frame truncated");
        std::memcpy(dst, buf.data() + pos, n);
        pos += n;
      },
      [&] { return buf.size() - pos; });
  if (pos != buf.size()) fail(Errc::Malformed, "trailing bytes after frame");
  return env;
}

}  // namespace peerprof
