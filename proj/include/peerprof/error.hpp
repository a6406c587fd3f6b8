#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace peerprof {

enum class Errc {
  EmptyName,
  InvalidName,
  DuplicateChild,
  TooManyChildren,
  NotStarted,
  AlreadyStopped,
  StopBeforeStart,
  NegativeQuantity,
  NonFinite,
  Malformed,
  UnknownVersion,
  DepthExceeded,
  NoMatches,
  EmptyInput,
  TooFewPoints,
  SingularFit,
  ThroughputUndefined,
  UnknownDevice,
  InvalidConfig,
  ProtocolVersion,
  ProtocolError,
  PayloadTooLarge,
  Timeout,
  ChannelClosed,
  ConnectFailed,
  Bind,
  Io,
  StageFailed,
  RunAborted,
  Usage,
};

constexpr std::string_view to_string(Errc e) noexcept {
  switch (e) {
    case Errc::EmptyName: return "EmptyName";
    case Errc::InvalidName: return "InvalidName";
    case Errc::DuplicateChild: return "DuplicateChild";
    case Errc::TooManyChildren: return "TooManyChildren";
    case Errc::NotStarted: return "NotStarted";
    case Errc::AlreadyStopped: return "AlreadyStopped";
    case Errc::StopBeforeStart: return "StopBeforeStart";
    case Errc::NegativeQuantity: return "NegativeQuantity";
    case Errc::NonFinite: return "NonFinite";
    case Errc::Malformed: return "Malformed";
    case Errc::UnknownVersion: return "UnknownVersion";
    case Errc::DepthExceeded: return "DepthExceeded";
    case Errc::NoMatches: return "NoMatches";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::SingularFit: return "SingularFit";
    case Errc::ThroughputUndefined: return "ThroughputUndefined";
    case Errc::UnknownDevice: return "UnknownDevice";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ProtocolVersion: return "ProtocolVersion";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::PayloadTooLarge: return "PayloadTooLarge";
    case Errc::Timeout: return "Timeout";
    case Errc::ChannelClosed: return "ChannelClosed";
    case Errc::ConnectFailed: return "ConnectFailed";
    case Errc::Bind: return "Bind";
    case Errc::Io: return "Io";
    case Errc::StageFailed: return "StageFailed";
    case Errc::RunAborted: return "RunAborted";
    case Errc::Usage: return "Usage";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace peerprof
