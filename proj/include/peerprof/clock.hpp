#pragma once

#include <chrono>
#include <cstdint>
#include <thread>

namespace peerprof {

// Nanoseconds since the Unix epoch, or a nanosecond duration.
using Nanos = std::int64_t;

inline constexpr Nanos kNsPerMs = 1'000'000;
inline constexpr Nanos kNsPerSec = 1'000'000'000;

// A device clock. Timestamps from two different Clock instances are not
// comparable until corrected by a ClockModel.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Nanos now() const = 0;
  // Called after work whose duration was measured elsewhere (a stage run).
  // Real clocks ignore it; virtual clocks move forward by `elapsed`.
  virtual void account(Nanos /*elapsed*/) {}
  // Idle wait (probe spacing). Virtual clocks just move forward.
  virtual void pause(Nanos d) { account(d); }
};

class SystemClock final : public Clock {
 public:
  Nanos now() const override {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }
  void pause(Nanos d) override { std::this_thread::sleep_for(std::chrono::nanoseconds(d)); }
};

// Test clock that only moves when told to.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Nanos start = 0) : now_(start) {}
  Nanos now() const override { return now_; }
  void account(Nanos elapsed) override { now_ += elapsed; }
  void set(Nanos t) { now_ = t; }

 private:
  Nanos now_;
};

// Monotonic stopwatch for single-clock durations (stage timings).
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  Nanos elapsed() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace peerprof
