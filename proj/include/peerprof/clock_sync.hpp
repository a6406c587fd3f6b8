#pragma once

// Clock-offset estimation between a client and a server, residual calibration
// from a payload-size sweep, and correction of raw one-way timings.
//
// Sign convention: offset = (server clock) - (client clock). A raw one-way
// timing is (receiver timestamp) - (sender timestamp) and therefore contains
// +offset on the client->server path and -offset on the way back.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>

#include "peerprof/clock.hpp"
#include "peerprof/error.hpp"

namespace peerprof {

// Four-timestamp probe: t1/t4 on the client clock, t2/t3 on the server clock.
struct ProbeSample {
  Nanos t1 = 0;  // client send
  Nanos t2 = 0;  // server receive
  Nanos t3 = 0;  // server send
  Nanos t4 = 0;  // client receive

  Nanos rtt() const { return (t4 - t1) - (t3 - t2); }
  Nanos offset() const { return ((t2 - t1) + (t3 - t4)) / 2; }
};

enum class SyncMethod { Probe, ResidualCalibrated };

inline const char* to_string(SyncMethod m) {
  return m == SyncMethod::Probe ? "probe" : "residual-calibrated";
}

struct ClockModel {
  Nanos offset_ns = 0;
  Nanos rtt_ns = 0;
  SyncMethod method = SyncMethod::Probe;
  std::optional<Nanos> residual_ns;
  std::size_t n_samples = 0;

  // Offset applied when correcting one-way timings.
  Nanos effective_offset() const { return offset_ns + residual_ns.value_or(0); }

  bool operator==(const ClockModel&) const = default;
};

struct SweepPoint {
  std::uint64_t payload_bytes = 0;
  Nanos measured_one_way_ns = 0;
};

struct LineFit {
  double slope_ns_per_byte = 0.0;
  double intercept_ns = 0.0;
  double r2 = 0.0;
};

enum class Direction { ClientToServer, ServerToClient };

struct CorrectedLatency {
  Nanos ns = 0;
  bool negative = false;  // over-correction; surfaced, never clamped
};

// Minimum-RTT sample wins; its midpoint offset is the estimate. Under a
// constant asymmetric path the estimate is biased by (up - down) / 2.
inline ClockModel estimate_offset(std::span<const ProbeSample> samples) {
  if (samples.empty()) fail(Errc::EmptyInput, "no probe samples");
  const ProbeSample* best = nullptr;
  for (const auto& s : samples) {
    if (s.t4 < s.t1 || s.t3 < s.t2)
      fail(Errc::Malformed, "probe sample timestamps out of order");
    if (s.rtt() < 0) fail(Errc::Malformed, "probe sample with negative round trip");
    if (best == nullptr || s.rtt() < best->rtt()) best = &s;
  }
  ClockModel m;
  m.offset_ns = best->offset();
  m.rtt_ns = best->rtt();
  m.method = SyncMethod::Probe;
  m.n_samples = samples.size();
  return m;
}

// Ordinary least squares of measured one-way latency on payload size.
inline LineFit fit_intercept(std::span<const SweepPoint> points) {
  if (points.size() < 3) fail(Errc::TooFewPoints, "need at least 3 sweep points");
  long double mx = 0, my = 0;
  for (const auto& p : points) {
    if (p.payload_bytes == 0) fail(Errc::Malformed, "sweep point with zero payload");
    mx += static_cast<long double>(p.payload_bytes);
    my += static_cast<long double>(p.measured_one_way_ns);
  }
  const auto n = static_cast<long double>(points.size());
  mx /= n;
  my /= n;
  long double sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : points) {
    const long double dx = static_cast<long double>(p.payload_bytes) - mx;
    const long double dy = static_cast<long double>(p.measured_one_way_ns) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0) fail(Errc::SingularFit, "all sweep points share one payload size");
  LineFit fit;
  const long double slope = sxy / sxx;
  const long double intercept = my - slope * mx;
  fit.slope_ns_per_byte = static_cast<double>(slope);
  fit.intercept_ns = static_cast<double>(intercept);
  if (syy == 0) {
    fit.r2 = 1.0;
  } else {
    long double ss_res = 0;
    for (const auto& p : points) {
      const long double r = static_cast<long double>(p.measured_one_way_ns) -
                            (intercept + slope * static_cast<long double>(p.payload_bytes));
      ss_res += r * r;
    }
    fit.r2 = static_cast<double>(1.0L - ss_res / syy);
  }
  return fit;
}

// `points` hold client->server timings already corrected by `model`; the fit
// intercept is the leftover offset error, folded into the effective offset.
inline ClockModel residual_calibrate(ClockModel model, std::span<const SweepPoint> points) {
  const LineFit fit = fit_intercept(points);
  model.residual_ns = static_cast<Nanos>(std::llround(fit.intercept_ns));
  model.method = SyncMethod::ResidualCalibrated;
  return model;
}

inline CorrectedLatency correct_one_way(Nanos raw_ns, const ClockModel& model, Direction dir) {
  const Nanos off = model.effective_offset();
  CorrectedLatency c;
  c.ns = dir == Direction::ClientToServer ? raw_ns - off : raw_ns + off;
  c.negative = c.ns < 0;
  return c;
}

// Bytes per second.
inline double throughput(std::uint64_t payload_bytes, Nanos corrected_latency_ns) {
  if (corrected_latency_ns <= 0)
    fail(Errc::ThroughputUndefined,
         "throughput needs a positive latency, got " + std::to_string(corrected_latency_ns) + " ns");
  return static_cast<double>(payload_bytes) * 1e9 / static_cast<double>(corrected_latency_ns);
}

}  // namespace peerprof
