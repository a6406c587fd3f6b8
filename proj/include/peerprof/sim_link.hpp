#pragma once

// Deterministic in-process link between a client and a server. Time is
// virtual: it only moves when a frame is delivered, a stage reports elapsed
// work, or a receive times out. All randomness comes from one seeded engine,
// so a run is reproducible from the spec alone.

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "peerprof/clock.hpp"
#include "peerprof/error.hpp"

namespace peerprof {

struct SimLinkSpec {
  Nanos up_delay_ns = 0;    // client -> server propagation
  Nanos down_delay_ns = 0;  // server -> client propagation
  Nanos jitter_ns = 0;      // uniform on [-jitter, +jitter], per frame
  std::optional<double> bandwidth_bytes_per_s;  // unset: unlimited
  double loss_prob = 0.0;       // client -> server frames
  double down_loss_prob = 0.0;  // server -> client frames
  Nanos clock_skew_ns = 0;      // (server clock) - (client clock)
  std::uint64_t seed = 0;

  void validate() const {
    if (up_delay_ns < 0 || down_delay_ns < 0 || jitter_ns < 0)
      fail(Errc::InvalidConfig, "sim delays and jitter must be nonnegative");
    if (bandwidth_bytes_per_s && !(*bandwidth_bytes_per_s > 0 && std::isfinite(*bandwidth_bytes_per_s)))
      fail(Errc::InvalidConfig, "sim bandwidth must be positive");
    if (!(loss_prob >= 0 && loss_prob < 1) || !(down_loss_prob >= 0 && down_loss_prob < 1))
      fail(Errc::InvalidConfig, "sim loss probability must be in [0, 1)");
  }
};

enum class SimSide { Client, Server };

inline SimSide opposite(SimSide s) { return s == SimSide::Client ? SimSide::Server : SimSide::Client; }

// Ground truth for one frame, in link (true) time.
struct SimTransfer {
  SimSide from = SimSide::Client;
  std::size_t frame_bytes = 0;
  Nanos sent_at = 0;
  Nanos deliver_at = 0;
  bool lost = false;
};

// Client clock readings start here so simulated timestamps look like
// nanoseconds since the epoch.
inline constexpr Nanos kSimEpochNs = 1'700'000'000'000'000'000;

class SimLink {
 public:
  struct InFlight {
    Nanos deliver_at = 0;
    std::string frame;
  };

  explicit SimLink(SimLinkSpec spec) : spec_(spec), rng_(spec.seed) { spec_.validate(); }

  const SimLinkSpec& spec() const { return spec_; }
  Nanos true_now() const { return now_; }
  void advance(Nanos d) {
    if (d > 0) now_ += d;
  }
  void advance_to(Nanos t) { now_ = std::max(now_, t); }

  Nanos reading(SimSide side) const {
    return kSimEpochNs + now_ + (side == SimSide::Server ? spec_.clock_skew_ns : 0);
  }

  // Delivery = now + propagation (+ jitter) + frame_bytes / bandwidth; frames
  // in one direction never overtake each other.
  void transmit(SimSide from, std::string frame) {
    const bool up = from == SimSide::Client;
    Nanos delay = up ? spec_.up_delay_ns : spec_.down_delay_ns;
    if (spec_.jitter_ns > 0)
      delay += std::uniform_int_distribution<Nanos>(-spec_.jitter_ns, spec_.jitter_ns)(rng_);
    delay = std::max<Nanos>(delay, 0);
    Nanos tx = 0;
    if (spec_.bandwidth_bytes_per_s)
      tx = std::llround(static_cast<double>(frame.size()) * 1e9 / *spec_.bandwidth_bytes_per_s);
    const double loss = up ? spec_.loss_prob : spec_.down_loss_prob;
    const bool lost = loss > 0 && std::bernoulli_distribution(loss)(rng_);

    auto& box = inbox(opposite(from));
    Nanos& last = last_delivery(opposite(from));
    const Nanos deliver_at = std::max(now_ + delay + tx, last);
    transfers_.push_back({from, frame.size(), now_, deliver_at, lost});
    if (lost) return;
    last = deliver_at;
    box.push_back({deliver_at, std::move(frame)});
  }

  // Places raw bytes in `to`'s inbox; used to feed damaged frames in tests.
  void inject(SimSide to, std::string bytes, Nanos deliver_at) {
    inbox(to).push_back({deliver_at, std::move(bytes)});
  }

  bool has_pending(SimSide to) const { return !inbox(to).empty(); }
  const InFlight& front(SimSide to) const { return inbox(to).front(); }
  InFlight pop(SimSide to) {
    InFlight f = std::move(inbox(to).front());
    inbox(to).pop_front();
    return f;
  }

  const std::vector<SimTransfer>& transfers() const { return transfers_; }

 private:
  std::deque<InFlight>& inbox(SimSide s) { return s == SimSide::Client ? to_client_ : to_server_; }
  const std::deque<InFlight>& inbox(SimSide s) const {
    return s == SimSide::Client ? to_client_ : to_server_;
  }
  Nanos& last_delivery(SimSide s) { return s == SimSide::Client ? last_client_ : last_server_; }

  SimLinkSpec spec_;
  std::mt19937_64 rng_;
  Nanos now_ = 0;
  Nanos last_client_ = std::numeric_limits<Nanos>::min();
  Nanos last_server_ = std::numeric_limits<Nanos>::min();
  std::deque<InFlight> to_client_;
  std::deque<InFlight> to_server_;
  std::vector<SimTransfer> transfers_;
};

// One side's view of the link's virtual time.
class SimClock final : public Clock {
 public:
  SimClock(std::shared_ptr<SimLink> link, SimSide side) : link_(std::move(link)), side_(side) {}
  Nanos now() const override { return link_->reading(side_); }
  void account(Nanos elapsed) override { link_->advance(elapsed); }

 private:
  std::shared_ptr<SimLink> link_;
  SimSide side_;
};

}  // namespace peerprof
