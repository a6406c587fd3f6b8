#pragma once

// Channels move framed envelopes between two named devices over TCP, UDP or
// the in-process simulated link. Every channel stamps send_ts just before a
// frame is written and recv_ts just after a full frame has been read, each on
// its own device clock.

#include <sys/socket.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <variant>

#include "json.hpp"
#include "peerprof/clock.hpp"
#include "peerprof/detail/socket.hpp"
#include "peerprof/error.hpp"
#include "peerprof/sim_link.hpp"
#include "peerprof/wire.hpp"

namespace peerprof {

inline constexpr int kHandshakeProtocol = 1;
inline constexpr std::size_t kDefaultMaxDatagram = 60'000;

// ---------------------------------------------------------------------------
// Network configuration: {"devices": {"<name>": {"host": "...", "port": N}}}

struct Endpoint {
  std::string host;
  int port = 0;
};

struct NetworkConfig {
  std::map<std::string, Endpoint> devices;
  std::string self_name;

  void validate() const {
    for (const auto& [name, ep] : devices) {
      if (name.empty() || name.size() > kMaxSenderBytes)
        fail(Errc::InvalidConfig, "device names must be 1..255 bytes");
      if (ep.host.empty()) fail(Errc::InvalidConfig, "device '" + name + "' has no host");
      if (ep.port < 1 || ep.port > 65535)
        fail(Errc::InvalidConfig, "device '" + name + "' port must be 1-65535");
    }
    if (!devices.contains(self_name))
      fail(Errc::UnknownDevice, "'" + self_name + "' is not in the network config");
  }

  const Endpoint& endpoint(const std::string& name) const {
    const auto it = devices.find(name);
    if (it == devices.end()) fail(Errc::UnknownDevice, "'" + name + "' is not in the network config");
    return it->second;
  }

  static NetworkConfig parse(std::string_view json_text, std::string self_name) {
    NetworkConfig cfg;
    cfg.self_name = std::move(self_name);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::InvalidConfig, std::string("network config: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("devices") || !doc["devices"].is_object())
      fail(Errc::InvalidConfig, "network config needs a \"devices\" object");
    for (const auto& [name, dev] : doc["devices"].items()) {
      if (!dev.is_object() || !dev.contains("host") || !dev["host"].is_string() ||
          !dev.contains("port") || !dev["port"].is_number_integer())
        fail(Errc::InvalidConfig, "device '" + name + "' needs string host and integer port");
      const auto port = dev["port"].get<std::int64_t>();
      if (port < 1 || port > 65535)
        fail(Errc::InvalidConfig, "device '" + name + "' port must be 1-65535");
      cfg.devices[name] = Endpoint{dev["host"].get<std::string>(), static_cast<int>(port)};
    }
    cfg.validate();
    return cfg;
  }

  static NetworkConfig load(const std::filesystem::path& path, std::string self_name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::InvalidConfig, "cannot read network config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), std::move(self_name));
  }
};

// ---------------------------------------------------------------------------
// Channel

struct Received {
  Envelope env;
  Nanos recv_ts = 0;
};

class Channel {
 public:
  Channel(std::string self, std::string peer, std::shared_ptr<Clock> clock)
      : self_(std::move(self)), peer_(std::move(peer)), clock_(std::move(clock)) {}
  virtual ~Channel() = default;
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;

  // Fills sender, seq and send_ts in `env`, then writes one frame. Returns the
  // frame length in bytes.
  std::size_t send(Envelope& env) {
    env.sender = self_;
    env.seq = next_seq_;
    const std::size_t size = frame_size(env);
    if (size > max_frame_bytes())
      fail(Errc::PayloadTooLarge, "frame of " + std::to_string(size) + " bytes exceeds the " +
                                      std::to_string(max_frame_bytes()) + "-byte limit");
    env.send_ts = clock_->now();
    const std::string frame = encode(env);
    write_frame(frame);
    ++next_seq_;
    return frame.size();
  }

  Received recv(std::chrono::milliseconds timeout) {
    Received r = read_frame(timeout);
    if (!peer_.empty() && r.env.sender != peer_)
      fail(Errc::ProtocolError, "frame from '" + r.env.sender + "', expected '" + peer_ + "'");
    if (last_seq_ && r.env.seq <= *last_seq_)
      fail(Errc::ProtocolError, "sequence number went from " + std::to_string(*last_seq_) + " to " +
                                    std::to_string(r.env.seq));
    last_seq_ = r.env.seq;
    return r;
  }

  const std::string& self_name() const { return self_; }
  const std::string& peer_name() const { return peer_; }
  Clock& clock() { return *clock_; }
  std::shared_ptr<Clock> clock_ptr() const { return clock_; }

  virtual std::size_t max_frame_bytes() const {
    return static_cast<std::size_t>(kMaxPayloadBytes) + kMaxMetadataBytes + 512;
  }
  // True when a frame can be read without blocking (always true for sockets,
  // where recv itself waits).
  virtual bool has_pending() const { return true; }

 protected:
  virtual void write_frame(const std::string& frame) = 0;
  virtual Received read_frame(std::chrono::milliseconds timeout) = 0;
  void set_peer(std::string peer) { peer_ = std::move(peer); }

  friend struct Handshake;

 private:
  std::string self_;
  std::string peer_;
  std::shared_ptr<Clock> clock_;
  std::uint64_t next_seq_ = 0;
  std::optional<std::uint64_t> last_seq_;
};

class Listener {
 public:
  virtual ~Listener() = default;
  virtual std::unique_ptr<Channel> accept(std::chrono::milliseconds timeout) = 0;
  virtual int port() const = 0;
};

// HELLO handshake: a Control envelope carrying {"op":"hello","name":..,"protocol":1}.
struct Handshake {
  static Envelope hello(const std::string& name, int protocol = kHandshakeProtocol) {
    Envelope env;
    env.type = MsgType::Control;
    env.payload = nlohmann::json{{"op", "hello"}, {"name", name}, {"protocol", protocol}}.dump();
    return env;
  }

  struct Hello {
    std::string name;
    int protocol = 0;
  };

  static std::optional<Hello> parse(const Envelope& env) {
    if (env.type != MsgType::Control) return std::nullopt;
    const auto j = nlohmann::json::parse(env.payload, nullptr, false);
    if (!j.is_object() || j.value("op", "") != "hello" || !j.contains("protocol") ||
        !j["protocol"].is_number_integer() || !j.contains("name") || !j["name"].is_string())
      return std::nullopt;
    return Hello{j["name"].get<std::string>(), j["protocol"].get<int>()};
  }

  static void check_protocol(const Hello& h) {
    if (h.protocol != kHandshakeProtocol)
      fail(Errc::ProtocolVersion, "'" + h.name + "' speaks protocol " + std::to_string(h.protocol) +
                                      ", expected " + std::to_string(kHandshakeProtocol));
  }

  static void client_side(Channel& ch, std::chrono::milliseconds timeout) {
    Envelope h = hello(ch.self_name());
    ch.send(h);
    const Received r = ch.recv(timeout);
    const auto reply = parse(r.env);
    if (!reply) fail(Errc::ProtocolError, "expected HELLO from '" + ch.peer_name() + "'");
    check_protocol(*reply);
    if (reply->name != ch.peer_name())
      fail(Errc::ProtocolError, "HELLO names '" + reply->name + "', expected '" + ch.peer_name() + "'");
  }

  static void server_side(Channel& ch, const NetworkConfig& config, std::chrono::milliseconds timeout) {
    const Received r = ch.recv(timeout);
    const auto h = parse(r.env);
    if (!h) fail(Errc::ProtocolError, "first frame from a client must be HELLO");
    if (!config.devices.contains(h->name))
      fail(Errc::UnknownDevice, "client '" + h->name + "' is not in the network config");
    ch.set_peer(h->name);
    Envelope reply = hello(ch.self_name());
    ch.send(reply);
    check_protocol(*h);
  }
};

// ---------------------------------------------------------------------------
// TCP

class TcpChannel final : public Channel {
 public:
  TcpChannel(detail::Fd fd, std::string self, std::string peer, std::shared_ptr<Clock> clock)
      : Channel(std::move(self), std::move(peer), std::move(clock)), fd_(std::move(fd)) {}

 protected:
  void write_frame(const std::string& frame) override {
    if (broken_) fail(Errc::ChannelClosed, "channel is broken");
    try {
      detail::write_all(fd_.get(), frame.data(), frame.size());
    } catch (...) {
      broken_ = true;
      throw;
    }
  }

  Received read_frame(std::chrono::milliseconds timeout) override {
    if (broken_) fail(Errc::ChannelClosed, "channel is broken");
    const auto first_deadline = detail::deadline_after(timeout);
    bool started = false;
    try {
      Envelope env = decode_from(
          [&](char* dst, std::size_t n) {
            // Once a frame has started, allow for slow bulk transfer.
            const auto deadline =
                started ? std::max(first_deadline, detail::deadline_after(std::chrono::seconds(30)))
                        : first_deadline;
            detail::read_exact(fd_.get(), dst, n, deadline);
            started = true;
          },
          [] { return SIZE_MAX; });
      return Received{std::move(env), clock().now()};
    } catch (const Error& e) {
      if (started || e.code() != Errc::Timeout) broken_ = true;
      throw;
    }
  }

 private:
  detail::Fd fd_;
  bool broken_ = false;
};

class TcpListener final : public Listener {
 public:
  TcpListener(const NetworkConfig& config, std::shared_ptr<Clock> clock)
      : config_(config), clock_(std::move(clock)) {
    const auto& ep = config_.endpoint(config_.self_name);
    fd_ = detail::bind_socket(ep.host, ep.port, SOCK_STREAM);
  }

  std::unique_ptr<Channel> accept(std::chrono::milliseconds timeout) override {
    if (!detail::wait_fd(fd_.get(), POLLIN, detail::deadline_after(timeout)))
      fail(Errc::Timeout, "no client connected");
    detail::Fd conn(::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!conn) fail(Errc::Io, detail::errno_text("accept"));
    int one = 1;
    ::setsockopt(conn.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto ch = std::make_unique<TcpChannel>(std::move(conn), config_.self_name, "", clock_);
    Handshake::server_side(*ch, config_, timeout);
    return ch;
  }

  int port() const override { return detail::local_port(fd_.get()); }

 private:
  NetworkConfig config_;
  std::shared_ptr<Clock> clock_;
  detail::Fd fd_;
};

// ---------------------------------------------------------------------------
// UDP: one frame per datagram, no fragmentation.

class UdpChannel final : public Channel {
 public:
  UdpChannel(std::shared_ptr<detail::Fd> fd, std::string self, std::string peer,
             std::shared_ptr<Clock> clock, std::size_t max_datagram)
      : Channel(std::move(self), std::move(peer), std::move(clock)),
        fd_(std::move(fd)),
        max_datagram_(max_datagram) {}

  std::size_t max_frame_bytes() const override { return max_datagram_; }

 protected:
  void write_frame(const std::string& frame) override {
    const ssize_t w = ::send(fd_->get(), frame.data(), frame.size(), MSG_NOSIGNAL);
    if (w < 0) fail(Errc::ChannelClosed, detail::errno_text("send"));
    if (static_cast<std::size_t>(w) != frame.size()) fail(Errc::Io, "short datagram write");
  }

  Received read_frame(std::chrono::milliseconds timeout) override {
    const auto deadline = detail::deadline_after(timeout);
    std::string buf(65'536, '\0');
    for (;;) {
      if (!detail::wait_fd(fd_->get(), POLLIN, deadline)) fail(Errc::Timeout, "no datagram before deadline");
      const ssize_t r = ::recv(fd_->get(), buf.data(), buf.size(), 0);
      if (r < 0) {
        // ICMP unreachable from a peer that is not up yet surfaces here.
        if (errno == EINTR || errno == ECONNREFUSED) continue;
        fail(Errc::ChannelClosed, detail::errno_text("recv"));
      }
      const Nanos recv_ts = clock().now();
      buf.resize(static_cast<std::size_t>(r));
      return Received{decode(buf), recv_ts};
    }
  }

 private:
  std::shared_ptr<detail::Fd> fd_;
  std::size_t max_datagram_;
};

class UdpListener final : public Listener {
 public:
  UdpListener(const NetworkConfig& config, std::shared_ptr<Clock> clock, std::size_t max_datagram)
      : config_(config), clock_(std::move(clock)), max_datagram_(max_datagram) {
    const auto& ep = config_.endpoint(config_.self_name);
    fd_ = std::make_shared<detail::Fd>(detail::bind_socket(ep.host, ep.port, SOCK_DGRAM));
  }

  // Waits for a HELLO datagram and binds the socket to its sender. Sessions
  // are sequential: a new accept releases the previous peer.
  std::unique_ptr<Channel> accept(std::chrono::milliseconds timeout) override {
    sockaddr_storage unspec{};
    unspec.ss_family = AF_UNSPEC;
    ::connect(fd_->get(), reinterpret_cast<sockaddr*>(&unspec), sizeof(sa_family_t));
    const auto deadline = detail::deadline_after(timeout);
    std::string buf(65'536, '\0');
    for (;;) {
      if (!detail::wait_fd(fd_->get(), POLLIN, deadline)) fail(Errc::Timeout, "no client HELLO");
      sockaddr_storage from{};
      socklen_t from_len = sizeof from;
      const ssize_t r = ::recvfrom(fd_->get(), buf.data(), buf.size(), 0,
                                   reinterpret_cast<sockaddr*>(&from), &from_len);
      if (r < 0) {
        if (errno == EINTR) continue;
        fail(Errc::Io, detail::errno_text("recvfrom"));
      }
      std::optional<Envelope> env;
      try {
        env = decode(std::string_view(buf.data(), static_cast<std::size_t>(r)));
      } catch (const Error&) {
        continue;
      }
      const auto h = Handshake::parse(*env);
      if (!h) continue;  // stray datagram from an earlier session
      if (::connect(fd_->get(), reinterpret_cast<sockaddr*>(&from), from_len) != 0)
        fail(Errc::Io, detail::errno_text("connect"));
      if (!config_.devices.contains(h->name))
        fail(Errc::UnknownDevice, "client '" + h->name + "' is not in the network config");
      auto ch = std::make_unique<UdpChannel>(fd_, config_.self_name, h->name, clock_, max_datagram_);
      Envelope reply = Handshake::hello(config_.self_name);
      ch->send(reply);
      Handshake::check_protocol(*h);
      return ch;
    }
  }

  int port() const override { return detail::local_port(fd_->get()); }

 private:
  NetworkConfig config_;
  std::shared_ptr<Clock> clock_;
  std::size_t max_datagram_;
  std::shared_ptr<detail::Fd> fd_;
};

// ---------------------------------------------------------------------------
// Simulated link

class SimChannel final : public Channel {
 public:
  SimChannel(std::shared_ptr<SimLink> link, SimSide side, std::string self, std::string peer)
      : Channel(std::move(self), std::move(peer), std::make_shared<SimClock>(link, side)),
        link_(std::move(link)),
        side_(side) {}

  // Called when a receive finds nothing queued; returns true if it made
  // progress (in sim mode: ran one server step). Drives the single-threaded
  // client/server interleaving.
  void set_idle_hook(std::function<bool()> hook) { idle_hook_ = std::move(hook); }

  bool has_pending() const override { return link_->has_pending(side_); }
  SimLink& link() { return *link_; }
  std::shared_ptr<SimLink> link_ptr() const { return link_; }
  SimSide side() const { return side_; }

 protected:
  void write_frame(const std::string& frame) override { link_->transmit(side_, frame); }

  Received read_frame(std::chrono::milliseconds timeout) override {
    const Nanos limit = link_->true_now() +
                        std::chrono::duration_cast<std::chrono::nanoseconds>(timeout).count();
    for (;;) {
      if (link_->has_pending(side_)) {
        if (link_->front(side_).deliver_at > limit) break;
        SimLink::InFlight f = link_->pop(side_);
        link_->advance_to(f.deliver_at);
        const Nanos recv_ts = clock().now();
        return Received{decode(f.frame), recv_ts};
      }
      if (!idle_hook_ || !idle_hook_()) break;
    }
    link_->advance_to(limit);
    fail(Errc::Timeout, "nothing arrived on the simulated link");
  }

 private:
  std::shared_ptr<SimLink> link_;
  SimSide side_;
  std::function<bool()> idle_hook_;
};

// Creates both ends of a fresh simulated link.
inline std::pair<std::unique_ptr<SimChannel>, std::unique_ptr<SimChannel>> make_sim_pair(
    const SimLinkSpec& spec, const std::string& client_name, const std::string& server_name) {
  auto link = std::make_shared<SimLink>(spec);
  return {std::make_unique<SimChannel>(link, SimSide::Client, client_name, server_name),
          std::make_unique<SimChannel>(link, SimSide::Server, server_name, client_name)};
}

namespace detail {

struct SimListenerState {
  std::mutex mu;
  std::deque<std::unique_ptr<SimChannel>> pending;
};

struct SimRegistry {
  std::mutex mu;
  std::map<std::string, std::weak_ptr<SimListenerState>> listeners;

  static SimRegistry& instance() {
    static SimRegistry r;
    return r;
  }
};

}  // namespace detail

class SimListener final : public Listener {
 public:
  explicit SimListener(std::string name) : name_(std::move(name)) {
    auto& reg = detail::SimRegistry::instance();
    std::lock_guard lock(reg.mu);
    if (auto existing = reg.listeners[name_].lock())
      fail(Errc::Bind, "a simulated listener named '" + name_ + "' already exists");
    reg.listeners[name_] = state_;
  }
  ~SimListener() override {
    auto& reg = detail::SimRegistry::instance();
    std::lock_guard lock(reg.mu);
    reg.listeners.erase(name_);
  }

  std::unique_ptr<Channel> accept(std::chrono::milliseconds) override {
    std::lock_guard lock(state_->mu);
    if (state_->pending.empty()) fail(Errc::Timeout, "no simulated client connected");
    auto ch = std::move(state_->pending.front());
    state_->pending.pop_front();
    return ch;
  }

  int port() const override { return 0; }

 private:
  std::string name_;
  std::shared_ptr<detail::SimListenerState> state_ = std::make_shared<detail::SimListenerState>();
};

// ---------------------------------------------------------------------------
// connect / serve

struct TcpTransport {};
struct UdpTransport {
  std::size_t max_datagram = kDefaultMaxDatagram;
};
using TransportKind = std::variant<TcpTransport, UdpTransport, SimLinkSpec>;

inline const char* transport_name(const TransportKind& kind) {
  if (std::holds_alternative<TcpTransport>(kind)) return "tcp";
  if (std::holds_alternative<UdpTransport>(kind)) return "udp";
  return "sim";
}

struct ConnectOptions {
  std::chrono::milliseconds timeout{5000};
  std::shared_ptr<Clock> clock = std::make_shared<SystemClock>();
};

inline std::unique_ptr<Channel> connect(const NetworkConfig& config, const std::string& peer,
                                        const TransportKind& kind, const ConnectOptions& opts = {}) {
  const Endpoint ep = config.endpoint(peer);
  const auto deadline = detail::deadline_after(opts.timeout);

  if (std::holds_alternative<TcpTransport>(kind)) {
    auto ch = std::make_unique<TcpChannel>(detail::tcp_connect(ep.host, ep.port, deadline),
                                           config.self_name, peer, opts.clock);
    Handshake::client_side(*ch, opts.timeout);
    return ch;
  }

  if (const auto* udp = std::get_if<UdpTransport>(&kind)) {
    if (udp->max_datagram < 64 || udp->max_datagram > 65'507)
      fail(Errc::InvalidConfig, "max datagram must be 64..65507 bytes");
    detail::AddrList addrs;
    detail::resolve(addrs, ep.host, ep.port, SOCK_DGRAM, false);
    auto fd = std::make_shared<detail::Fd>(
        ::socket(addrs.head->ai_family, addrs.head->ai_socktype | SOCK_CLOEXEC, addrs.head->ai_protocol));
    if (!*fd || ::connect(fd->get(), addrs.head->ai_addr, addrs.head->ai_addrlen) != 0)
      fail(Errc::ConnectFailed, detail::errno_text("udp connect"));
    auto ch = std::make_unique<UdpChannel>(fd, config.self_name, peer, opts.clock, udp->max_datagram);
    // HELLO is retried because the first datagrams may hit a server that is
    // not bound yet.
    for (;;) {
      try {
        Handshake::client_side(*ch, std::chrono::milliseconds(200));
        return ch;
      } catch (const Error& e) {
        if (e.code() != Errc::Timeout && e.code() != Errc::ChannelClosed) throw;
        if (std::chrono::steady_clock::now() >= deadline)
          fail(Errc::ConnectFailed, "no HELLO from '" + peer + "' over UDP");
      }
    }
  }

  const auto& spec = std::get<SimLinkSpec>(kind);
  std::shared_ptr<detail::SimListenerState> state;
  {
    auto& reg = detail::SimRegistry::instance();
    std::lock_guard lock(reg.mu);
    if (auto it = reg.listeners.find(peer); it != reg.listeners.end()) state = it->second.lock();
  }
  if (!state) fail(Errc::ConnectFailed, "no simulated listener named '" + peer + "'");
  auto [client, server] = make_sim_pair(spec, config.self_name, peer);
  {
    std::lock_guard lock(state->mu);
    state->pending.push_back(std::move(server));
  }
  return client;
}

inline std::unique_ptr<Listener> serve(const NetworkConfig& config, const TransportKind& kind,
                                       std::shared_ptr<Clock> clock = std::make_shared<SystemClock>()) {
  config.endpoint(config.self_name);
  if (std::holds_alternative<TcpTransport>(kind)) return std::make_unique<TcpListener>(config, clock);
  if (const auto* udp = std::get_if<UdpTransport>(&kind))
    return std::make_unique<UdpListener>(config, clock, udp->max_datagram);
  return std::make_unique<SimListener>(config.self_name);
}

}  // namespace peerprof
