#pragma once

// Thin POSIX socket helpers used by the TCP and UDP channels.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <thread>
#include <utility>

#include "peerprof/error.hpp"

namespace peerprof::detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

using SteadyDeadline = std::chrono::steady_clock::time_point;

inline SteadyDeadline deadline_after(std::chrono::milliseconds ms) {
  return std::chrono::steady_clock::now() + ms;
}

inline std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

// Blocks until `fd` is readable/writable or the deadline passes.
inline bool wait_fd(int fd, short events, SteadyDeadline deadline) {
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    const int ms = left.count() < 0 ? 0 : static_cast<int>(std::min<long long>(left.count(), 1 << 30));
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, ms);
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) fail(Errc::Io, errno_text("poll"));
  }
}

struct AddrList {
  addrinfo* head = nullptr;
  AddrList() = default;
  AddrList(const AddrList&) = delete;
  AddrList& operator=(const AddrList&) = delete;
  ~AddrList() {
    if (head) ::freeaddrinfo(head);
  }
};

inline void resolve(AddrList& out, const std::string& host, int port, int socktype, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = socktype;
  hints.ai_flags = passive ? AI_PASSIVE : 0;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &out.head);
  if (rc != 0)
    fail(Errc::ConnectFailed, "cannot resolve " + host + ":" + service + ": " + ::gai_strerror(rc));
}

inline void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        wait_fd(fd, POLLOUT, deadline_after(std::chrono::milliseconds(60'000)));
        continue;
      }
      fail(Errc::ChannelClosed, errno_text("send"));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

inline void read_exact(int fd, char* dst, std::size_t n, SteadyDeadline deadline) {
  while (n > 0) {
    if (!wait_fd(fd, POLLIN, deadline)) fail(Errc::Timeout, "no data before deadline");
    const ssize_t r = ::recv(fd, dst, n, 0);
    if (r == 0) fail(Errc::ChannelClosed, "peer closed the connection");
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      fail(Errc::ChannelClosed, errno_text("recv"));
    }
    dst += r;
    n -= static_cast<std::size_t>(r);
  }
}

// Connects with retries until the deadline; a peer that is not listening yet
// (ECONNREFUSED) is retried rather than reported immediately.
inline Fd tcp_connect(const std::string& host, int port, SteadyDeadline deadline) {
  std::string last = "timed out";
  do {
    AddrList addrs;
    resolve(addrs, host, port, SOCK_STREAM, false);
    for (addrinfo* a = addrs.head; a != nullptr; a = a->ai_next) {
      Fd fd(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
      if (!fd) continue;
      if (::connect(fd.get(), a->ai_addr, a->ai_addrlen) == 0) {
        int one = 1;
        ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return fd;
      }
      last = errno_text("connect");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  } while (std::chrono::steady_clock::now() < deadline);
  fail(Errc::ConnectFailed, host + ":" + std::to_string(port) + ": " + last);
}

inline Fd bind_socket(const std::string& host, int port, int socktype) {
  AddrList addrs;
  resolve(addrs, host, port, socktype, true);
  std::string last = "no usable address";
  for (addrinfo* a = addrs.head; a != nullptr; a = a->ai_next) {
    Fd fd(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!fd) continue;
    if (socktype == SOCK_STREAM) {
      int one = 1;
      ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    }
    if (::bind(fd.get(), a->ai_addr, a->ai_addrlen) != 0) {
      last = errno_text("bind");
      continue;
    }
    if (socktype == SOCK_STREAM && ::listen(fd.get(), 16) != 0) {
      last = errno_text("listen");
      continue;
    }
    return fd;
  }
  fail(Errc::Bind, host + ":" + std::to_string(port) + ": " + last);
}

inline int local_port(int fd) {
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&ss), &len) != 0) return 0;
  if (ss.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  if (ss.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
  return 0;
}

}  // namespace peerprof::detail
