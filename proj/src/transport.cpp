#include "fedface/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <future>
#include <thread>

#include "fedface/log.hpp"

namespace fedface {

InProcessTransport::InProcessTransport(std::vector<ClientNode> clients,
                                       std::optional<std::chrono::milliseconds> timeout,
                                       unsigned workers)
    : timeout_(timeout), workers_(std::max(1u, workers)) {
  for (auto& c : clients) {
    const auto id = c.client_id();
    if (!clients_.emplace(id, std::move(c)).second) {
      throw ConfigError("in-process transport: duplicate client " + std::to_string(id));
    }
  }
}

void InProcessTransport::inject(std::uint32_t client_id, std::uint32_t round, Fault fault) {
  faults_[{client_id, round}] = fault;
}

std::vector<std::uint32_t> InProcessTransport::client_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& [id, _] : clients_) ids.push_back(id);
  return ids;
}

std::vector<WireMessage> InProcessTransport::exchange(std::uint32_t round,
                                                      const std::vector<WireMessage>& broadcasts) {
  struct Job {
    const ClientNode* node;
    std::vector<std::uint8_t> frame;
  };
  std::vector<Job> jobs;
  for (const auto& b : broadcasts) {
    const auto it = clients_.find(b.client_id);
    if (it == clients_.end()) continue;
    const auto f = faults_.find({b.client_id, round});
    if (f != faults_.end()) {
      if (f->second.drop) continue;
      if (timeout_ && f->second.delay > *timeout_) continue;
    }
    jobs.push_back({&it->second, encode(b)});
  }
  std::sort(jobs.begin(), jobs.end(),
            [](const Job& a, const Job& b) { return a.node->client_id() < b.node->client_id(); });

  auto run = [](const Job& job) { return encode(job.node->handle(decode(job.frame))); };
  std::vector<std::vector<std::uint8_t>> frames(jobs.size());
  if (workers_ <= 1 || jobs.size() <= 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) frames[k] = run(jobs[k]);
  } else {
    std::vector<std::future<void>> pending;
    const std::size_t stride = workers_;
    for (std::size_t w = 0; w < stride; ++w) {
      pending.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t k = w; k < jobs.size(); k += stride) frames[k] = run(jobs[k]);
      }));
    }
    for (auto& p : pending) p.get();
  }

  std::vector<WireMessage> replies;
  replies.reserve(frames.size());
  for (const auto& f : frames) replies.push_back(decode(f));
  return replies;
}

namespace {

void send_all(int fd, const std::vector<std::uint8_t>& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

// Reads exactly n bytes; false on orderly EOF before the first byte.
bool recv_exact(int fd, std::uint8_t* out, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, out + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

constexpr std::uint64_t kMaxPayload = 1ULL << 30;

std::optional<WireMessage> read_frame_blocking(int fd) {
  std::vector<std::uint8_t> frame(kFrameHeaderSize);
  if (!recv_exact(fd, frame.data(), kFrameHeaderSize)) return std::nullopt;
  const std::uint64_t len = peek_payload_len(std::span(frame).first<kFrameHeaderSize>());
  if (len > kMaxPayload) throw TransportError("frame payload too large");
  frame.resize(kFrameHeaderSize + len);
  if (len > 0 && !recv_exact(fd, frame.data() + kFrameHeaderSize, len)) {
    throw TransportError("connection closed mid-frame");
  }
  return decode(frame);
}

// Pops one complete frame from the front of buf, if present.
std::optional<WireMessage> pop_frame(std::vector<std::uint8_t>& buf) {
  if (buf.size() < kFrameHeaderSize) return std::nullopt;
  const std::uint64_t len = peek_payload_len(std::span(buf).first<kFrameHeaderSize>());
  if (len > kMaxPayload) throw TransportError("frame payload too large");
  if (buf.size() - kFrameHeaderSize < len) return std::nullopt;
  const auto end = buf.begin() + static_cast<std::ptrdiff_t>(kFrameHeaderSize + len);
  WireMessage msg = decode(std::span(buf.data(), kFrameHeaderSize + len));
  buf.erase(buf.begin(), end);
  return msg;
}

// Non-blocking drain of fd into buf; false when the peer has closed.
bool drain(int fd, std::vector<std::uint8_t>& buf) {
  std::uint8_t chunk[65536];
  const ssize_t r = ::recv(fd, chunk, sizeof(chunk), MSG_DONTWAIT);
  if (r == 0) return false;
  if (r < 0) return errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR;
  buf.insert(buf.end(), chunk, chunk + r);
  return true;
}

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0) throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  return res;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

struct TcpServerTransport::Session {
  int fd = -1;
  std::vector<std::uint8_t> buf;

  ~Session() {
    if (fd >= 0) ::close(fd);
  }
};

TcpServerTransport::TcpServerTransport(const std::string& host, std::uint16_t port,
                                       std::chrono::milliseconds round_timeout)
    : round_timeout_(round_timeout) {
  addrinfo* res = resolve(host, port, true);
  listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (listen_fd_ < 0) {
    ::freeaddrinfo(res);
    throw TransportError(std::string("socket: ") + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const int rc = ::bind(listen_fd_, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0 || ::listen(listen_fd_, 128) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw TransportError("cannot listen on " + host + ":" + std::to_string(port) + ": " + why);
  }
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpServerTransport::~TcpServerTransport() {
  sessions_.clear();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpServerTransport::drop_session(std::uint32_t client_id, const std::string& why) {
  log_warning("client " + std::to_string(client_id) + " disconnected: " + why);
  sessions_.erase(client_id);
}

std::vector<std::uint32_t> TcpServerTransport::accept_clients(
    const std::vector<std::uint32_t>& expected, std::chrono::milliseconds deadline) {
  using clock = std::chrono::steady_clock;
  const auto until = clock::now() + deadline;
  std::vector<std::unique_ptr<Session>> pending;

  auto missing = [&] {
    return std::any_of(expected.begin(), expected.end(),
                       [&](std::uint32_t id) { return !sessions_.count(id); });
  };
  while (missing()) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(until - clock::now());
    if (left.count() <= 0) break;
    std::vector<pollfd> fds{{listen_fd_, POLLIN, 0}};
    for (const auto& p : pending) fds.push_back({p->fd, POLLIN, 0});
    if (::poll(fds.data(), fds.size(), static_cast<int>(left.count())) <= 0) continue;

    if (fds[0].revents & POLLIN) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd >= 0) {
        set_nodelay(fd);
        auto s = std::make_unique<Session>();
        s->fd = fd;
        pending.push_back(std::move(s));
      }
    }
    for (std::size_t k = 1; k < fds.size(); ++k) {
      if (!(fds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      auto& s = pending[k - 1];
      try {
        if (!drain(s->fd, s->buf)) {
          s.reset();
          continue;
        }
        auto hello = pop_frame(s->buf);
        if (!hello) continue;
        const bool wanted =
            std::find(expected.begin(), expected.end(), hello->client_id) != expected.end();
        if (hello->type != MessageType::RoundAck || !wanted || sessions_.count(hello->client_id)) {
          WireMessage err{kWireVersion, MessageType::Error, 0, hello->client_id,
                          encode_error({ErrorCode::BadRequest, "registration refused"})};
          send_all(s->fd, encode(err));
          s.reset();
          continue;
        }
        sessions_[hello->client_id] = std::move(s);
      } catch (const Error& e) {
        log_warning(std::string("bad registration: ") + e.what());
        s.reset();
      }
    }
    std::erase(pending, nullptr);
  }

  std::vector<std::uint32_t> ids;
  for (const auto& [id, _] : sessions_) ids.push_back(id);
  return ids;
}

std::vector<WireMessage> TcpServerTransport::exchange(std::uint32_t round,
                                                      const std::vector<WireMessage>& broadcasts) {
  using clock = std::chrono::steady_clock;
  const auto until = clock::now() + round_timeout_;

  std::vector<std::uint32_t> waiting;
  for (const auto& b : broadcasts) {
    const auto it = sessions_.find(b.client_id);
    if (it == sessions_.end()) continue;
    try {
      send_all(it->second->fd, encode(b));
      waiting.push_back(b.client_id);
    } catch (const TransportError& e) {
      drop_session(b.client_id, e.what());
    }
  }

  std::map<std::uint32_t, WireMessage> replies;
  while (replies.size() < waiting.size()) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(until - clock::now());
    if (left.count() <= 0) break;
    std::vector<pollfd> fds;
    std::vector<std::uint32_t> ids;
    for (auto id : waiting) {
      if (replies.count(id) || !sessions_.count(id)) continue;
      fds.push_back({sessions_[id]->fd, POLLIN, 0});
      ids.push_back(id);
    }
    if (fds.empty()) break;
    if (::poll(fds.data(), fds.size(), static_cast<int>(left.count())) <= 0) continue;
    for (std::size_t k = 0; k < fds.size(); ++k) {
      if (!(fds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      auto& s = *sessions_[ids[k]];
      try {
        if (!drain(s.fd, s.buf)) {
          drop_session(ids[k], "connection closed");
          continue;
        }
        while (auto msg = pop_frame(s.buf)) {
          if (msg->round != round || msg->client_id != ids[k]) continue;  // stale or forged
          replies.emplace(ids[k], std::move(*msg));
        }
      } catch (const Error& e) {
        drop_session(ids[k], e.what());
      }
    }
  }

  for (auto id : waiting) {
    if (!replies.count(id)) log_warning("client " + std::to_string(id) + " missed round " +
                                        std::to_string(round));
  }
  std::vector<WireMessage> out;
  out.reserve(replies.size());
  for (auto& [_, m] : replies) out.push_back(std::move(m));
  return out;
}

void TcpServerTransport::finish(std::uint32_t rounds) {
  for (auto& [id, s] : sessions_) {
    try {
      send_all(s->fd, encode(WireMessage{kWireVersion, MessageType::RoundAck, rounds, id, {}}));
    } catch (const TransportError&) {
    }
  }
  sessions_.clear();
}

std::uint32_t run_tcp_client(const std::string& host, std::uint16_t port, const ClientNode& node,
                             std::chrono::milliseconds connect_timeout) {
  using clock = std::chrono::steady_clock;
  const auto until = clock::now() + connect_timeout;
  int fd = -1;
  while (fd < 0) {
    addrinfo* res = resolve(host, port, false);
    fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) {
      if (clock::now() >= until) {
        throw TransportError("cannot connect to " + host + ":" + std::to_string(port));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }
  struct Closer {
    int fd;
    ~Closer() { ::close(fd); }
  } closer{fd};
  set_nodelay(fd);

  send_all(fd, encode(WireMessage{kWireVersion, MessageType::RoundAck, 0, node.client_id(), {}}));
  std::uint32_t answered = 0;
  while (true) {
    auto msg = read_frame_blocking(fd);
    if (!msg) throw TransportError("server closed the connection");
    switch (msg->type) {
      case MessageType::ServerBroadcast:
        send_all(fd, encode(node.handle(*msg)));
        ++answered;
        break;
      case MessageType::RoundAck:
        return answered;
      case MessageType::Error:
        throw TransportError("server error: " + decode_error(msg->payload).message);
      case MessageType::ClientUpdate:
        throw TransportError("unexpected client update from server");
    }
  }
}

}  // namespace fedface
