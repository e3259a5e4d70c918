#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedface/federation.hpp"
#include "fedface/wire.hpp"

namespace fedface {

// Injected failure for one (client, round).
struct Fault {
  bool drop = false;
  std::chrono::milliseconds delay{0};
};

// Runs every client in-process. Each message goes through encode/decode, so
// the arithmetic matches a networked run bit for bit. Delivery order is
// ascending client_id; delays are simulated against the timeout rather than
// slept.
class InProcessTransport : public Transport {
 public:
  explicit InProcessTransport(std::vector<ClientNode> clients,
                              std::optional<std::chrono::milliseconds> timeout = std::nullopt,
                              unsigned workers = 1);

  void inject(std::uint32_t client_id, std::uint32_t round, Fault fault);

  std::vector<WireMessage> exchange(std::uint32_t round,
                                    const std::vector<WireMessage>& broadcasts) override;

  std::vector<std::uint32_t> client_ids() const;

 private:
  std::map<std::uint32_t, ClientNode> clients_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, Fault> faults_;
  std::optional<std::chrono::milliseconds> timeout_;
  unsigned workers_;
};

// Server end of the TCP transport. Frames are the wire format itself (the
// header carries the payload length). A client registers by sending a
// RoundAck carrying its client_id; the server ends a session with a RoundAck
// whose round equals the number of completed rounds.
//
// No encryption or authentication.
class TcpServerTransport : public Transport {
 public:
  // Binds to host:port (port 0 picks a free port).
  TcpServerTransport(const std::string& host, std::uint16_t port,
                     std::chrono::milliseconds round_timeout = std::chrono::seconds(30));
  ~TcpServerTransport() override;

  TcpServerTransport(const TcpServerTransport&) = delete;
  TcpServerTransport& operator=(const TcpServerTransport&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  // Blocks until every id in `expected` has registered or the deadline
  // passes; returns the ids that registered.
  std::vector<std::uint32_t> accept_clients(const std::vector<std::uint32_t>& expected,
                                            std::chrono::milliseconds deadline);

  std::vector<WireMessage> exchange(std::uint32_t round,
                                    const std::vector<WireMessage>& broadcasts) override;
  void finish(std::uint32_t rounds) override;

 private:
  struct Session;

  void drop_session(std::uint32_t client_id, const std::string& why);

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::chrono::milliseconds round_timeout_;
  std::map<std::uint32_t, std::unique_ptr<Session>> sessions_;
};

// Client end: connects, registers, answers broadcasts until the server ends
// the session. Returns the number of rounds the client answered.
std::uint32_t run_tcp_client(const std::string& host, std::uint16_t port, const ClientNode& node,
                             std::chrono::milliseconds connect_timeout = std::chrono::seconds(10));

}  // namespace fedface
