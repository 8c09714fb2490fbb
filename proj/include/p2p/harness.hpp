#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "p2p/engine.hpp"
#include "p2p/errors.hpp"
#include "p2p/market.hpp"

namespace p2p {

/// The only thing prosumers ever put on the wire. Coefficients, bounds,
/// set points and bound multipliers have no slot here.
struct TradeMessage {
  AgentId from = 0;
  AgentId to = 0;
  std::uint64_t iteration = 0;
  double p = 0.0;
  double pi = 0.0;
};

// Wire record: u32 body length (32), then from u32, to u32, iteration u64,
// p f64, pi f64. All little-endian; floats travel as their IEEE-754 bits.
inline constexpr std::size_t kFrameBodyBytes = 32;
inline constexpr std::size_t kFrameBytes = 4 + kFrameBodyBytes;
using Frame = std::array<std::byte, kFrameBytes>;

Frame encode_frame(const TradeMessage& msg) noexcept;
/// Throws PrivacyViolation when the length prefix is not the schema's.
TradeMessage decode_frame(std::span<const std::byte> bytes);

/// A partner went silent past the receive deadline. Carries whatever the
/// harness had completed when the run was aborted.
class TransportTimeout : public Error {
 public:
  using Error::Error;

  const SettlementReport& partial() const noexcept { return partial_; }
  void set_partial(SettlementReport r) { partial_ = std::move(r); }

 private:
  SettlementReport partial_;
};

/// Point-to-point channels between trading partners. Per ordered pair the
/// delivery is FIFO; receive blocks until the expected record arrives or the
/// timeout passes. Every sent frame can be captured for auditing.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual void send(const TradeMessage& msg) = 0;
  /// Next record on the channel from -> self; it must be for `iteration`.
  virtual TradeMessage receive(AgentId self, AgentId from, std::uint64_t iteration) = 0;
  virtual bool connected(AgentId a, AgentId b) const = 0;
  /// Wakes every blocked receiver; later receives fail.
  virtual void shutdown() = 0;

  std::chrono::milliseconds timeout() const noexcept { return timeout_; }
  void set_timeout(std::chrono::milliseconds t) noexcept { timeout_ = t; }

  std::vector<Frame> captured() const;
  void clear_capture();

 protected:
  explicit Transport(std::chrono::milliseconds timeout) : timeout_(timeout) {}
  void record(const Frame& frame);

 private:
  std::chrono::milliseconds timeout_;
  mutable std::mutex capture_mutex_;
  std::vector<Frame> capture_;
};

inline constexpr std::chrono::milliseconds kDefaultReceiveTimeout{5000};

/// Mailboxes in shared memory, one per directed edge.
class InProcTransport final : public Transport {
 public:
  explicit InProcTransport(const Market& market,
                           std::chrono::milliseconds timeout = kDefaultReceiveTimeout);
  ~InProcTransport() override;

  void send(const TradeMessage& msg) override;
  TradeMessage receive(AgentId self, AgentId from, std::uint64_t iteration) override;
  bool connected(AgentId a, AgentId b) const override;
  void shutdown() override;

 private:
  struct Mailbox;
  std::map<std::pair<AgentId, AgentId>, std::unique_ptr<Mailbox>> boxes_;  // key (from, to)
};

struct TcpOptions {
  /// Agent k listens on port_base + k; unset means ephemeral ports.
  std::optional<std::uint16_t> port_base;
  std::chrono::milliseconds timeout = kDefaultReceiveTimeout;

  /// Reads P2P_TCP_PORT_BASE when set.
  static TcpOptions from_env();
};

/// One loopback TCP connection per trading pair, on 127.0.0.1.
class TcpTransport final : public Transport {
 public:
  TcpTransport(const Market& market, TcpOptions options = {});
  ~TcpTransport() override;
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  void send(const TradeMessage& msg) override;
  TradeMessage receive(AgentId self, AgentId from, std::uint64_t iteration) override;
  bool connected(AgentId a, AgentId b) const override;
  void shutdown() override;

 private:
  std::map<std::pair<AgentId, AgentId>, int> sockets_;  // (owner, partner) -> fd
};

/// A prosumer that only knows its own data and its partners' ids.
class ProsumerAgent {
 public:
  ProsumerAgent(ProsumerSpec spec, std::vector<AgentId> partners, SolverConfig cfg);

  AgentId id() const noexcept { return spec_.id; }
  std::span<const AgentId> partners() const noexcept { return partners_; }
  std::span<const TradeState> trades() const noexcept { return trades_; }
  const AgentState& state() const noexcept { return state_; }

  /// Power phase of `iteration`: one outgoing message per partner.
  std::vector<TradeMessage> propose(std::uint64_t iteration);
  /// Dual phase from the partners' messages (ascending partner order).
  ChangeNorms absorb(std::span<const TradeMessage> replies);
  void restart();

 private:
  ProsumerSpec spec_;
  std::vector<AgentId> partners_;
  SolverConfig cfg_;
  std::vector<TradeState> trades_;
  AgentState state_;
  std::vector<double> pending_p_;
  std::uint64_t pending_iteration_ = 0;
};

struct HarnessOptions {
  /// Fault injection: this agent stops before sending in the given round.
  std::optional<std::pair<AgentId, std::uint64_t>> kill_agent;
  /// Deadline for the end-of-round rendezvous.
  std::chrono::milliseconds rendezvous_timeout = kDefaultReceiveTimeout;
};

/// One thread per prosumer, exchanging only TradeMessages over `transport`,
/// with a barrier and an error-aggregation rendezvous at the end of every
/// round. Produces the same report as run_clearing, bit for bit.
/// Throws GraphDisconnected or TransportTimeout.
SettlementReport run_distributed(const Market& market, const SolverConfig& cfg,
                                 Transport& transport, const HarnessOptions& options = {});

struct AuditResult {
  std::size_t messages = 0;
  std::size_t rounds = 0;
};

/// Decoded form of captured frames, one JSON object per message.
std::vector<nlohmann::json> decode_capture(std::span<const Frame> frames);

/// Checks each record carries exactly the TradeMessage fields, names a graph
/// edge, and that every round 1..R holds one message per directed edge.
/// When `rounds` is given, R must equal it. Throws PrivacyViolation.
AuditResult message_audit(std::span<const nlohmann::json> records, const Market& market,
                          std::optional<std::size_t> rounds = std::nullopt);

AuditResult audit_wire(std::span<const Frame> frames, const Market& market,
                       std::optional<std::size_t> rounds = std::nullopt);

}  // namespace p2p
