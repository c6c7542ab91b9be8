#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fbo/bytes.hpp"
#include "fbo/kernel_gp.hpp"
#include "fbo/rff.hpp"
#include "fbo/rng.hpp"

namespace fbo {

inline constexpr std::uint8_t kProtocolVersion = 1;

/// Weight sample one agent sends to the target.
struct AgentMessage {
  std::uint8_t protocol_version = kProtocolVersion;
  std::uint32_t agent_id = 0;
  std::uint32_t t_n = 0;
  Vector omega;
  std::uint64_t basis_fingerprint = 0;

  std::size_t num_features() const { return static_cast<std::size_t>(omega.size()); }
};

/// Field-wise equality with omega compared bit for bit.
bool bitwise_equal(const AgentMessage& a, const AgentMessage& b);

/// Wire layout (all little-endian):
///   "FBM1" | version u8 | 3 reserved zero bytes | agent_id u32 | t_n u32 | M u32 |
///   omega M x f64 | basis_fingerprint u64
inline constexpr std::size_t kMessageHeaderBytes = 20;
inline constexpr std::size_t encoded_message_size(std::size_t m) { return kMessageHeaderBytes + 8 * m + 8; }

Bytes encode_message(const AgentMessage& msg);
/// Throws ProtocolError naming the offending field.
AgentMessage decode_message(std::span<const std::uint8_t> bytes);

/// One contributing agent: its observations, the shared basis and the posterior fitted to them.
class AgentState {
 public:
  AgentState(std::uint32_t agent_id, std::shared_ptr<const RffBasis> basis, double noise_variance);

  void add_observation(Vector x, double y);
  void add_observations(std::span<const Observation> obs);

  std::uint32_t agent_id() const { return agent_id_; }
  const std::vector<Observation>& observations() const { return observations_; }
  const RffBasis& basis() const { return *basis_; }
  const RffPosterior& posterior() const { return posterior_; }
  double noise_variance() const { return noise_variance_; }

 private:
  void refit();

  std::uint32_t agent_id_;
  std::shared_ptr<const RffBasis> basis_;
  double noise_variance_;
  std::vector<Observation> observations_;
  RffPosterior posterior_;
};

AgentMessage make_message(const AgentState& agent, RngStream& rng);

/// Discrete distribution over contributing agents.
///
/// Removing an agent (after use, or as a straggler) zeroes its weight and rescales the
/// remaining active weights to sum to one. Agents with zero base weight start inactive.
class AgentPolicy {
 public:
  explicit AgentPolicy(std::vector<double> base_weights);
  static AgentPolicy uniform(std::size_t n);

  /// None when no agent is active.
  std::optional<std::size_t> sample(RngStream& rng) const;

  void mark_used(std::size_t n);
  void mark_straggler(std::size_t n);
  /// Restore base weights (start of a per-round communication round).
  void rearm();

  std::size_t size() const { return weights_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  bool active(std::size_t n) const { return active_.at(n); }
  bool any_active() const;
  std::size_t active_count() const;

 private:
  void remove(std::size_t n, const char* what);
  void renormalize();

  std::vector<double> base_;
  std::vector<double> weights_;
  std::vector<bool> active_;
};

// --- transport -------------------------------------------------------------

enum class AgentStatus { kOk, kTimeout, kBadFingerprint, kMalformed };
const char* to_string(AgentStatus status);

/// Something that can be asked for one encoded message. nullopt means no answer before the deadline.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual std::optional<Bytes> fetch(std::chrono::milliseconds timeout) = 0;
  virtual std::string describe() const = 0;
};

/// Endpoint backed by a callable, for in-process simulation and fault injection.
class InProcessEndpoint : public Endpoint {
 public:
  using Handler = std::function<std::optional<Bytes>(std::chrono::milliseconds)>;
  explicit InProcessEndpoint(Handler handler, std::string name = "in-process");
  std::optional<Bytes> fetch(std::chrono::milliseconds timeout) override;
  std::string describe() const override { return name_; }

 private:
  Handler handler_;
  std::string name_;
};

/// TCP endpoint. Request: an empty frame (u32 LE 0). Reply: one frame holding an encoded message.
class TcpEndpoint : public Endpoint {
 public:
  TcpEndpoint(std::string host, std::uint16_t port);
  std::optional<Bytes> fetch(std::chrono::milliseconds timeout) override;
  std::string describe() const override;

 private:
  std::string host_;
  std::uint16_t port_;
};

struct AgentEndpoint {
  std::uint32_t agent_id = 0;  // configured identity, not negotiated
  std::shared_ptr<Endpoint> endpoint;
};

struct StragglerRecord {
  std::size_t round = 0;
  std::uint32_t agent_id = 0;
  AgentStatus status = AgentStatus::kOk;
  std::string detail;
};

struct CollectedRound {
  std::vector<AgentMessage> messages;
  std::vector<StragglerRecord> report;  // one row per endpoint, in endpoint order
};

struct CollectOptions {
  std::size_t round = 1;
  std::chrono::milliseconds timeout{5000};
  std::uint64_t expected_fingerprint = 0;
  std::optional<std::size_t> expected_features;
};

/// Queries every endpoint concurrently. Per-agent failures are reported, never thrown.
CollectedRound request_messages(std::span<const AgentEndpoint> endpoints, const CollectOptions& options);

/// CSV with header round,agent_id,status.
std::string straggler_csv(std::span<const StragglerRecord> rows, bool header = true);

/// u32 LE length prefix framing.
Bytes frame(std::span<const std::uint8_t> payload);
/// Splits a buffer of consecutive frames (archive format).
std::vector<Bytes> unframe_all(std::span<const std::uint8_t> buffer);

/// Serves encoded messages over TCP, one request per connection, until stopped.
class AgentServer {
 public:
  using Responder = std::function<Bytes()>;

  /// Binds to 127.0.0.1/0.0.0.0:port (0 picks a free port). Throws std::system_error on bind failure.
  AgentServer(std::uint16_t port, Responder responder, bool loopback_only = true);
  ~AgentServer();
  AgentServer(const AgentServer&) = delete;
  AgentServer& operator=(const AgentServer&) = delete;

  std::uint16_t port() const { return port_; }
  /// Blocks, answering requests until stop() or until max_requests have been served.
  void serve(std::optional<std::size_t> max_requests = std::nullopt);
  /// serve() on a background thread.
  void start();
  void stop();
  std::size_t served() const { return served_.load(); }

 private:
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  Responder responder_;
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> served_{0};
  std::thread thread_;
};

/// Server answering each request with a fresh message sampled from the agent's posterior.
/// The agent and rng must outlive the server.
std::unique_ptr<AgentServer> serve_agent(const AgentState& agent, std::uint16_t port, RngStream& rng);

}  // namespace fbo
