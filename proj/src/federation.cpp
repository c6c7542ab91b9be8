#include "fbo/federation.hpp"

#include <algorithm>
#include <cstring>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fbo/errors.hpp"

namespace fbo {

namespace {

constexpr std::string_view kMessageMagic = "FBM1";
// Decoder refuses absurd feature counts before reserving memory.
constexpr std::uint32_t kMaxMessageFeatures = 1u << 24;

}  // namespace

bool bitwise_equal(const AgentMessage& a, const AgentMessage& b) {
  if (a.protocol_version != b.protocol_version || a.agent_id != b.agent_id || a.t_n != b.t_n ||
      a.basis_fingerprint != b.basis_fingerprint || a.omega.size() != b.omega.size())
    return false;
  for (Eigen::Index i = 0; i < a.omega.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.omega(i)) != std::bit_cast<std::uint64_t>(b.omega(i))) return false;
  }
  return true;
}

Bytes encode_message(const AgentMessage& msg) {
  if (msg.omega.size() > static_cast<Eigen::Index>(kMaxMessageFeatures))
    throw UsageError("omega: too many features to encode");
  for (Eigen::Index i = 0; i < msg.omega.size(); ++i) {
    if (!std::isfinite(msg.omega(i))) throw UsageError("omega: non-finite entry at index " + std::to_string(i));
  }
  ByteWriter w;
  w.raw(kMessageMagic);
  w.u8(msg.protocol_version);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.u32(msg.agent_id);
  w.u32(msg.t_n);
  w.u32(static_cast<std::uint32_t>(msg.omega.size()));
  for (Eigen::Index i = 0; i < msg.omega.size(); ++i) w.f64(msg.omega(i));
  w.u64(msg.basis_fingerprint);
  return std::move(w).bytes();
}

AgentMessage decode_message(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.raw(4, "magic") != kMessageMagic) throw ProtocolError("magic: expected \"FBM1\"");
  AgentMessage msg;
  msg.protocol_version = r.u8("version");
  if (msg.protocol_version != kProtocolVersion)
    throw ProtocolError("version: unsupported protocol version " + std::to_string(msg.protocol_version));
  const auto reserved = r.raw(3, "reserved");
  for (char c : reserved) {
    if (c != 0) throw ProtocolError("reserved: bytes must be zero");
  }
  msg.agent_id = r.u32("agent_id");
  msg.t_n = r.u32("t_n");
  const std::uint32_t m = r.u32("M");
  if (m > kMaxMessageFeatures) throw ProtocolError("M: " + std::to_string(m) + " exceeds decoder limit");
  if (r.remaining() < std::size_t{8} * m) {
    throw ProtocolError("omega: expected M·8 = " + std::to_string(std::size_t{8} * m) + " bytes, got " +
                        std::to_string(r.remaining()));
  }
  msg.omega.resize(m);
  for (std::uint32_t i = 0; i < m; ++i) {
    const double v = r.f64("omega");
    if (!std::isfinite(v)) throw ProtocolError("omega: non-finite entry at index " + std::to_string(i));
    msg.omega(i) = v;
  }
  msg.basis_fingerprint = r.u64("basis_fingerprint");
  if (r.remaining() != 0)
    throw ProtocolError("trailing: " + std::to_string(r.remaining()) + " unexpected bytes after fingerprint");
  return msg;
}

AgentState::AgentState(std::uint32_t agent_id, std::shared_ptr<const RffBasis> basis, double noise_variance)
    : agent_id_(agent_id), basis_(std::move(basis)), noise_variance_(noise_variance) {
  if (!basis_) throw UsageError("AgentState needs a basis");
  refit();
}

void AgentState::add_observation(Vector x, double y) {
  observations_.push_back({std::move(x), y});
  refit();
}

void AgentState::add_observations(std::span<const Observation> obs) {
  observations_.insert(observations_.end(), obs.begin(), obs.end());
  refit();
}

void AgentState::refit() { posterior_ = fit_rff_posterior(*basis_, observations_, noise_variance_); }

AgentMessage make_message(const AgentState& agent, RngStream& rng) {
  AgentMessage msg;
  msg.agent_id = agent.agent_id();
  msg.t_n = static_cast<std::uint32_t>(agent.observations().size());
  msg.omega = sample_weights(agent.posterior(), rng);
  msg.basis_fingerprint = agent.basis().fingerprint;
  return msg;
}

AgentPolicy::AgentPolicy(std::vector<double> base_weights) : base_(std::move(base_weights)) {
  if (base_.empty()) throw UsageError("policy needs at least one agent");
  for (double w : base_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("policy weights must be finite and nonnegative");
  }
  rearm();
}

AgentPolicy AgentPolicy::uniform(std::size_t n) { return AgentPolicy(std::vector<double>(n, 1.0)); }

void AgentPolicy::rearm() {
  weights_ = base_;
  active_.assign(base_.size(), false);
  for (std::size_t i = 0; i < base_.size(); ++i) active_[i] = base_[i] > 0.0;
  renormalize();
}

void AgentPolicy::renormalize() {
  double total = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (active_[i]) total += weights_[i];
  }
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    weights_[i] = active_[i] && total > 0.0 ? weights_[i] / total : 0.0;
  }
}

void AgentPolicy::remove(std::size_t n, const char* what) {
  if (n >= weights_.size()) throw UsageError(std::string(what) + ": agent index out of range");
  if (!active_[n]) throw UsageError(std::string(what) + ": agent " + std::to_string(n) + " is already inactive");
  active_[n] = false;
  weights_[n] = 0.0;
  renormalize();
}

void AgentPolicy::mark_used(std::size_t n) { remove(n, "mark_used"); }
void AgentPolicy::mark_straggler(std::size_t n) { remove(n, "mark_straggler"); }

bool AgentPolicy::any_active() const { return active_count() > 0; }

std::size_t AgentPolicy::active_count() const {
  return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), true));
}

std::optional<std::size_t> AgentPolicy::sample(RngStream& rng) const {
  std::optional<std::size_t> last_positive;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (active_[i] && weights_[i] > 0.0) last_positive = i;
  }
  if (!last_positive) return std::nullopt;
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (!active_[i] || weights_[i] <= 0.0) continue;
    cumulative += weights_[i];
    if (u < cumulative) return i;
  }
  // Rounding can leave the cumulative sum a hair under u.
  return last_positive;
}

const char* to_string(AgentStatus status) {
  switch (status) {
    case AgentStatus::kOk: return "ok";
    case AgentStatus::kTimeout: return "timeout";
    case AgentStatus::kBadFingerprint: return "bad_fingerprint";
    case AgentStatus::kMalformed: return "malformed";
  }
  return "unknown";
}

std::string straggler_csv(std::span<const StragglerRecord> rows, bool header) {
  std::ostringstream out;
  if (header) out << "round,agent_id,status\n";
  for (const auto& r : rows) out << r.round << ',' << r.agent_id << ',' << to_string(r.status) << '\n';
  return out.str();
}

Bytes frame(std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(payload.size()));
  Bytes out = std::move(w).bytes();
  const std::size_t head = out.size();
  out.resize(head + payload.size());
  if (!payload.empty()) std::memcpy(out.data() + head, payload.data(), payload.size());
  return out;
}

std::vector<Bytes> unframe_all(std::span<const std::uint8_t> buffer) {
  std::vector<Bytes> out;
  ByteReader r(buffer);
  while (r.remaining() > 0) {
    const std::uint32_t len = r.u32("frame length");
    r.need(len, "frame payload");
    const auto payload = r.raw(len, "frame payload");
    out.emplace_back(payload.begin(), payload.end());
  }
  return out;
}

}  // namespace fbo
