#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbo/federation.hpp"
#include "fbo/kernel_gp.hpp"
#include "fbo/rff.hpp"
#include "fbo/rng.hpp"

namespace fbo {

// --- schedule ---------------------------------------------------------------

enum class ScheduleKind { kConstantOne, kOneMinusInvSqrt, kOneMinusInvSquare, kTable };

/// Probability p_t of taking the own-GP branch at iteration t (1-based).
/// Built-in decaying kinds use p_1 = p_2. A table holds p_1..p_k and repeats p_k after.
class Schedule {
 public:
  static Schedule constant_one() { return Schedule(ScheduleKind::kConstantOne, {}); }
  static Schedule one_minus_inv_sqrt() { return Schedule(ScheduleKind::kOneMinusInvSqrt, {}); }
  static Schedule one_minus_inv_square() { return Schedule(ScheduleKind::kOneMinusInvSquare, {}); }
  static Schedule table(std::vector<double> values);
  /// "constant_one", "one_minus_inv_sqrt", "one_minus_inv_square", or "table:0.5,0.6,...".
  static Schedule parse(std::string_view text);

  double operator()(std::size_t t) const;
  ScheduleKind kind() const { return kind_; }
  std::string name() const;

 private:
  Schedule(ScheduleKind kind, std::vector<double> table) : kind_(kind), table_(std::move(table)) {}
  ScheduleKind kind_;
  std::vector<double> table_;
};

double eval_schedule(const Schedule& schedule, std::size_t t);

// --- bound quantities ---------------------------------------------------------

/// B + sigma sqrt(2 (gamma_{t-1} + 1 + ln(4/delta))).
double beta_theoretical(double B, double delta, double gamma_prev, double noise_sd);
/// B + sigma sqrt(2 (gamma_{t-1} + 1 + ln(8N/delta))), the agent-side confidence width.
double beta_prime(double B, double delta, double gamma_prev, double noise_sd, std::size_t n_agents);
/// beta_t (1 + sqrt(2 ln(|X| t^2))).
double c_theoretical(std::size_t t, double beta_t, std::size_t domain_size);

struct DeltaInputs {
  double epsilon = 0.0;       // kernel approximation error
  std::size_t t_n = 0;        // agent observation count
  std::size_t t = 1;          // target iteration
  std::size_t n_agents = 1;   // N
  double delta = 0.1;
  double B = 1.0;
  double noise_sd = 0.1;      // sigma
  std::size_t num_features = 1;  // M
  double d_n = 0.0;
  double c_t = 0.0;
  double beta_prime = 0.0;    // beta'_{t_n + 1}
};

/// Bound on |g_hat_{n,t}(x) - f_t(x)|:
///   eps (t_n+1)^2 / sigma^2 (B + sqrt(2 ln(4 pi^2 t^2 N / (3 delta))))
///   + beta'_{t_n+1} + sqrt(2 ln(2 pi^2 t^2 N / (3 delta)) + M) + d_n + c_t
double delta_nt(const DeltaInputs& in);

/// 2 (1 - p_t) sum_n P_N[n] Delta_{n,t}.
double psi_t(double p_t, std::span<const double> weights, std::span<const double> deltas);

/// Upper bound on the information gain of any t_n points: t_n / 2 * ln(1 + sigma0^2 / sigma^2).
double info_gain_upper_bound(std::size_t t_n, double signal_variance, double noise_variance);

struct ScheduleCheck {
  bool passed = true;
  std::optional<std::size_t> first_violation;  // 1-based t
};

/// Checks (1 - p_t) c_t <= (1 - p_1) c_1 for t = 2..T, where c_series[i] = c_{i+1}.
ScheduleCheck validate_schedule(const Schedule& schedule, std::span<const double> c_series);

// --- regret -------------------------------------------------------------------

struct RegretSeries {
  std::vector<double> cumulative;  // R_t
  std::vector<double> simple;      // S_t
};

/// Regret of a query sequence against known values f over the domain.
RegretSeries compute_regret(std::span<const std::size_t> query_indices, const Vector& f);

// --- the loop -------------------------------------------------------------------

enum class FederationMode { kSingleShot, kPerRound };

enum class Branch { kOwnGp, kOwnGpRff, kOwnGpFallback, kAgent };
const char* to_string(Branch branch);

struct BetaConfig {
  enum class Mode { kConstant, kTheoretical } mode = Mode::kConstant;
  double value = 1.0;  // constant mode
  double B = 1.0;      // theoretical mode
  double delta = 0.1;
};

struct DiagnosticsConfig {
  bool enabled = true;
  double B = 1.0;
  double delta = 0.1;
  /// Empirical kernel-approximation error; measured over 1000 random domain pairs when unset.
  std::optional<double> epsilon;
  /// Per-agent d_n. Missing entries fall back to B, which bounds |f - g_n|.
  std::vector<double> d_n;
  /// Per-agent information-gain proxy for gamma_{t_n}; unset uses info_gain_upper_bound.
  std::function<double(std::uint32_t agent_id, std::uint32_t t_n)> agent_gamma;
};

struct FtsConfig {
  std::size_t horizon = 50;
  BetaConfig beta;
  Schedule schedule = Schedule::one_minus_inv_sqrt();
  std::vector<double> policy_weights;  // empty means uniform over the agents
  std::size_t n_agents = 0;
  FederationMode federation_mode = FederationMode::kSingleShot;
  KernelHyper hyper{0.03, 1.0};
  double noise_variance = 0.01;
  std::uint64_t seed = 0;
  DiagnosticsConfig diagnostics;
};

/// Domain and shared basis of a run. grid_features and prior are derived caches.
struct FtsProblem {
  std::shared_ptr<const Domain> domain;
  std::shared_ptr<const RffBasis> basis;
  /// Joint-sample factor; null when the domain exceeds the joint cap (RFF path used instead).
  std::shared_ptr<const GridPrior> prior;
  std::shared_ptr<const Matrix> grid_features;

  /// Builds the derived caches. Pass a prior to reuse one across runs.
  static FtsProblem make(std::shared_ptr<const Domain> domain, std::shared_ptr<const RffBasis> basis,
                         const KernelHyper& hyper, std::shared_ptr<const GridPrior> prior = nullptr,
                         std::size_t joint_cap = kDefaultJointSampleCap);
};

/// Noisy objective. truth holds f over the domain when known (simulation).
struct Objective {
  std::function<double(std::size_t index, RngStream& noise)> observe;
  std::optional<Vector> truth;
};

/// Called before round r (1-based). Single-shot runs call it once with r = 1.
using MessageProvider = std::function<CollectedRound(std::size_t round)>;

struct TraceRecord {
  std::size_t t = 0;
  double p_t = 1.0;
  Branch branch = Branch::kOwnGp;
  std::int64_t agent_id = -1;
  std::size_t x_index = 0;
  Vector x;
  double y = 0.0;
  double f_x = std::numeric_limits<double>::quiet_NaN();
  double regret_inst = std::numeric_limits<double>::quiet_NaN();
  double regret_cum = std::numeric_limits<double>::quiet_NaN();
  double simple_regret = std::numeric_limits<double>::quiet_NaN();
  double best_observed = std::numeric_limits<double>::quiet_NaN();
  double beta_t = 1.0;
  double c_t = 0.0;
  double psi_t = 0.0;
};

struct DiagnosticRecord {
  std::size_t t = 0;
  std::uint32_t agent_id = 0;
  std::uint32_t t_n = 0;
  double epsilon = 0.0;
  double delta_nt = 0.0;
};

struct FtsTrace {
  std::vector<TraceRecord> records;
  std::vector<DiagnosticRecord> diagnostics;
  std::vector<StragglerRecord> stragglers;
  std::vector<Observation> observations;  // the target's final data set
  std::size_t fallbacks = 0;
};

/// Independent streams for one run, keyed by the run seed.
struct FtsStreams {
  RngStream branch;
  RngStream own_sample;
  RngStream noise;
  static FtsStreams from_seed(std::uint64_t seed);
};

/// Mutable state of one FTS run, exposed so single steps can be driven directly.
struct FtsState {
  FtsState(const FtsConfig& config, FtsProblem problem);

  void observe(std::size_t index, double y);
  /// Installs a collection round: messages replace the held ones and agents without an ok
  /// message are marked stragglers. Per-round mode re-arms the policy first.
  void install_round(const CollectedRound& round);

  const FtsConfig* config;
  FtsProblem problem;
  GpModel model;
  std::vector<std::size_t> observed_indices;
  AgentPolicy policy;
  std::vector<std::optional<AgentMessage>> messages;
  std::vector<StragglerRecord> stragglers;
  std::size_t t = 1;
};

struct StepDecision {
  std::size_t t = 0;
  double p_t = 1.0;
  double beta_t = 1.0;
  Branch branch = Branch::kOwnGp;
  std::optional<std::size_t> agent;
  std::size_t x_index = 0;
};

/// One iteration's query choice. Does not observe or advance t.
StepDecision fts_step(FtsState& state, FtsStreams& streams);

FtsTrace run_fts(const FtsConfig& config, const FtsProblem& problem, const Objective& objective,
                 std::span<const std::size_t> initial_indices, const MessageProvider& messages);

/// Plain Thompson sampling on the target GP, written independently of the FTS loop.
FtsTrace run_standard_ts(const FtsConfig& config, const FtsProblem& problem, const Objective& objective,
                         std::span<const std::size_t> initial_indices);

}  // namespace fbo
