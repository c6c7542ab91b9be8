#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fbo/fts.hpp"
#include "fbo/kernel_gp.hpp"

namespace fbo {

inline constexpr std::size_t kSyntheticGridSize = 1000;

/// GP prior draw over the unit grid, min-max scaled into [0, 1].
struct SyntheticObjective {
  std::shared_ptr<const Domain> domain;
  Vector raw;     // unscaled draw
  Vector values;  // scaled
  std::size_t argmax = 0;
};

/// Shared 1000-point grid on [0, 1].
std::shared_ptr<const Domain> synthetic_grid();
std::shared_ptr<const GridPrior> synthetic_prior(double lengthscale);

SyntheticObjective gen_objective(const GridPrior& prior, std::uint64_t seed);
SyntheticObjective gen_objective(double lengthscale, std::uint64_t seed);

/// g_n = f + s * d_n with s = +-1 per grid point, plus t_n noisy observations of g_n at
/// uniformly random grid points (drawn with replacement).
struct AgentObjective {
  double d_n = 0.0;
  Vector signs;
  Vector values;
  std::vector<std::size_t> indices;
  std::vector<Observation> observations;
};

AgentObjective gen_agent(const SyntheticObjective& base, double d_n, std::size_t t_n, double noise_var,
                         std::uint64_t seed);

struct ExperimentConfig {
  std::size_t n_agents = 50;
  std::vector<double> d_n{0.02};       // one value applies to every agent
  std::vector<std::size_t> t_n{100};
  std::size_t m_features = 100;
  double lengthscale_gen = 0.03;
  double lengthscale_rff = 0.03;
  double noise_var = 0.01;
  double rff_noise_var = 0.01;
  Schedule schedule = Schedule::one_minus_inv_sqrt();
  std::size_t horizon = 50;
  std::size_t n_functions = 5;
  std::size_t n_inits = 5;
  std::size_t repeat = 1;
  std::uint64_t seed = 0;
  FederationMode federation_mode = FederationMode::kSingleShot;

  /// Sets one key from its text form. Unknown keys and bad values throw UsageError naming the key.
  void set(std::string_view key, std::string_view value);
  /// "key = value" lines; '#' starts a comment.
  static ExperimentConfig parse(std::istream& in);
  static ExperimentConfig load(const std::string& path);
  std::string to_text() const;
  void validate() const;

  std::size_t replications() const { return n_functions * n_inits * repeat; }
  double agent_d(std::size_t n) const;
  std::size_t agent_t(std::size_t n) const;
};

struct ReplicationId {
  std::size_t function = 0;
  std::size_t init = 0;
  std::size_t repeat = 0;
  std::size_t index = 0;  // position in the canonical order
};

struct ReplicationResult {
  ReplicationId id;
  std::size_t initial_index = 0;
  FtsTrace fts;
  FtsTrace ts;
  std::vector<std::vector<std::uint32_t>> agent_t_n;  // per round, per agent (per-round mode)
};

struct AggregateRow {
  std::size_t t = 0;
  std::string method;
  std::string schedule;
  double mean_simple_regret = 0.0;
  double stderr_ = 0.0;
  std::size_t n_reps = 0;
};

struct ExperimentOptions {
  std::size_t threads = 1;
  /// Execution order over replication indices; empty is canonical order. Results do not depend on it.
  std::vector<std::size_t> order;
  bool run_ts = true;
  bool keep_traces = false;
  bool diagnostics = false;
};

struct ExperimentResult {
  std::vector<AggregateRow> rows;
  std::vector<ReplicationResult> replications;  // canonical order; traces dropped unless keep_traces
  std::vector<DiagnosticRecord> diagnostics;    // first replication only
};

/// Single-shot federation: agents message once before iteration 1.
ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentOptions& options = {});
/// Per-round federation: before each round every agent takes one more TS step on its own objective,
/// refits and sends a fresh weight sample.
ExperimentResult run_increasing_tn(const ExperimentConfig& config, const ExperimentOptions& options = {});

/// Replicates one experiment cell in isolation.
ReplicationResult run_replication(const ExperimentConfig& config, const ReplicationId& id,
                                  const std::shared_ptr<const GridPrior>& prior, bool run_ts, bool diagnostics);

/// Mean and standard error of column t (1-based) of the simple-regret curves.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};
MeanSe simple_regret_at(const ExperimentResult& result, const std::string& method, std::size_t t);
double pooled_se(double se_a, double se_b);

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);
std::vector<AggregateRow> read_aggregate_csv(std::istream& in);

}  // namespace fbo
