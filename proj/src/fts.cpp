#include "fbo/fts.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "fbo/errors.hpp"

namespace fbo {

// --- schedule ---------------------------------------------------------------

Schedule Schedule::table(std::vector<double> values) {
  if (values.empty()) throw UsageError("schedule table must be non-empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0 && values[i] <= 1.0)) throw UsageError("schedule values must lie in (0, 1]");
    if (i > 0 && values[i] < values[i - 1]) throw UsageError("schedule table must be nondecreasing");
  }
  return Schedule(ScheduleKind::kTable, std::move(values));
}

Schedule Schedule::parse(std::string_view text) {
  if (text == "constant_one") return constant_one();
  if (text == "one_minus_inv_sqrt") return one_minus_inv_sqrt();
  if (text == "one_minus_inv_square") return one_minus_inv_square();
  if (text.starts_with("table:")) {
    std::vector<double> values;
    std::string_view rest = text.substr(6);
    while (!rest.empty()) {
      const auto comma = rest.find_first_of(",;");
      const std::string_view item = rest.substr(0, comma);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || ptr != item.data() + item.size())
        throw UsageError("schedule: bad table value '" + std::string(item) + "'");
      values.push_back(v);
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return table(std::move(values));
  }
  throw UsageError("schedule: unknown kind '" + std::string(text) + "'");
}

double Schedule::operator()(std::size_t t) const {
  if (t == 0) throw UsageError("schedule is defined for t >= 1");
  const double tt = static_cast<double>(std::max<std::size_t>(t, 2));
  switch (kind_) {
    case ScheduleKind::kConstantOne: return 1.0;
    case ScheduleKind::kOneMinusInvSqrt: return 1.0 - 1.0 / std::sqrt(tt);
    case ScheduleKind::kOneMinusInvSquare: return 1.0 - 1.0 / (tt * tt);
    case ScheduleKind::kTable: return table_[std::min(t, table_.size()) - 1];
  }
  return 1.0;
}

std::string Schedule::name() const {
  switch (kind_) {
    case ScheduleKind::kConstantOne: return "constant_one";
    case ScheduleKind::kOneMinusInvSqrt: return "one_minus_inv_sqrt";
    case ScheduleKind::kOneMinusInvSquare: return "one_minus_inv_square";
    case ScheduleKind::kTable: {
      // ';' keeps the name a single CSV field.
      std::string out = "table:";
      for (std::size_t i = 0; i < table_.size(); ++i) {
        if (i) out += ';';
        char buf[32];
        out.append(buf, std::to_chars(buf, buf + sizeof(buf), table_[i]).ptr);
      }
      return out;
    }
  }
  return "unknown";
}

double eval_schedule(const Schedule& schedule, std::size_t t) { return schedule(t); }

// --- bound quantities ---------------------------------------------------------

namespace {

void check_delta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw UsageError("delta must lie in (0, 1)");
}

}  // namespace

double beta_theoretical(double B, double delta, double gamma_prev, double noise_sd) {
  check_delta(delta);
  if (!(B > 0.0)) throw UsageError("B must be positive");
  return B + noise_sd * std::sqrt(2.0 * (gamma_prev + 1.0 + std::log(4.0 / delta)));
}

double beta_prime(double B, double delta, double gamma_prev, double noise_sd, std::size_t n_agents) {
  check_delta(delta);
  if (!(B > 0.0)) throw UsageError("B must be positive");
  const double n = static_cast<double>(n_agents);
  return B + noise_sd * std::sqrt(2.0 * (gamma_prev + 1.0 + std::log(8.0 * n / delta)));
}

double c_theoretical(std::size_t t, double beta_t, std::size_t domain_size) {
  if (t == 0) throw UsageError("c_t is defined for t >= 1");
  const double tt = static_cast<double>(t);
  return beta_t * (1.0 + std::sqrt(2.0 * std::log(static_cast<double>(domain_size) * tt * tt)));
}

double delta_nt(const DeltaInputs& in) {
  check_delta(in.delta);
  const double pi2 = std::numbers::pi * std::numbers::pi;
  const double t2n = static_cast<double>(in.t) * static_cast<double>(in.t) * static_cast<double>(in.n_agents);
  const double tn1 = static_cast<double>(in.t_n) + 1.0;
  const double approx = in.epsilon * tn1 * tn1 / (in.noise_sd * in.noise_sd) *
                        (in.B + std::sqrt(2.0 * std::log(4.0 * pi2 * t2n / (3.0 * in.delta))));
  const double sample_width =
      std::sqrt(2.0 * std::log(2.0 * pi2 * t2n / (3.0 * in.delta)) + static_cast<double>(in.num_features));
  return approx + in.beta_prime + sample_width + in.d_n + in.c_t;
}

double psi_t(double p_t, std::span<const double> weights, std::span<const double> deltas) {
  if (weights.size() != deltas.size()) throw UsageError("psi_t: weights and deltas differ in length");
  if (p_t == 1.0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) sum += weights[i] * deltas[i];
  }
  return 2.0 * (1.0 - p_t) * sum;
}

double info_gain_upper_bound(std::size_t t_n, double signal_variance, double noise_variance) {
  return 0.5 * static_cast<double>(t_n) * std::log1p(signal_variance / noise_variance);
}

ScheduleCheck validate_schedule(const Schedule& schedule, std::span<const double> c_series) {
  if (c_series.size() < 2) throw UsageError("validate_schedule needs T >= 2");
  const double reference = (1.0 - schedule(1)) * c_series[0];
  for (std::size_t i = 1; i < c_series.size(); ++i) {
    const std::size_t t = i + 1;
    if ((1.0 - schedule(t)) * c_series[i] > reference) return {false, t};
  }
  return {true, std::nullopt};
}

// --- regret -------------------------------------------------------------------

RegretSeries compute_regret(std::span<const std::size_t> query_indices, const Vector& f) {
  if (f.size() == 0) throw UsageError("compute_regret needs the true function values");
  const double best = f.maxCoeff();
  RegretSeries out;
  out.cumulative.reserve(query_indices.size());
  out.simple.reserve(query_indices.size());
  double cum = 0.0;
  double simple = std::numeric_limits<double>::infinity();
  for (std::size_t idx : query_indices) {
    const double gap = best - f(static_cast<Eigen::Index>(idx));
    cum += gap;
    simple = std::min(simple, gap);
    out.cumulative.push_back(cum);
    out.simple.push_back(simple);
  }
  return out;
}

// --- the loop -------------------------------------------------------------------

const char* to_string(Branch branch) {
  switch (branch) {
    case Branch::kOwnGp: return "own_gp";
    case Branch::kOwnGpRff: return "own_gp_rff";
    case Branch::kOwnGpFallback: return "own_gp_fallback";
    case Branch::kAgent: return "agent";
  }
  return "unknown";
}

FtsProblem FtsProblem::make(std::shared_ptr<const Domain> domain, std::shared_ptr<const RffBasis> basis,
                            const KernelHyper& hyper, std::shared_ptr<const GridPrior> prior,
                            std::size_t joint_cap) {
  if (!domain) throw UsageError("FtsProblem needs a domain");
  FtsProblem p;
  p.domain = std::move(domain);
  p.basis = std::move(basis);
  if (prior) {
    if (!(prior->hyper() == hyper) || prior->domain().size() != p.domain->size())
      throw UsageError("supplied GridPrior does not match the problem");
    p.prior = std::move(prior);
  } else if (p.domain->size() <= joint_cap) {
    p.prior = std::make_shared<GridPrior>(*p.domain, hyper, joint_cap);
  }
  if (p.basis) p.grid_features = std::make_shared<Matrix>(feature_matrix(*p.basis, p.domain->points()));
  return p;
}

FtsStreams FtsStreams::from_seed(std::uint64_t seed) {
  return {RngStream::keyed(seed, {static_cast<std::uint64_t>(StreamRole::kBranch)}),
          RngStream::keyed(seed, {static_cast<std::uint64_t>(StreamRole::kOwnSample)}),
          RngStream::keyed(seed, {static_cast<std::uint64_t>(StreamRole::kObservationNoise)})};
}

namespace {

std::vector<double> policy_weights_for(const FtsConfig& config) {
  const std::size_t n = config.policy_weights.empty() ? config.n_agents : config.policy_weights.size();
  if (n == 0) return {0.0};  // placeholder agent that is never active
  if (config.policy_weights.empty()) return std::vector<double>(n, 1.0);
  return config.policy_weights;
}

double current_beta(const FtsState& state) {
  const auto& beta = state.config->beta;
  if (beta.mode == BetaConfig::Mode::kConstant) return beta.value;
  return beta_theoretical(beta.B, beta.delta, state.model.info_gain(), std::sqrt(state.config->noise_variance));
}

/// Own-branch query: joint draw over the grid when a prior factor exists, RFF draw otherwise.
std::pair<std::size_t, Branch> own_branch_query(const FtsState& state, double beta, RngStream& rng) {
  const auto& problem = state.problem;
  if (problem.prior) {
    const Vector draw = sample_gp_function(state.model, beta, *problem.prior, state.observed_indices, rng);
    return {argmax(draw), Branch::kOwnGp};
  }
  if (!problem.basis) throw CapacityError("domain exceeds the joint cap and no random-feature basis is set");
  const RffPosterior post =
      fit_rff_posterior(*problem.basis, state.model.observations(), state.config->noise_variance);
  const Vector omega = sample_weights(post, rng);
  return {argmax(*problem.grid_features * omega), Branch::kOwnGpRff};
}

}  // namespace

FtsState::FtsState(const FtsConfig& cfg, FtsProblem prob)
    : config(&cfg),
      problem(std::move(prob)),
      model(cfg.hyper, cfg.noise_variance),
      policy(policy_weights_for(cfg)) {
  if (cfg.horizon == 0) throw UsageError("horizon must be >= 1");
  if (!problem.domain) throw UsageError("problem has no domain");
  messages.resize(policy.size());
}

void FtsState::observe(std::size_t index, double y) {
  model.add_observation(problem.domain->point(index), y);
  observed_indices.push_back(index);
}

void FtsState::install_round(const CollectedRound& round) {
  if (config->federation_mode == FederationMode::kPerRound) policy.rearm();
  std::vector<bool> received(policy.size(), false);
  for (auto& m : messages) m.reset();
  for (const auto& msg : round.messages) {
    if (msg.agent_id >= policy.size()) {
      warn("ignoring message from unknown agent " + std::to_string(msg.agent_id));
      continue;
    }
    if (problem.basis && (msg.basis_fingerprint != problem.basis->fingerprint ||
                          msg.num_features() != problem.basis->num_features)) {
      warn("ignoring message from agent " + std::to_string(msg.agent_id) + " with mismatched basis");
      continue;
    }
    messages[msg.agent_id] = msg;
    received[msg.agent_id] = true;
  }
  for (std::size_t n = 0; n < policy.size(); ++n) {
    if (!received[n] && policy.active(n)) policy.mark_straggler(n);
  }
  stragglers.insert(stragglers.end(), round.report.begin(), round.report.end());
}

StepDecision fts_step(FtsState& state, FtsStreams& streams) {
  StepDecision d;
  d.t = state.t;
  d.p_t = state.config->schedule(state.t);
  d.beta_t = current_beta(state);

  const double r = streams.branch.uniform();
  std::optional<std::size_t> agent;
  if (!(r <= d.p_t)) {
    agent = state.policy.sample(streams.branch);
    if (!agent) d.branch = Branch::kOwnGpFallback;
  }

  if (agent) {
    if (!state.problem.grid_features) throw UsageError("agent branch needs a random-feature basis");
    const AgentMessage& msg = *state.messages[*agent];
    d.branch = Branch::kAgent;
    d.agent = agent;
    d.x_index = argmax(*state.problem.grid_features * msg.omega);
    if (state.config->federation_mode == FederationMode::kSingleShot) state.policy.mark_used(*agent);
  } else {
    auto [index, branch] = own_branch_query(state, d.beta_t, streams.own_sample);
    d.x_index = index;
    if (d.branch != Branch::kOwnGpFallback) d.branch = branch;
  }
  return d;
}

FtsTrace run_fts(const FtsConfig& config, const FtsProblem& problem, const Objective& objective,
                 std::span<const std::size_t> initial_indices, const MessageProvider& messages) {
  FtsState state(config, problem);
  FtsStreams streams = FtsStreams::from_seed(config.seed);
  FtsTrace trace;

  for (std::size_t idx : initial_indices) state.observe(idx, objective.observe(idx, streams.noise));

  const bool federated = static_cast<bool>(messages) && (config.n_agents > 0 || !config.policy_weights.empty());
  if (federated) state.install_round(messages(1));

  const auto& diag = config.diagnostics;
  const double noise_sd = std::sqrt(config.noise_variance);
  const std::size_t domain_size = problem.domain->size();
  double epsilon = 0.0;
  const bool diagnostics_on = diag.enabled && problem.basis != nullptr && federated;
  if (diagnostics_on) {
    if (diag.epsilon) {
      epsilon = *diag.epsilon;
    } else {
      RngStream pair_rng = RngStream::keyed(config.seed, {static_cast<std::uint64_t>(StreamRole::kDiagnostics)});
      const auto pairs = random_pairs(*problem.domain, 1000, pair_rng);
      epsilon = kernel_approx_error(*problem.basis, problem.basis->hyper(), pairs).sup_error;
    }
  }

  std::optional<double> best_f;
  if (objective.truth) best_f = objective.truth->maxCoeff();
  double cumulative = 0.0;
  double simple = std::numeric_limits<double>::infinity();
  double best_y = -std::numeric_limits<double>::infinity();

  for (std::size_t t = 1; t <= config.horizon; ++t) {
    state.t = t;
    if (federated && t > 1 && config.federation_mode == FederationMode::kPerRound) state.install_round(messages(t));

    // psi_t weighs agents by P_N as it stood when the branch was drawn.
    const std::vector<double> weights_before = state.policy.weights();
    const StepDecision d = fts_step(state, streams);
    TraceRecord rec;
    rec.t = t;
    rec.p_t = d.p_t;
    rec.branch = d.branch;
    rec.agent_id = d.agent ? static_cast<std::int64_t>(*d.agent) : -1;
    rec.x_index = d.x_index;
    rec.x = problem.domain->point(d.x_index);
    rec.beta_t = d.beta_t;
    rec.c_t = c_theoretical(t, d.beta_t, domain_size);
    if (d.branch == Branch::kOwnGpFallback) ++trace.fallbacks;

    if (diagnostics_on) {
      const std::size_t n_agents = state.policy.size();
      std::vector<double> deltas(n_agents, 0.0);
      for (std::size_t n = 0; n < n_agents; ++n) {
        if (!state.messages[n]) continue;
        const std::uint32_t t_n = state.messages[n]->t_n;
        const double gamma = diag.agent_gamma
                                 ? diag.agent_gamma(static_cast<std::uint32_t>(n), t_n)
                                 : info_gain_upper_bound(t_n, config.hyper.signal_variance, config.noise_variance);
        DeltaInputs in;
        in.epsilon = epsilon;
        in.t_n = t_n;
        in.t = t;
        in.n_agents = n_agents;
        in.delta = diag.delta;
        in.B = diag.B;
        in.noise_sd = noise_sd;
        in.num_features = problem.basis->num_features;
        in.d_n = n < diag.d_n.size() ? diag.d_n[n] : diag.B;
        in.c_t = rec.c_t;
        in.beta_prime = beta_prime(diag.B, diag.delta, gamma, noise_sd, n_agents);
        deltas[n] = delta_nt(in);
        trace.diagnostics.push_back({t, static_cast<std::uint32_t>(n), t_n, epsilon, deltas[n]});
      }
      rec.psi_t = psi_t(d.p_t, weights_before, deltas);
    }

    const double y = objective.observe(d.x_index, streams.noise);
    state.observe(d.x_index, y);
    rec.y = y;
    best_y = std::max(best_y, y);
    rec.best_observed = best_y;
    if (best_f) {
      rec.f_x = (*objective.truth)(static_cast<Eigen::Index>(d.x_index));
      rec.regret_inst = *best_f - rec.f_x;
      cumulative += rec.regret_inst;
      simple = std::min(simple, rec.regret_inst);
      rec.regret_cum = cumulative;
      rec.simple_regret = simple;
    }
    trace.records.push_back(std::move(rec));
  }
  trace.stragglers = std::move(state.stragglers);
  trace.observations = state.model.observations();
  return trace;
}

FtsTrace run_standard_ts(const FtsConfig& config, const FtsProblem& problem, const Objective& objective,
                         std::span<const std::size_t> initial_indices) {
  if (config.horizon == 0) throw UsageError("horizon must be >= 1");
  if (!problem.prior) throw CapacityError("standard TS needs a joint-sample prior over the domain");
  FtsStreams streams = FtsStreams::from_seed(config.seed);
  GpModel model(config.hyper, config.noise_variance);
  std::vector<std::size_t> indices;
  const Domain& domain = *problem.domain;
  for (std::size_t idx : initial_indices) {
    model.add_observation(domain.point(idx), objective.observe(idx, streams.noise));
    indices.push_back(idx);
  }

  FtsTrace trace;
  const double noise_sd = std::sqrt(config.noise_variance);
  double best_y = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> queries;
  for (std::size_t t = 1; t <= config.horizon; ++t) {
    const double beta = config.beta.mode == BetaConfig::Mode::kConstant
                            ? config.beta.value
                            : beta_theoretical(config.beta.B, config.beta.delta, model.info_gain(), noise_sd);
    const std::size_t x = argmax(sample_gp_function(model, beta, *problem.prior, indices, streams.own_sample));
    const double y = objective.observe(x, streams.noise);
    model.add_observation(domain.point(x), y);
    indices.push_back(x);
    queries.push_back(x);

    TraceRecord rec;
    rec.t = t;
    rec.p_t = 1.0;
    rec.branch = Branch::kOwnGp;
    rec.x_index = x;
    rec.x = domain.point(x);
    rec.y = y;
    best_y = std::max(best_y, y);
    rec.best_observed = best_y;
    rec.beta_t = beta;
    rec.c_t = c_theoretical(t, beta, domain.size());
    trace.records.push_back(std::move(rec));
  }
  if (objective.truth) {
    const RegretSeries regret = compute_regret(queries, *objective.truth);
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
      auto& rec = trace.records[i];
      rec.f_x = (*objective.truth)(static_cast<Eigen::Index>(rec.x_index));
      rec.regret_inst = objective.truth->maxCoeff() - rec.f_x;
      rec.regret_cum = regret.cumulative[i];
      rec.simple_regret = regret.simple[i];
    }
  }
  trace.observations = model.observations();
  return trace;
}

}  // namespace fbo
