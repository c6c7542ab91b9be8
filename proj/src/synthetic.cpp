#include "fbo/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "fbo/csv.hpp"
#include "fbo/errors.hpp"

namespace fbo {

namespace {

std::uint64_t role(StreamRole r) { return static_cast<std::uint64_t>(r); }

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw UsageError("config key '" + std::string(key) + "': bad value '" + std::string(text) + "'");
  return v;
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  while (true) {
    const auto comma = text.find(',');
    out.push_back(parse_number<T>(key, text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

}  // namespace

// --- objectives ---------------------------------------------------------------------

std::shared_ptr<const Domain> synthetic_grid() {
  static const auto grid = std::make_shared<const Domain>(Domain::uniform_grid_1d(kSyntheticGridSize));
  return grid;
}

std::shared_ptr<const GridPrior> synthetic_prior(double lengthscale) {
  static std::mutex mu;
  static std::map<double, std::shared_ptr<const GridPrior>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[lengthscale];
  if (!slot) slot = std::make_shared<const GridPrior>(*synthetic_grid(), KernelHyper{lengthscale, 1.0});
  return slot;
}

SyntheticObjective gen_objective(const GridPrior& prior, std::uint64_t seed) {
  RngStream rng = RngStream::keyed(seed, {role(StreamRole::kObjective)});
  SyntheticObjective obj;
  obj.domain = std::make_shared<const Domain>(prior.domain());
  obj.raw = prior.sample_prior(rng);
  const double lo = obj.raw.minCoeff();
  const double hi = obj.raw.maxCoeff();
  if (!(hi > lo)) throw NumericalError("objective draw is constant");
  obj.values = (obj.raw.array() - lo) / (hi - lo);
  obj.argmax = argmax(obj.values);
  return obj;
}

SyntheticObjective gen_objective(double lengthscale, std::uint64_t seed) {
  if (!(lengthscale > 0.0)) throw UsageError("lengthscale must be positive");
  SyntheticObjective obj = gen_objective(*synthetic_prior(lengthscale), seed);
  obj.domain = synthetic_grid();
  return obj;
}

AgentObjective gen_agent(const SyntheticObjective& base, double d_n, std::size_t t_n, double noise_var,
                         std::uint64_t seed) {
  if (!(d_n >= 0.0)) throw UsageError("d_n must be nonnegative");
  if (!(noise_var >= 0.0)) throw UsageError("noise variance must be nonnegative");
  RngStream rng(seed);
  AgentObjective a;
  a.d_n = d_n;
  const auto n = base.values.size();
  a.signs.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) a.signs(i) = rng.coin() ? 1.0 : -1.0;
  a.values = base.values + d_n * a.signs;
  const double sd = std::sqrt(noise_var);
  a.indices.reserve(t_n);
  a.observations.reserve(t_n);
  for (std::size_t k = 0; k < t_n; ++k) {
    const std::size_t idx = rng.index(static_cast<std::size_t>(n));
    a.indices.push_back(idx);
    a.observations.push_back({base.domain->point(idx), a.values(static_cast<Eigen::Index>(idx)) + sd * rng.normal()});
  }
  return a;
}

// --- config ---------------------------------------------------------------------------

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "n_agents") n_agents = parse_number<std::size_t>(key, value);
  else if (key == "d_n") d_n = parse_list<double>(key, value);
  else if (key == "t_n") t_n = parse_list<std::size_t>(key, value);
  else if (key == "m_features") m_features = parse_number<std::size_t>(key, value);
  else if (key == "lengthscale_gen") lengthscale_gen = parse_number<double>(key, value);
  else if (key == "lengthscale_rff") lengthscale_rff = parse_number<double>(key, value);
  else if (key == "noise_var") noise_var = parse_number<double>(key, value);
  else if (key == "rff_noise_var") rff_noise_var = parse_number<double>(key, value);
  else if (key == "schedule") {
    try {
      schedule = Schedule::parse(value);
    } catch (const UsageError& e) {
      throw UsageError("config key 'schedule': " + std::string(e.what()));
    }
  } else if (key == "horizon") horizon = parse_number<std::size_t>(key, value);
  else if (key == "n_functions") n_functions = parse_number<std::size_t>(key, value);
  else if (key == "n_inits") n_inits = parse_number<std::size_t>(key, value);
  else if (key == "repeat") repeat = parse_number<std::size_t>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "federation_mode") {
    if (value == "single_shot") federation_mode = FederationMode::kSingleShot;
    else if (value == "per_round") federation_mode = FederationMode::kPerRound;
    else throw UsageError("config key 'federation_mode': expected single_shot or per_round, got '" +
                          std::string(value) + "'");
  } else {
    throw UsageError("unknown config key '" + std::string(key) + "'");
  }
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = line;
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    c.set(v.substr(0, eq), v.substr(eq + 1));
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config '" + path + "'");
  return parse(in);
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  out << "n_agents = " << n_agents << '\n'
      << "d_n = " << join(d_n) << '\n'
      << "t_n = " << join(t_n) << '\n'
      << "m_features = " << m_features << '\n'
      << "lengthscale_gen = " << format_double(lengthscale_gen) << '\n'
      << "lengthscale_rff = " << format_double(lengthscale_rff) << '\n'
      << "noise_var = " << format_double(noise_var) << '\n'
      << "rff_noise_var = " << format_double(rff_noise_var) << '\n'
      << "schedule = " << schedule.name() << '\n'
      << "horizon = " << horizon << '\n'
      << "n_functions = " << n_functions << '\n'
      << "n_inits = " << n_inits << '\n'
      << "repeat = " << repeat << '\n'
      << "seed = " << seed << '\n'
      << "federation_mode = " << (federation_mode == FederationMode::kPerRound ? "per_round" : "single_shot")
      << '\n';
  return out.str();
}

void ExperimentConfig::validate() const {
  if (replications() == 0) throw UsageError("replication count is 0 (n_functions * n_inits * repeat)");
  if (horizon == 0) throw UsageError("horizon must be >= 1");
  if (m_features == 0) throw UsageError("m_features must be >= 1");
  if (!(lengthscale_gen > 0.0) || !(lengthscale_rff > 0.0)) throw UsageError("lengthscales must be positive");
  if (!(noise_var > 0.0) || !(rff_noise_var > 0.0)) throw UsageError("noise variances must be positive");
  if (d_n.empty() || t_n.empty()) throw UsageError("d_n and t_n need at least one value");
  if (d_n.size() != 1 && d_n.size() != n_agents) throw UsageError("d_n needs 1 or n_agents values");
  if (t_n.size() != 1 && t_n.size() != n_agents) throw UsageError("t_n needs 1 or n_agents values");
  for (double d : d_n)
    if (!(d >= 0.0)) throw UsageError("d_n must be nonnegative");
}

double ExperimentConfig::agent_d(std::size_t n) const { return d_n.size() == 1 ? d_n[0] : d_n.at(n); }
std::size_t ExperimentConfig::agent_t(std::size_t n) const { return t_n.size() == 1 ? t_n[0] : t_n.at(n); }

// --- replications --------------------------------------------------------------------

namespace {

ReplicationId make_id(const ExperimentConfig& c, std::size_t index) {
  ReplicationId id;
  id.index = index;
  id.repeat = index % c.repeat;
  id.init = (index / c.repeat) % c.n_inits;
  id.function = index / (c.repeat * c.n_inits);
  return id;
}

/// Contributing agents of one replication, including their own optimization state in per-round mode.
struct AgentPool {
  std::vector<AgentObjective> objectives;
  std::vector<AgentState> states;
  std::vector<RngStream> message_rngs;
  std::vector<RngStream> step_rngs;
};

AgentPool make_agents(const ExperimentConfig& c, const SyntheticObjective& f,
                      const std::shared_ptr<const RffBasis>& basis, std::uint64_t rep_seed) {
  AgentPool pool;
  for (std::size_t n = 0; n < c.n_agents; ++n) {
    const std::uint64_t agent_seed = derive_seed(rep_seed, {role(StreamRole::kAgents), n});
    pool.objectives.push_back(gen_agent(f, c.agent_d(n), c.agent_t(n), c.noise_var, agent_seed));
    AgentState state(static_cast<std::uint32_t>(n), basis, c.rff_noise_var);
    state.add_observations(pool.objectives.back().observations);
    pool.states.push_back(std::move(state));
    pool.message_rngs.push_back(RngStream::keyed(rep_seed, {role(StreamRole::kMessages), n}));
    pool.step_rngs.push_back(RngStream::keyed(rep_seed, {role(StreamRole::kAgents), n, 1}));
  }
  return pool;
}

CollectedRound collect_round(AgentPool& pool, std::size_t round) {
  CollectedRound out;
  for (std::size_t n = 0; n < pool.states.size(); ++n) {
    out.messages.push_back(make_message(pool.states[n], pool.message_rngs[n]));
    out.report.push_back({round, static_cast<std::uint32_t>(n), AgentStatus::kOk, ""});
  }
  return out;
}

/// One Thompson-sampling step of an agent on its own objective, using its RFF surrogate.
void advance_agent(AgentPool& pool, std::size_t n, const Matrix& grid_features, const Domain& domain,
                   double noise_sd) {
  auto& state = pool.states[n];
  auto& rng = pool.step_rngs[n];
  const Vector omega = sample_weights(state.posterior(), rng);
  const std::size_t x = argmax(grid_features * omega);
  const double y = pool.objectives[n].values(static_cast<Eigen::Index>(x)) + noise_sd * rng.normal();
  state.add_observation(domain.point(x), y);
}

}  // namespace

ReplicationResult run_replication(const ExperimentConfig& c, const ReplicationId& id,
                                  const std::shared_ptr<const GridPrior>& prior, bool run_ts, bool diagnostics) {
  ReplicationResult out;
  out.id = id;
  const std::uint64_t function_seed = derive_seed(c.seed, {role(StreamRole::kObjective), id.function});
  const std::uint64_t rep_seed = derive_seed(c.seed, {id.function, id.init, id.repeat});

  SyntheticObjective f = gen_objective(*prior, function_seed);
  const auto domain = synthetic_grid();
  f.domain = domain;

  auto basis = std::make_shared<const RffBasis>(build_basis(c.m_features, 1, c.lengthscale_rff, 1.0,
                                                            derive_seed(rep_seed, {role(StreamRole::kBasis)})));
  const FtsProblem problem = FtsProblem::make(domain, basis, prior->hyper(), prior);

  RngStream init_rng = RngStream::keyed(rep_seed, {role(StreamRole::kInit)});
  out.initial_index = init_rng.index(domain->size());
  const std::size_t init[] = {out.initial_index};

  const double noise_sd = std::sqrt(c.noise_var);
  Objective objective;
  objective.truth = f.values;
  objective.observe = [&f, noise_sd](std::size_t idx, RngStream& noise) {
    return f.values(static_cast<Eigen::Index>(idx)) + noise_sd * noise.normal();
  };

  FtsConfig fc;
  fc.horizon = c.horizon;
  fc.schedule = c.schedule;
  fc.n_agents = c.n_agents;
  fc.federation_mode = c.federation_mode;
  fc.hyper = prior->hyper();
  fc.noise_variance = c.noise_var;
  fc.seed = derive_seed(rep_seed, {role(StreamRole::kOwnSample)});
  fc.diagnostics.enabled = diagnostics;
  fc.diagnostics.d_n.resize(c.n_agents);
  for (std::size_t n = 0; n < c.n_agents; ++n) fc.diagnostics.d_n[n] = c.agent_d(n);

  AgentPool pool = make_agents(c, f, basis, rep_seed);
  const bool per_round = c.federation_mode == FederationMode::kPerRound;
  MessageProvider provider = [&](std::size_t round) {
    if (per_round && round > 1) {
      for (std::size_t n = 0; n < pool.states.size(); ++n)
        advance_agent(pool, n, *problem.grid_features, *domain, noise_sd);
    }
    std::vector<std::uint32_t> counts;
    for (const auto& s : pool.states) counts.push_back(static_cast<std::uint32_t>(s.observations().size()));
    out.agent_t_n.push_back(std::move(counts));
    return collect_round(pool, round);
  };

  out.fts = run_fts(fc, problem, objective, init, provider);
  if (run_ts) out.ts = run_standard_ts(fc, problem, objective, init);
  return out;
}

namespace {

void aggregate(const std::vector<ReplicationResult>& reps, const std::string& method, const std::string& schedule,
               std::size_t horizon, std::vector<AggregateRow>& rows) {
  const bool is_ts = method == "ts";
  const std::size_t n = reps.size();
  for (std::size_t t = 1; t <= horizon; ++t) {
    double sum = 0.0;
    for (const auto& r : reps) sum += (is_ts ? r.ts : r.fts).records[t - 1].simple_regret;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : reps) {
      const double d = (is_ts ? r.ts : r.fts).records[t - 1].simple_regret - mean;
      ss += d * d;
    }
    const double se = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
    rows.push_back({t, method, schedule, mean, se, n});
  }
}

ExperimentResult run_all(const ExperimentConfig& c, const ExperimentOptions& options) {
  c.validate();
  const std::size_t total = c.replications();
  std::vector<std::size_t> order = options.order;
  if (order.empty()) {
    order.resize(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
  }
  {
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != i || sorted.size() != total) throw UsageError("execution order must permute the replications");
  }

  const auto prior = synthetic_prior(c.lengthscale_gen);
  std::vector<ReplicationResult> reps(total);
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= total) return;
      const std::size_t i = order[k];
      try {
        reps[i] = run_replication(c, make_id(c, i), prior, options.run_ts, options.diagnostics && i == 0);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!error) error = std::current_exception();
        next.store(total);
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, total));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  ExperimentResult result;
  const std::string schedule = c.schedule.name();
  aggregate(reps, "fts", schedule, c.horizon, result.rows);
  if (options.run_ts) aggregate(reps, "ts", "constant_one", c.horizon, result.rows);
  result.diagnostics = reps.front().fts.diagnostics;
  if (!options.keep_traces) {
    for (auto& r : reps) {
      r.fts = FtsTrace{};
      r.ts = FtsTrace{};
    }
  }
  result.replications = std::move(reps);
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentOptions& options) {
  ExperimentConfig c = config;
  c.federation_mode = FederationMode::kSingleShot;
  return run_all(c, options);
}

ExperimentResult run_increasing_tn(const ExperimentConfig& config, const ExperimentOptions& options) {
  ExperimentConfig c = config;
  c.federation_mode = FederationMode::kPerRound;
  return run_all(c, options);
}

MeanSe simple_regret_at(const ExperimentResult& result, const std::string& method, std::size_t t) {
  for (const auto& row : result.rows)
    if (row.method == method && row.t == t) return {row.mean_simple_regret, row.stderr_, row.n_reps};
  throw UsageError("no aggregate row for method '" + method + "' at t=" + std::to_string(t));
}

double pooled_se(double se_a, double se_b) { return std::sqrt(se_a * se_a + se_b * se_b); }

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "t,method,schedule,mean_simple_regret,stderr,n_reps\n";
  for (const auto& r : rows)
    out << r.t << ',' << r.method << ',' << r.schedule << ',' << format_double(r.mean_simple_regret) << ','
        << format_double(r.stderr_) << ',' << r.n_reps << '\n';
}

std::vector<AggregateRow> read_aggregate_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "t,method,schedule,mean_simple_regret,stderr,n_reps")
    throw UsageError("aggregate CSV: bad header");
  std::vector<AggregateRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw UsageError("aggregate CSV: expected 6 fields");
    AggregateRow r;
    r.t = parse_number<std::size_t>("t", f[0]);
    r.method = f[1];
    r.schedule = f[2];
    r.mean_simple_regret = parse_double(f[3]);
    r.stderr_ = parse_double(f[4]);
    r.n_reps = parse_number<std::size_t>("n_reps", f[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fbo
