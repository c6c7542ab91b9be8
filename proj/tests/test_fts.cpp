#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "fbo/errors.hpp"
#include "fbo/fts.hpp"

using namespace fbo;

namespace {

constexpr double kLengthscale = 0.1;

struct Fixture {
  std::shared_ptr<const Domain> domain;
  std::shared_ptr<const RffBasis> basis;
  FtsProblem problem;
  Vector truth;
  std::vector<AgentMessage> messages;

  explicit Fixture(std::size_t n_agents, std::size_t grid = 120, std::uint64_t seed = 5) {
    domain = std::make_shared<const Domain>(Domain::uniform_grid_1d(grid));
    basis = std::make_shared<const RffBasis>(build_basis(60, 1, kLengthscale, 1.0, seed));
    problem = FtsProblem::make(domain, basis, {kLengthscale, 1.0});
    truth = Vector(static_cast<Eigen::Index>(grid));
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
      const double x = domain->point(static_cast<std::size_t>(i))(0);
      truth(i) = std::sin(9.0 * x) * std::exp(-x) + 0.3 * std::cos(23.0 * x);
    }
    RngStream rng(seed + 100);
    for (std::uint32_t n = 0; n < n_agents; ++n) {
      AgentState agent(n, basis, 0.01);
      const std::size_t t_n = 5 + 7 * n;
      for (std::size_t k = 0; k < t_n; ++k) {
        const std::size_t i = rng.index(grid);
        agent.add_observation(domain->point(i), truth(static_cast<Eigen::Index>(i)) + 0.1 * rng.normal());
      }
      messages.push_back(make_message(agent, rng));
    }
  }

  Objective objective(double noise_sd = 0.1) const {
    Objective o;
    const Vector f = truth;
    o.observe = [f, noise_sd](std::size_t i, RngStream& rng) {
      return f(static_cast<Eigen::Index>(i)) + noise_sd * rng.normal();
    };
    o.truth = truth;
    return o;
  }

  MessageProvider provider(std::set<std::uint32_t> silent = {}, std::size_t* calls = nullptr) const {
    return [this, silent, calls](std::size_t round) {
      if (calls) ++*calls;
      CollectedRound r;
      for (const auto& m : messages) {
        const bool quiet = silent.count(m.agent_id) > 0;
        if (!quiet) r.messages.push_back(m);
        r.report.push_back({round, m.agent_id, quiet ? AgentStatus::kTimeout : AgentStatus::kOk, {}});
      }
      return r;
    };
  }
};

FtsConfig base_config(std::size_t n_agents, std::size_t horizon) {
  FtsConfig c;
  c.horizon = horizon;
  c.n_agents = n_agents;
  c.hyper = {kLengthscale, 1.0};
  c.noise_variance = 0.01;
  c.seed = 77;
  c.diagnostics.epsilon = 0.05;
  return c;
}

std::size_t brute_argmax(const RffBasis& basis, const Domain& domain, const Vector& omega) {
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < domain.size(); ++i) {
    const double v = features(basis, domain.point(i)).dot(omega);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

bool same_trace(const FtsTrace& a, const FtsTrace& b) {
  if (a.records.size() != b.records.size() || a.diagnostics.size() != b.diagnostics.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto &x = a.records[i], &y = b.records[i];
    if (x.x_index != y.x_index || x.branch != y.branch || x.agent_id != y.agent_id || x.y != y.y ||
        x.psi_t != y.psi_t || x.p_t != y.p_t)
      return false;
  }
  for (std::size_t i = 0; i < a.diagnostics.size(); ++i) {
    if (a.diagnostics[i].delta_nt != b.diagnostics[i].delta_nt || a.diagnostics[i].agent_id != b.diagnostics[i].agent_id)
      return false;
  }
  return true;
}

}  // namespace

// --- schedule ----------------------------------------------------------------------

TEST(Schedule, Examples) {
  EXPECT_DOUBLE_EQ(Schedule::one_minus_inv_sqrt()(4), 0.5);
  EXPECT_NEAR(Schedule::one_minus_inv_sqrt()(1), 0.2928932188134524, 1e-15);
  EXPECT_EQ(Schedule::one_minus_inv_sqrt()(1), Schedule::one_minus_inv_sqrt()(2));
  EXPECT_DOUBLE_EQ(Schedule::one_minus_inv_square()(2), 0.75);
  EXPECT_EQ(Schedule::one_minus_inv_square()(1), 0.75);
  EXPECT_EQ(Schedule::constant_one()(1000), 1.0);
  EXPECT_THROW(Schedule::constant_one()(0), UsageError);
}

TEST(Schedule, RangeMonotoneAndLimit) {
  for (const auto& s : {Schedule::constant_one(), Schedule::one_minus_inv_sqrt(), Schedule::one_minus_inv_square(),
                        Schedule::table({0.2, 0.2, 0.7})}) {
    double prev = 0.0;
    for (std::size_t t = 1; t <= 5000; ++t) {
      const double p = s(t);
      EXPECT_GT(p, 0.0);
      EXPECT_LE(p, 1.0);
      EXPECT_GE(p, prev);
      prev = p;
    }
  }
  EXPECT_GT(Schedule::one_minus_inv_sqrt()(1000001), 0.999);
  EXPECT_GT(Schedule::one_minus_inv_square()(1001), 0.999999);
}

TEST(Schedule, TableRepeatsLastValue) {
  const Schedule s = Schedule::table({0.1, 0.4});
  EXPECT_EQ(s(1), 0.1);
  EXPECT_EQ(s(2), 0.4);
  EXPECT_EQ(s(50), 0.4);
  EXPECT_THROW(Schedule::table({}), UsageError);
  EXPECT_THROW(Schedule::table({0.0}), UsageError);
  EXPECT_THROW(Schedule::table({0.5, 1.2}), UsageError);
  EXPECT_THROW(Schedule::table({0.6, 0.5}), UsageError);
}

TEST(Schedule, ParseAndName) {
  for (const char* name : {"constant_one", "one_minus_inv_sqrt", "one_minus_inv_square"})
    EXPECT_EQ(Schedule::parse(name).name(), name);
  const Schedule t = Schedule::parse("table:0.25,0.5");
  EXPECT_EQ(t.name(), "table:0.25;0.5");
  EXPECT_EQ(Schedule::parse(t.name())(2), 0.5);
  EXPECT_THROW(Schedule::parse("linear"), UsageError);
  EXPECT_THROW(Schedule::parse("table:0.2,x"), UsageError);
}

// --- bound quantities -----------------------------------------------------------

TEST(Bounds, BetaAndC) {
  EXPECT_NEAR(beta_theoretical(1.0, 0.5, 0.0, 0.1), 1.248170970972829, 1e-12);
  EXPECT_NEAR(c_theoretical(1, 1.0, 1000), 4.716922188849838, 1e-12);
  EXPECT_THROW(beta_theoretical(1.0, 0.0, 0.0, 0.1), UsageError);
  EXPECT_THROW(beta_theoretical(1.0, 1.0, 0.0, 0.1), UsageError);
  EXPECT_THROW(beta_prime(1.0, 1.5, 0.0, 0.1, 3), UsageError);
}

TEST(Bounds, BetaMonotoneAndCDominates) {
  RngStream rng(1);
  for (int i = 0; i < 500; ++i) {
    const double B = rng.uniform(0.1, 5.0), delta = rng.uniform(0.01, 0.99), sd = rng.uniform(0.01, 1.0);
    const double g = rng.uniform(0.0, 100.0);
    const double b = beta_theoretical(B, delta, g, sd);
    EXPECT_GE(beta_theoretical(B, delta, g + rng.uniform(0.0, 10.0), sd), b);
    const std::size_t t = 1 + rng.index(1000);
    const double c = c_theoretical(t, b, 1 + rng.index(5000));
    EXPECT_TRUE(std::isfinite(c));
    EXPECT_GE(c, b);
  }
}

// Each factor recomputed here from literal constants.
TEST(Bounds, DeltaWorkedChain) {
  const double beta_prime_1 = 1.0 + 0.1 * std::sqrt(2.0 * (1.0 + std::log(16.0)));
  EXPECT_NEAR(beta_prime_1, 1.2746848638800392, 1e-13);
  EXPECT_NEAR(beta_prime(1.0, 0.5, 0.0, 0.1, 1), beta_prime_1, 1e-14);
  const double middle = std::sqrt(2.0 * std::log(2.0 * std::numbers::pi * std::numbers::pi / 1.5) + 1.0);
  EXPECT_NEAR(middle, 2.4807828781054506, 1e-13);

  DeltaInputs in;
  in.epsilon = 0.0;
  in.t_n = 0;
  in.t = 1;
  in.n_agents = 1;
  in.delta = 0.5;
  in.B = 1.0;
  in.noise_sd = 0.1;
  in.num_features = 1;
  in.d_n = 0.0;
  in.c_t = 4.716922188849838;
  in.beta_prime = beta_prime_1;
  EXPECT_NEAR(delta_nt(in), 8.472389930835329, 1e-12);
}

TEST(Bounds, DeltaWithApproximationTerm) {
  DeltaInputs in;
  in.epsilon = 0.01;
  in.t_n = 3;
  in.t = 2;
  in.n_agents = 5;
  in.delta = 0.1;
  in.B = 1.0;
  in.noise_sd = 0.1;
  in.num_features = 100;
  in.d_n = 0.2;
  in.c_t = 6.0;
  in.beta_prime = 1.7;
  // 0.01 * 16 / 0.01 * (1 + sqrt(2 ln(4 pi^2 * 20 / 0.3))) + 1.7 + sqrt(2 ln(2 pi^2 * 20 / 0.3) + 100) + 0.2 + 6
  EXPECT_NEAR(delta_nt(in), 98.09402250849132, 1e-10);
}

TEST(Bounds, DeltaStrictlyIncreasingInEachInput) {
  RngStream rng(2);
  for (int i = 0; i < 300; ++i) {
    DeltaInputs in;
    in.epsilon = rng.uniform(1e-4, 0.5);
    in.t_n = rng.index(200);
    in.t = 1 + rng.index(100);
    in.n_agents = 1 + rng.index(50);
    in.delta = rng.uniform(0.01, 0.9);
    in.B = rng.uniform(0.5, 3.0);
    in.noise_sd = rng.uniform(0.05, 1.0);
    in.num_features = 1 + rng.index(500);
    in.d_n = rng.uniform(0.0, 1.0);
    in.c_t = rng.uniform(1.0, 10.0);
    in.beta_prime = rng.uniform(1.0, 3.0);
    const double base = delta_nt(in);
    EXPECT_TRUE(std::isfinite(base));
    auto bumped = [&](auto mutate) {
      DeltaInputs c = in;
      mutate(c);
      return delta_nt(c);
    };
    EXPECT_GT(bumped([](DeltaInputs& c) { c.epsilon *= 1.5; }), base);
    EXPECT_GT(bumped([](DeltaInputs& c) { c.t_n += 1; }), base);
    EXPECT_GT(bumped([](DeltaInputs& c) { c.d_n += 0.1; }), base);
    EXPECT_GT(bumped([](DeltaInputs& c) { c.num_features += 1; }), base);
    EXPECT_GT(bumped([](DeltaInputs& c) { c.c_t += 0.1; }), base);
  }
  DeltaInputs a;
  a.epsilon = 0.01;
  a.t_n = 50;
  DeltaInputs b = a;
  b.t_n = 100;
  EXPECT_GT(delta_nt(b), delta_nt(a));
}

TEST(Bounds, Psi) {
  const std::vector<double> w{0.5, 0.5}, d{2.0, 4.0};
  EXPECT_EQ(psi_t(1.0, w, d), 0.0);
  EXPECT_DOUBLE_EQ(psi_t(0.75, w, d), 1.5);
  RngStream rng(3);
  for (int i = 0; i < 200; ++i) {
    const double p = rng.uniform(0.01, 0.999);
    std::vector<double> ww(4), dd(4);
    for (int k = 0; k < 4; ++k) {
      ww[k] = 0.25;
      dd[k] = rng.uniform(0.1, 10.0);
    }
    EXPECT_GT(psi_t(p, ww, dd), 0.0);
    EXPECT_EQ(psi_t(1.0, ww, dd), 0.0);
  }
  EXPECT_THROW(psi_t(0.5, w, std::vector<double>{1.0}), UsageError);
}

TEST(Bounds, InfoGainUpperBound) {
  EXPECT_DOUBLE_EQ(info_gain_upper_bound(10, 1.0, 0.01), 5.0 * std::log(101.0));
  EXPECT_EQ(info_gain_upper_bound(0, 1.0, 0.01), 0.0);
}

TEST(ValidateSchedule, Examples) {
  const std::vector<double> increasing{1.0, 2.0, 3.0};
  EXPECT_TRUE(validate_schedule(Schedule::constant_one(), increasing).passed);
  const ScheduleCheck half = validate_schedule(Schedule::table({0.5}), increasing);
  EXPECT_FALSE(half.passed);
  EXPECT_EQ(half.first_violation, 2u);
  const std::vector<double> flat(10000, 3.0);
  EXPECT_TRUE(validate_schedule(Schedule::one_minus_inv_sqrt(), flat).passed);
  EXPECT_THROW(validate_schedule(Schedule::constant_one(), std::vector<double>{1.0}), UsageError);
}

TEST(ValidateSchedule, MatchesDirectScan) {
  RngStream rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> c(50);
    for (auto& v : c) v = rng.uniform(1.0, 2.0);
    const Schedule s = Schedule::one_minus_inv_sqrt();
    std::optional<std::size_t> expect;
    for (std::size_t t = 2; t <= 50 && !expect; ++t)
      if ((1.0 - s(t)) * c[t - 1] > (1.0 - s(1)) * c[0]) expect = t;
    EXPECT_EQ(validate_schedule(s, c).first_violation, expect);
  }
}

// --- regret -------------------------------------------------------------------------

TEST(Regret, Examples) {
  Vector f(3);
  f << 1.0, 0.7, 0.9;
  const std::vector<std::size_t> q{1, 2};
  const RegretSeries r = compute_regret(q, f);
  EXPECT_NEAR(r.cumulative[0], 0.3, 1e-15);
  EXPECT_NEAR(r.cumulative[1], 0.4, 1e-15);
  EXPECT_NEAR(r.simple[0], 0.3, 1e-15);
  EXPECT_NEAR(r.simple[1], 0.1, 1e-15);
  const std::vector<std::size_t> best{0, 0, 0};
  const RegretSeries z = compute_regret(best, f);
  EXPECT_EQ(z.cumulative.back(), 0.0);
  EXPECT_EQ(z.simple.back(), 0.0);
  EXPECT_THROW(compute_regret(q, Vector()), UsageError);
}

TEST(Regret, TraceAlgebraOnRandomTraces) {
  RngStream rng(5);
  for (int i = 0; i < 300; ++i) {
    Vector f(40);
    for (auto& v : f) v = rng.normal();
    std::vector<std::size_t> q(1 + rng.index(60));
    for (auto& x : q) x = rng.index(40);
    const RegretSeries r = compute_regret(q, f);
    for (std::size_t t = 1; t < q.size(); ++t) {
      EXPECT_GE(r.cumulative[t], r.cumulative[t - 1]);
      EXPECT_LE(r.simple[t], r.simple[t - 1]);
    }
    EXPECT_LE(r.simple.back(), r.cumulative.back() / static_cast<double>(q.size()) + 1e-12);
  }
}

// --- the loop -------------------------------------------------------------------------

TEST(FtsLoop, ConstantOneMatchesStandardTs) {
  const Fixture fx(6);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    FtsConfig c = base_config(6, 25);
    c.seed = seed;
    c.schedule = Schedule::constant_one();
    const std::vector<std::size_t> init{3, 50};
    const FtsTrace fts = run_fts(c, fx.problem, fx.objective(), init, fx.provider());
    const FtsTrace ts = run_standard_ts(c, fx.problem, fx.objective(), init);
    ASSERT_EQ(fts.records.size(), ts.records.size());
    for (std::size_t i = 0; i < ts.records.size(); ++i) {
      EXPECT_EQ(fts.records[i].x_index, ts.records[i].x_index);
      EXPECT_EQ(fts.records[i].y, ts.records[i].y);
      EXPECT_EQ(fts.records[i].branch, Branch::kOwnGp);
      EXPECT_EQ(fts.records[i].simple_regret, ts.records[i].simple_regret);
      EXPECT_EQ(fts.records[i].psi_t, 0.0);
    }
  }
}

TEST(FtsLoop, BranchFrequencyMatchesP) {
  const Fixture fx(3);
  FtsConfig c = base_config(3, 1);
  c.schedule = Schedule::table({0.6});
  c.federation_mode = FederationMode::kPerRound;  // agents stay available
  FtsState state(c, fx.problem);
  state.install_round(fx.provider()(1));
  FtsStreams streams = FtsStreams::from_seed(9);
  const int steps = 2000;
  int own = 0;
  for (int i = 0; i < steps; ++i) {
    state.t = 1 + static_cast<std::size_t>(i);
    if (fts_step(state, streams).branch == Branch::kOwnGp) ++own;
  }
  const double se = std::sqrt(0.6 * 0.4 / steps);
  EXPECT_LT(std::abs(own / static_cast<double>(steps) - 0.6), 4.0 * se) << own;
}

TEST(FtsLoop, AgentBranchPicksAnalyticMaximizer) {
  // A cos/sin pair at one frequency keeps the feature norm constant, so the first
  // feature cos(2 pi (x - 0.37)) peaks at grid point 37 of a 101-point grid after normalization.
  Matrix freq(2, 1);
  freq << 2.0 * std::numbers::pi, 2.0 * std::numbers::pi;
  Vector phases(2);
  phases << 2.0 * std::numbers::pi * 0.63, 2.0 * std::numbers::pi * 0.38;
  auto basis = std::make_shared<const RffBasis>(basis_from_arrays(freq, phases, 0.2, 1.0));
  auto domain = std::make_shared<const Domain>(Domain::uniform_grid_1d(101));
  const FtsProblem problem = FtsProblem::make(domain, basis, {0.2, 1.0});
  FtsConfig c = base_config(1, 1);
  c.hyper = {0.2, 1.0};
  c.schedule = Schedule::table({1e-12});
  FtsState state(c, problem);
  AgentMessage m;
  m.agent_id = 0;
  m.omega = Vector::Unit(2, 0);
  m.basis_fingerprint = basis->fingerprint;
  state.install_round({{m}, {}});
  FtsStreams streams = FtsStreams::from_seed(1);
  const StepDecision d = fts_step(state, streams);
  EXPECT_EQ(d.branch, Branch::kAgent);
  EXPECT_EQ(d.x_index, 37u);
  EXPECT_EQ(brute_argmax(*basis, *domain, m.omega), 37u);
}

TEST(FtsLoop, AgentQueriesAreBruteForceArgmaxAndNeverRepeat) {
  const Fixture fx(12);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FtsConfig c = base_config(12, 30);
    c.seed = seed;
    c.schedule = Schedule::table({0.3, 0.3, 0.3, 0.5});
    const FtsTrace t = run_fts(c, fx.problem, fx.objective(), std::vector<std::size_t>{0}, fx.provider());
    std::set<std::int64_t> used;
    for (const auto& r : t.records) {
      if (r.branch != Branch::kAgent) {
        EXPECT_EQ(r.agent_id, -1);
        continue;
      }
      EXPECT_TRUE(used.insert(r.agent_id).second) << "agent " << r.agent_id << " used twice";
      EXPECT_EQ(r.x_index, brute_argmax(*fx.basis, *fx.domain, fx.messages[static_cast<std::size_t>(r.agent_id)].omega));
    }
  }
}

TEST(FtsLoop, ExhaustionFallsBackToOwnGp) {
  const Fixture fx(2);
  FtsConfig c = base_config(2, 20);
  c.schedule = Schedule::table({0.05});
  const FtsTrace t = run_fts(c, fx.problem, fx.objective(), {}, fx.provider());
  std::size_t agent_steps = 0, fallback = 0;
  for (const auto& r : t.records) {
    agent_steps += r.branch == Branch::kAgent;
    fallback += r.branch == Branch::kOwnGpFallback;
  }
  EXPECT_EQ(agent_steps, 2u);
  EXPECT_GT(fallback, 0u);
  EXPECT_EQ(fallback, t.fallbacks);
}

TEST(FtsLoop, StragglerNeverUsed) {
  const Fixture fx(4);
  FtsConfig c = base_config(4, 30);
  c.schedule = Schedule::table({0.2});
  c.federation_mode = FederationMode::kPerRound;
  const FtsTrace t = run_fts(c, fx.problem, fx.objective(), {}, fx.provider({2}));
  std::size_t agent_steps = 0;
  for (const auto& r : t.records) {
    EXPECT_NE(r.agent_id, 2);
    agent_steps += r.branch == Branch::kAgent;
  }
  EXPECT_GT(agent_steps, 5u);
  ASSERT_EQ(t.stragglers.size(), 4u * 30u);
  EXPECT_EQ(t.stragglers[2].status, AgentStatus::kTimeout);
  EXPECT_EQ(t.stragglers[2].agent_id, 2u);
}

TEST(FtsLoop, PerRoundRearmsPolicy) {
  const Fixture fx(2);
  FtsConfig c = base_config(2, 20);
  c.schedule = Schedule::table({0.1});
  c.federation_mode = FederationMode::kPerRound;
  std::size_t calls = 0;
  const FtsTrace t = run_fts(c, fx.problem, fx.objective(), {}, fx.provider({}, &calls));
  EXPECT_EQ(calls, 20u);
  std::size_t agent_steps = 0;
  for (const auto& r : t.records) agent_steps += r.branch == Branch::kAgent;
  EXPECT_GT(agent_steps, 2u);  // more than N agent steps is only possible with re-arming
  EXPECT_EQ(t.fallbacks, 0u);
}

TEST(FtsLoop, SingleShotCollectsOnce) {
  const Fixture fx(3);
  std::size_t calls = 0;
  run_fts(base_config(3, 10), fx.problem, fx.objective(), {}, fx.provider({}, &calls));
  EXPECT_EQ(calls, 1u);
}

TEST(FtsLoop, SingleQueryIsArgmaxOfPriorDraw) {
  const Fixture fx(0);
  FtsConfig c = base_config(0, 1);
  const FtsTrace t = run_fts(c, fx.problem, fx.objective(), {}, nullptr);
  FtsStreams streams = FtsStreams::from_seed(c.seed);
  const GpModel empty(c.hyper, c.noise_variance);
  const Vector draw = sample_gp_function(empty, 1.0, *fx.problem.prior, std::vector<std::size_t>{}, streams.own_sample);
  ASSERT_EQ(t.records.size(), 1u);
  EXPECT_EQ(t.records[0].x_index, argmax(draw));
}

TEST(FtsLoop, DeterministicIncludingDiagnostics) {
  const Fixture fx(5);
  FtsConfig c = base_config(5, 20);
  c.diagnostics.epsilon.reset();  // measured from pairs
  const FtsTrace a = run_fts(c, fx.problem, fx.objective(), std::vector<std::size_t>{7}, fx.provider());
  const FtsTrace b = run_fts(c, fx.problem, fx.objective(), std::vector<std::size_t>{7}, fx.provider());
  EXPECT_TRUE(same_trace(a, b));
  EXPECT_FALSE(a.diagnostics.empty());
  c.seed += 1;
  const FtsTrace other = run_fts(c, fx.problem, fx.objective(), std::vector<std::size_t>{7}, fx.provider());
  EXPECT_FALSE(same_trace(a, other));
}

TEST(FtsLoop, TraceInvariantsAndModelSize) {
  const Fixture fx(5);
  FtsConfig c = base_config(5, 40);
  const std::vector<std::size_t> init{1, 2, 3};
  const FtsTrace t = run_fts(c, fx.problem, fx.objective(0.0), init, fx.provider());
  ASSERT_EQ(t.records.size(), 40u);
  EXPECT_EQ(t.observations.size(), 43u);
  const double best = fx.truth.maxCoeff();
  bool hit = false;
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    const auto& r = t.records[i];
    EXPECT_EQ(r.t, i + 1);
    EXPECT_EQ(r.y, r.f_x);  // noiseless oracle
    EXPECT_GE(r.c_t, r.beta_t);
    if (i > 0) {
      EXPECT_GE(r.regret_cum, t.records[i - 1].regret_cum);
      EXPECT_LE(r.simple_regret, t.records[i - 1].simple_regret);
    }
    if (r.f_x == best) hit = true;
    if (hit) EXPECT_EQ(r.simple_regret, 0.0);
  }
  EXPECT_LE(t.records.back().simple_regret, t.records.back().regret_cum / 40.0);
}

TEST(FtsLoop, DiagnosticsMatchIndependentEvaluation) {
  const Fixture fx(4);
  FtsConfig c = base_config(4, 15);
  c.diagnostics.d_n = {0.1, 0.2, 0.3, 0.4};
  const FtsTrace t = run_fts(c, fx.problem, fx.objective(), {}, fx.provider());
  ASSERT_EQ(t.diagnostics.size(), 15u * 4u);
  const double sd = 0.1, B = 1.0, delta = 0.1, eps = 0.05;
  const double pi2 = std::numbers::pi * std::numbers::pi;
  for (const auto& d : t.diagnostics) {
    const double N = 4.0, tt = static_cast<double>(d.t), tn = static_cast<double>(d.t_n);
    const double gamma = tn / 2.0 * std::log(1.0 + 1.0 / 0.01);
    const double bp = B + sd * std::sqrt(2.0 * (gamma + 1.0 + std::log(8.0 * N / delta)));
    const double c_t = 1.0 * (1.0 + std::sqrt(2.0 * std::log(120.0 * tt * tt)));
    const double expect = eps * (tn + 1) * (tn + 1) / (sd * sd) *
                              (B + std::sqrt(2.0 * std::log(4.0 * pi2 * tt * tt * N / (3.0 * delta)))) +
                          bp + std::sqrt(2.0 * std::log(2.0 * pi2 * tt * tt * N / (3.0 * delta)) + 60.0) +
                          0.1 * (d.agent_id + 1) + c_t;
    EXPECT_NEAR(d.delta_nt, expect, 1e-9 * expect);
    EXPECT_EQ(d.epsilon, eps);
    EXPECT_EQ(d.t_n, fx.messages[d.agent_id].t_n);
  }
  for (const auto& r : t.records) {
    EXPECT_GE(r.psi_t, 0.0);
    EXPECT_EQ(r.psi_t == 0.0, r.p_t == 1.0);
  }
}

TEST(FtsLoop, TheoreticalBetaStartsAtFormula) {
  const Fixture fx(0);
  FtsConfig c = base_config(0, 3);
  c.beta.mode = BetaConfig::Mode::kTheoretical;
  c.beta.B = 1.0;
  c.beta.delta = 0.5;
  const FtsTrace t = run_fts(c, fx.problem, fx.objective(), {}, nullptr);
  EXPECT_NEAR(t.records[0].beta_t, 1.248170970972829, 1e-12);
  EXPECT_GT(t.records[2].beta_t, t.records[0].beta_t);
}

TEST(FtsLoop, LargeDomainUsesRffOwnBranch) {
  auto domain = std::make_shared<const Domain>(Domain::uniform_grid_1d(50));
  auto basis = std::make_shared<const RffBasis>(build_basis(40, 1, kLengthscale, 1.0, 3));
  const FtsProblem problem = FtsProblem::make(domain, basis, {kLengthscale, 1.0}, nullptr, 10);
  EXPECT_EQ(problem.prior, nullptr);
  FtsConfig c = base_config(0, 5);
  c.schedule = Schedule::constant_one();
  Objective o;
  o.observe = [](std::size_t i, RngStream&) { return static_cast<double>(i % 7); };
  const FtsTrace t = run_fts(c, problem, o, {}, nullptr);
  for (const auto& r : t.records) EXPECT_EQ(r.branch, Branch::kOwnGpRff);
  EXPECT_TRUE(std::isnan(t.records[0].f_x));
  EXPECT_THROW(run_standard_ts(c, problem, o, {}), CapacityError);
}

TEST(FtsLoop, ZeroHorizonRejected) {
  const Fixture fx(0);
  FtsConfig c = base_config(0, 0);
  EXPECT_THROW(run_fts(c, fx.problem, fx.objective(), {}, nullptr), UsageError);
}
