#include "fbo/validation.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "fbo/csv.hpp"
#include "fbo/errors.hpp"
#include "fbo/federation.hpp"
#include "fbo/fts.hpp"
#include "fbo/rff.hpp"
#include "fbo/synthetic.hpp"

namespace fbo {

namespace {

double rel_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

std::string fmt(double v) { return format_double(v); }

}  // namespace

WoodburyCheck woodbury_equivalence(std::size_t instances, std::uint64_t seed, bool flip_sign, double tolerance) {
  WoodburyCheck out;
  out.instances = instances;
  RngStream rng(seed);
  const double noise_choices[] = {1e-6, 1e-2};
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t dim = 1 + rng.index(2);
    const std::size_t t = rng.index(51);
    const std::size_t m = 1 + rng.index(200);
    const double noise = noise_choices[rng.index(2)];
    const double lengthscale = rng.uniform(0.05, 0.5);
    const RffBasis basis = build_basis(m, dim, lengthscale, 1.0, rng.engine()());

    std::vector<Observation> obs;
    for (std::size_t i = 0; i < t; ++i) {
      Vector x(static_cast<Eigen::Index>(dim));
      for (auto& v : x) v = rng.uniform();
      obs.push_back({x, rng.normal()});
    }
    RffPosterior post = fit_rff_posterior(basis, obs, noise);
    if (flip_sign) post.nu = -post.nu;

    // Kernelized route: k_hat(x, x') = phi(x)^T phi(x'). The t x t system is badly conditioned at
    // sigma^2 = 1e-6, so the oracle works in extended precision to keep its own error out of the check.
    using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    LMatrix phi(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(m));
    LVector y(static_cast<Eigen::Index>(t));
    for (std::size_t i = 0; i < t; ++i) {
      phi.row(static_cast<Eigen::Index>(i)) = features(basis, obs[i].x).cast<long double>().transpose();
      y(static_cast<Eigen::Index>(i)) = obs[i].y;
    }
    LMatrix gram = phi * phi.transpose();
    gram.diagonal().array() += static_cast<long double>(noise);
    const Eigen::LDLT<LMatrix> solver(gram);

    for (int q = 0; q < 5; ++q) {
      Vector x(static_cast<Eigen::Index>(dim));
      for (auto& v : x) v = rng.uniform();
      const LVector fx = features(basis, x).cast<long double>();
      const Moments direct = rff_predict(post, basis, x);
      long double mean = 0.0L;
      long double var = fx.squaredNorm();
      if (t > 0) {
        const LVector kx = phi * fx;
        mean = kx.dot(solver.solve(y));
        var -= kx.dot(solver.solve(kx));
      }
      out.max_mean_error = std::max(out.max_mean_error, rel_error(direct.mean, static_cast<double>(mean)));
      out.max_variance_error = std::max(out.max_variance_error, rel_error(direct.variance, static_cast<double>(var)));
    }
  }
  out.passed = out.max_mean_error <= tolerance && out.max_variance_error <= tolerance;
  return out;
}

std::vector<ApproxRow> approx_study(const std::vector<std::size_t>& ms, const std::vector<std::uint64_t>& seeds,
                                    double lengthscale, std::size_t pairs) {
  const auto grid = synthetic_grid();
  const KernelHyper hyper{lengthscale, 1.0};
  std::vector<ApproxRow> rows;
  for (std::size_t m : ms) {
    if (m == 0) throw UsageError("M must be >= 1");
    for (std::uint64_t seed : seeds) {
      // Same pair set for every M at a given seed.
      RngStream pair_rng = RngStream::keyed(seed, {static_cast<std::uint64_t>(StreamRole::kDiagnostics)});
      const auto pts = random_pairs(*grid, pairs, pair_rng);
      const RffBasis basis =
          build_basis(m, 1, lengthscale, 1.0, derive_seed(seed, {static_cast<std::uint64_t>(StreamRole::kBasis), m}));
      const KernelApproxError e = kernel_approx_error(basis, hyper, pts);
      rows.push_back({m, seed, e.sup_error, e.mean_error});
    }
  }
  return rows;
}

double median_sup_error(const std::vector<ApproxRow>& rows, std::size_t m) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.m == m) v.push_back(r.sup_error);
  if (v.empty()) throw UsageError("no rows for M=" + std::to_string(m));
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_approx_csv(std::ostream& out, const std::vector<ApproxRow>& rows) {
  out << "m,seed,sup_error,mean_error\n";
  for (const auto& r : rows) out << r.m << ',' << r.seed << ',' << fmt(r.sup_error) << ',' << fmt(r.mean_error) << '\n';
}

bool ValidationReport::all_passed() const {
  return std::all_of(lines.begin(), lines.end(), [](const auto& l) { return l.passed; });
}

void print_report(std::ostream& out, const ValidationReport& report) {
  for (const auto& l : report.lines) out << (l.passed ? "PASS " : "FAIL ") << l.name << ": " << l.detail << '\n';
}

namespace {

ValidationLine check_woodbury(const ValidationOptions& o) {
  const WoodburyCheck w = woodbury_equivalence(200, o.seed, o.mutate_sign_flip);
  return {"woodbury_equivalence", w.passed,
          "max mean err " + fmt(w.max_mean_error) + ", max variance err " + fmt(w.max_variance_error) + " over " +
              std::to_string(w.instances) + " instances"};
}

ValidationLine check_normalization(const ValidationOptions& o) {
  RngStream rng = RngStream::keyed(o.seed, {11});
  const RffBasis basis = build_basis(100, 2, 0.1, 1.0, o.seed);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Vector x(2);
    x << rng.uniform(-3, 3), rng.uniform(-3, 3);
    worst = std::max(worst, std::abs(features(basis, x).squaredNorm() - 1.0));
  }
  return {"feature_normalization", worst <= 1e-12, "max | |phi|^2 - 1 | = " + fmt(worst)};
}

ValidationLine check_approx_scaling(const ValidationOptions& o) {
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(derive_seed(o.seed, {s}));
  const auto rows = approx_study({25, 100, 400}, seeds);
  const double m25 = median_sup_error(rows, 25), m100 = median_sup_error(rows, 100), m400 = median_sup_error(rows, 400);
  return {"kernel_approx_scaling", m100 < m25 && m400 < m100,
          "median sup error M=25: " + fmt(m25) + ", M=100: " + fmt(m100) + ", M=400: " + fmt(m400)};
}

ValidationLine check_schedule_condition() {
  const std::vector<double> c(10000, 3.0);
  const ScheduleCheck pass = validate_schedule(Schedule::one_minus_inv_sqrt(), c);

  const double sigma = 0.1;
  std::vector<double> ct;
  for (std::size_t t = 1; t <= 50; ++t) {
    const double gamma = info_gain_upper_bound(t - 1, 1.0, sigma * sigma);
    ct.push_back(c_theoretical(t, beta_theoretical(1.0, 0.1, gamma, sigma), 1000));
  }
  const ScheduleCheck fail = validate_schedule(Schedule::table({0.5}), ct);
  const bool ok = pass.passed && !fail.passed && fail.first_violation == 2u;
  return {"schedule_condition", ok,
          std::string("one_minus_inv_sqrt constant c: ") + (pass.passed ? "passes" : "fails") +
              " to T=10000; constant p=0.5 theoretical c: first violation t=" +
              (fail.first_violation ? std::to_string(*fail.first_violation) : "none")};
}

ValidationLine check_policy(const ValidationOptions& o) {
  RngStream rng = RngStream::keyed(o.seed, {12});
  bool ok = true;
  for (int trial = 0; trial < 200 && ok; ++trial) {
    const std::size_t n = 1 + rng.index(20);
    std::vector<double> w(n);
    for (auto& v : w) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.1, 2.0);
    AgentPolicy policy(w);
    std::vector<bool> removed(n, false);
    for (std::size_t i = 0; i < n; ++i) removed[i] = w[i] == 0.0;
    while (true) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum += policy.weights()[i];
        if (removed[i] && policy.weights()[i] != 0.0) ok = false;
      }
      if (policy.any_active() && std::abs(sum - 1.0) > 1e-12) ok = false;
      const auto pick = policy.sample(rng);
      if (!pick) break;
      if (removed[*pick]) ok = false;
      if (rng.coin()) policy.mark_used(*pick);
      else policy.mark_straggler(*pick);
      removed[*pick] = true;
    }
    if (std::count(removed.begin(), removed.end(), false) != 0) ok = false;
  }
  return {"policy_invariants", ok, "weights sum to 1 over active agents; removed agents never sampled"};
}

ValidationLine check_ts_reduction(const ValidationOptions& o) {
  const auto domain = std::make_shared<const Domain>(Domain::uniform_grid_1d(200));
  const KernelHyper hyper{0.1, 1.0};
  const auto basis = std::make_shared<const RffBasis>(build_basis(50, 1, 0.1, 1.0, o.seed));
  const FtsProblem problem = FtsProblem::make(domain, basis, hyper);
  RngStream frng = RngStream::keyed(o.seed, {13});
  const Vector f = problem.prior->sample_prior(frng);
  Objective obj;
  obj.truth = f;
  obj.observe = [&f](std::size_t i, RngStream& noise) { return f(static_cast<Eigen::Index>(i)) + 0.1 * noise.normal(); };

  bool ok = true;
  for (std::uint64_t s = 0; s < 3; ++s) {
    FtsConfig c;
    c.horizon = 20;
    c.schedule = Schedule::constant_one();
    c.hyper = hyper;
    c.n_agents = 4;
    c.seed = derive_seed(o.seed, {s});
    c.diagnostics.enabled = false;
    AgentState agent(0, basis, 0.01);
    RngStream mrng(c.seed);
    MessageProvider provider = [&](std::size_t round) {
      CollectedRound r;
      for (std::uint32_t n = 0; n < 4; ++n) {
        AgentMessage m = make_message(agent, mrng);
        m.agent_id = n;
        r.messages.push_back(m);
        r.report.push_back({round, n, AgentStatus::kOk, ""});
      }
      return r;
    };
    const std::size_t init[] = {static_cast<std::size_t>(s * 37 % 200)};
    const FtsTrace a = run_fts(c, problem, obj, init, provider);
    const FtsTrace b = run_standard_ts(c, problem, obj, init);
    for (std::size_t t = 0; t < c.horizon; ++t) {
      if (a.records[t].x_index != b.records[t].x_index) ok = false;
      if (a.records[t].y != b.records[t].y) ok = false;
    }
  }
  return {"ts_reduction", ok, "constant_one FTS matches standalone TS on 3 seeds, T=20"};
}

ValidationLine check_wire(const ValidationOptions& o) {
  RngStream rng = RngStream::keyed(o.seed, {14});
  bool ok = true;
  std::size_t rejected = 0;
  for (int i = 0; i < 1000 && ok; ++i) {
    AgentMessage m;
    m.agent_id = static_cast<std::uint32_t>(rng.engine()());
    m.t_n = static_cast<std::uint32_t>(rng.engine()());
    m.omega = Vector(static_cast<Eigen::Index>(rng.index(64)));
    for (auto& v : m.omega) v = rng.normal() * 1e3;
    m.basis_fingerprint = rng.engine()();
    const Bytes enc = encode_message(m);
    if (enc.size() != encoded_message_size(m.num_features()) || !bitwise_equal(decode_message(enc), m)) ok = false;
    if (i < 20) {
      for (std::size_t len = 0; len < enc.size(); ++len) {
        try {
          decode_message(std::span(enc.data(), len));
          ok = false;
        } catch (const ProtocolError&) {
          ++rejected;
        }
      }
    }
  }
  return {"wire_roundtrip", ok, "1000 round trips; " + std::to_string(rejected) + " truncations rejected"};
}

ValidationLine check_psi() {
  const std::vector<double> w{0.25, 0.25, 0.5};
  const std::vector<double> d{1.0, 2.0, 3.0};
  const bool ok = psi_t(1.0, w, d) == 0.0 && psi_t(0.9, w, d) > 0.0 && psi_t(0.5, w, d) > psi_t(0.9, w, d);
  return {"psi_zero_iff_p_one", ok, "psi(1) = " + fmt(psi_t(1.0, w, d)) + ", psi(0.9) = " + fmt(psi_t(0.9, w, d))};
}

}  // namespace

ValidationReport run_validation(const ValidationOptions& options) {
  ValidationReport report;
  report.lines.push_back(check_woodbury(options));
  report.lines.push_back(check_normalization(options));
  report.lines.push_back(check_approx_scaling(options));
  report.lines.push_back(check_schedule_condition());
  report.lines.push_back(check_policy(options));
  report.lines.push_back(check_ts_reduction(options));
  report.lines.push_back(check_wire(options));
  report.lines.push_back(check_psi());
  return report;
}

}  // namespace fbo
