// fbo: command-line driver for the federated Thompson sampling artifact.
//
// Exit codes: 0 success, 1 validation failure, 2 usage error, 3 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <system_error>
#include <thread>
#include <vector>

#include "fbo/csv.hpp"
#include "fbo/errors.hpp"
#include "fbo/federation.hpp"
#include "fbo/rff.hpp"
#include "fbo/synthetic.hpp"
#include "fbo/validation.hpp"

namespace fs = std::filesystem;
using namespace fbo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  return out;
}

/// Applies "key=value", "--key=value" and "--key value" overrides left over after option parsing.
void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.starts_with("--")) arg = arg.substr(2);
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      config.set(arg.substr(0, eq), arg.substr(eq + 1));
    } else if (extras[i].starts_with("--") && i + 1 < extras.size()) {
      config.set(arg, extras[++i]);
    } else {
      throw UsageError("override '" + extras[i] + "' is not key=value");
    }
  }
}

void apply_env_seed(ExperimentConfig& config) {
  if (const char* s = std::getenv("FBO_SEED"); s && *s) config.set("seed", s);
}

void summarize(const ExperimentResult& result, std::size_t horizon) {
  for (const char* method : {"fts", "ts"}) {
    bool present = false;
    for (const auto& r : result.rows) present |= r.method == method;
    if (!present) continue;
    const MeanSe m = simple_regret_at(result, method, horizon);
    std::cout << method << ": mean simple regret at t=" << horizon << " = " << format_double(m.mean)
              << " (se " << format_double(m.se) << ", n=" << m.n << ")\n";
  }
}

void write_traces(const fs::path& dir, const ExperimentResult& result) {
  for (const auto& r : result.replications) {
    const std::string stem = "rep_" + std::to_string(r.id.function) + "_" + std::to_string(r.id.init) + "_" +
                             std::to_string(r.id.repeat);
    auto fts = open_out(dir / (stem + "_fts.csv"));
    write_trace_csv(fts, r.fts.records);
    if (!r.ts.records.empty()) {
      auto ts = open_out(dir / (stem + "_ts.csv"));
      write_trace_csv(ts, r.ts.records);
    }
  }
}

ExperimentResult run_configured(const ExperimentConfig& config, const ExperimentOptions& options) {
  return config.federation_mode == FederationMode::kPerRound ? run_increasing_tn(config, options)
                                                              : run_experiment(config, options);
}

std::vector<std::uint64_t> seed_list(std::uint64_t root, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < count; ++s) seeds.push_back(derive_seed(root, {s}));
  return seeds;
}

struct BasisArgs {
  std::string file;
  std::uint64_t seed = 1;
  std::size_t m = 100;
  double lengthscale = 0.03;

  void add_to(CLI::App* app) {
    app->add_option("--basis-file", file, "basis exchange file (FBO1); overrides the seed parameters");
    app->add_option("--basis-seed", seed, "shared basis seed");
    app->add_option("--m", m, "number of random features");
    app->add_option("--lengthscale", lengthscale, "feature lengthscale");
  }

  std::shared_ptr<const RffBasis> load() const {
    if (!file.empty()) {
      std::ifstream in(file, std::ios::binary);
      if (!in) throw UsageError("cannot read basis file '" + file + "'");
      const Bytes blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      return std::make_shared<const RffBasis>(decode_basis_file(blob));
    }
    return std::make_shared<const RffBasis>(build_basis(m, 1, lengthscale, 1.0, seed));
  }
};

/// "id@host:port"
AgentEndpoint parse_endpoint(const std::string& text) {
  const auto at = text.find('@');
  const auto colon = text.rfind(':');
  if (at == std::string::npos || colon == std::string::npos || colon < at)
    throw UsageError("endpoint '" + text + "' is not id@host:port");
  try {
    const auto id = static_cast<std::uint32_t>(std::stoul(text.substr(0, at)));
    const auto port = static_cast<std::uint16_t>(std::stoul(text.substr(colon + 1)));
    return {id, std::make_shared<TcpEndpoint>(text.substr(at + 1, colon - at - 1), port)};
  } catch (const std::logic_error&) {
    throw UsageError("endpoint '" + text + "' is not id@host:port");
  }
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated Thompson sampling: experiments, validation and agent transport"};
  app.require_subcommand(1, 1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "cap on replication parallelism")->check(CLI::PositiveNumber);

  // demo
  auto* demo = app.add_subcommand("demo", "one replication at the default configuration");
  std::string demo_out = "demo_out";
  demo->add_option("--out", demo_out, "output directory");

  // bench
  auto* bench = app.add_subcommand("bench", "synthetic experiment; overrides as key=value or --key=value");
  std::string config_path;
  std::string bench_out = "bench_out";
  bool bench_traces = false;
  bench->add_option("--config", config_path, "experiment config file (key = value)");
  bench->add_option("--out", bench_out, "output directory");
  bench->add_flag("--traces", bench_traces, "also write per-replication trace CSVs");
  bench->allow_extras();

  // validate
  auto* validate = app.add_subcommand("validate", "oracle-equivalence and invariant suites");
  std::string mutate;
  validate->add_option("--mutate", mutate, "fault injection: sign-flip")->check(CLI::IsMember({"sign-flip"}));

  // approx-study
  auto* approx = app.add_subcommand("approx-study", "kernel approximation error against M");
  std::vector<std::size_t> approx_m{25, 100, 400};
  std::size_t approx_seeds = 20;
  std::uint64_t approx_root = 0;
  double approx_l = 0.03;
  std::string approx_out = "approx.csv";
  approx->add_option("--m", approx_m, "feature counts")->delimiter(',')->check(CLI::PositiveNumber);
  approx->add_option("--seeds", approx_seeds, "seeds per M")->check(CLI::PositiveNumber);
  approx->add_option("--seed", approx_root, "root seed");
  approx->add_option("--lengthscale", approx_l, "kernel lengthscale");
  approx->add_option("--out", approx_out, "output CSV");

  // serve-agent
  auto* serve = app.add_subcommand("serve-agent", "host one synthetic agent over TCP");
  BasisArgs serve_basis;
  serve_basis.add_to(serve);
  std::uint16_t serve_port = 0;
  std::uint32_t agent_id = 0;
  std::uint64_t objective_seed = 0;
  double serve_d = 0.02;
  std::size_t serve_t = 100;
  std::size_t max_requests = 0;
  bool any_interface = false;
  serve->add_option("--port", serve_port, "TCP port (0 picks one)");
  serve->add_option("--agent-id", agent_id, "agent id");
  serve->add_option("--objective-seed", objective_seed, "seed of the target objective the agent perturbs");
  serve->add_option("--d-n", serve_d, "heterogeneity d_n");
  serve->add_option("--t-n", serve_t, "number of agent observations");
  serve->add_option("--max-requests", max_requests, "stop after this many requests (0 = until terminated)");
  serve->add_flag("--any-interface", any_interface, "bind 0.0.0.0 instead of loopback");

  // collect
  auto* collect = app.add_subcommand("collect", "request one message from each endpoint");
  BasisArgs collect_basis;
  collect_basis.add_to(collect);
  std::vector<std::string> endpoints;
  int timeout_ms = 5000;
  std::string archive = "messages.bin";
  std::string straggler_path = "stragglers.csv";
  collect->add_option("--endpoint", endpoints, "id@host:port (repeatable)")->required();
  collect->add_option("--timeout-ms", timeout_ms, "per-agent deadline")->check(CLI::PositiveNumber);
  collect->add_option("--archive", archive, "output archive of length-prefixed messages");
  collect->add_option("--stragglers", straggler_path, "straggler CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*demo) {
      ExperimentConfig config;
      config.n_functions = 1;
      config.n_inits = 1;
      config.repeat = 1;
      apply_env_seed(config);
      const auto start = std::chrono::steady_clock::now();
      ExperimentOptions opts;
      opts.keep_traces = true;
      opts.diagnostics = true;
      const ExperimentResult result = run_experiment(config, opts);
      const fs::path dir = demo_out;
      {
        auto out = open_out(dir / "aggregate.csv");
        write_aggregate_csv(out, result.rows);
      }
      {
        auto out = open_out(dir / "diagnostics.csv");
        write_diagnostics_csv(out, result.diagnostics);
      }
      write_traces(dir / "traces", result);
      summarize(result, config.horizon);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "wrote " << dir.string() << " in " << format_double(std::round(secs * 100) / 100) << " s\n";
      return kExitOk;
    }

    if (*bench) {
      ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
      apply_env_seed(config);
      apply_overrides(config, bench->remaining());
      config.validate();
      ExperimentOptions opts;
      opts.threads = threads;
      opts.keep_traces = bench_traces;
      opts.diagnostics = true;
      const ExperimentResult result = run_configured(config, opts);
      const fs::path dir = bench_out;
      {
        auto out = open_out(dir / "aggregate.csv");
        write_aggregate_csv(out, result.rows);
      }
      {
        auto out = open_out(dir / "diagnostics.csv");
        write_diagnostics_csv(out, result.diagnostics);
      }
      {
        auto out = open_out(dir / "config.txt");
        out << config.to_text();
      }
      if (bench_traces) write_traces(dir / "traces", result);
      summarize(result, config.horizon);
      return kExitOk;
    }

    if (*validate) {
      ValidationOptions opts;
      opts.mutate_sign_flip = mutate == "sign-flip";
      const ValidationReport report = run_validation(opts);
      print_report(std::cout, report);
      return report.all_passed() ? kExitOk : kExitValidation;
    }

    if (*approx) {
      const auto rows = approx_study(approx_m, seed_list(approx_root, approx_seeds), approx_l);
      auto out = open_out(approx_out);
      write_approx_csv(out, rows);
      for (std::size_t m : approx_m)
        std::cout << "M=" << m << " median sup error " << format_double(median_sup_error(rows, m)) << '\n';
      return kExitOk;
    }

    if (*serve) {
      const auto basis = serve_basis.load();
      const SyntheticObjective f = gen_objective(0.03, objective_seed);
      const AgentObjective g =
          gen_agent(f, serve_d, serve_t, 0.01, derive_seed(objective_seed, {static_cast<std::uint64_t>(StreamRole::kAgents), agent_id}));
      AgentState agent(agent_id, basis, 0.01);
      agent.add_observations(g.observations);
      RngStream rng = RngStream::keyed(objective_seed, {static_cast<std::uint64_t>(StreamRole::kMessages), agent_id});
      AgentServer server(serve_port, [&] { return encode_message(make_message(agent, rng)); }, !any_interface);
      std::cout << "agent " << agent_id << " listening on port " << server.port() << " (basis fingerprint "
                << basis->fingerprint << ")" << std::endl;
      std::signal(SIGINT, [](int) { g_stop = 1; });
      std::signal(SIGTERM, [](int) { g_stop = 1; });
      if (max_requests > 0) {
        server.serve(max_requests);
      } else {
        server.start();
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
      }
      std::cout << "served " << server.served() << " requests\n";
      return kExitOk;
    }

    if (*collect) {
      const auto basis = collect_basis.load();
      std::vector<AgentEndpoint> eps;
      for (const auto& e : endpoints) eps.push_back(parse_endpoint(e));
      CollectOptions opts;
      opts.timeout = std::chrono::milliseconds(timeout_ms);
      opts.expected_fingerprint = basis->fingerprint;
      opts.expected_features = basis->num_features;
      const CollectedRound round = request_messages(eps, opts);
      {
        std::ofstream out = open_out(archive, std::ios::out | std::ios::binary);
        for (const auto& m : round.messages) {
          const Bytes framed = frame(encode_message(m));
          out.write(reinterpret_cast<const char*>(framed.data()), static_cast<std::streamsize>(framed.size()));
        }
      }
      {
        auto out = open_out(straggler_path);
        out << straggler_csv(round.report);
      }
      std::size_t failed = 0;
      for (const auto& r : round.report) failed += r.status != AgentStatus::kOk;
      std::cout << "collected " << round.messages.size() << " messages, " << failed << " stragglers\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::system_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
