#include "fbo/csv.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "fbo/errors.hpp"

namespace fbo {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw UsageError("not a number: '" + std::string(s) + "'");
  return v;
}

namespace {

template <typename Int>
Int parse_int(std::string_view s) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw UsageError("not an integer: '" + std::string(s) + "'");
  return v;
}

Branch parse_branch(std::string_view s) {
  if (s == "own_gp") return Branch::kOwnGp;
  if (s == "own_gp_rff") return Branch::kOwnGpRff;
  if (s == "own_gp_fallback") return Branch::kOwnGpFallback;
  if (s == "agent") return Branch::kAgent;
  throw UsageError("unknown branch '" + std::string(s) + "'");
}

std::string join_coordinates(const Vector& x) {
  std::string out;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (i) out += ';';
    out += format_double(x(i));
  }
  return out;
}

Vector split_coordinates(std::string_view s) {
  std::vector<double> values;
  while (true) {
    const auto semi = s.find(';');
    values.push_back(parse_double(s.substr(0, semi)));
    if (semi == std::string_view::npos) break;
    s = s.substr(semi + 1);
  }
  return Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

constexpr std::string_view kTraceHeader =
    "t,p_t,branch,agent_id,x,y,f_x,regret_inst,regret_cum,simple_regret,beta_t,c_t,psi_t";
constexpr std::string_view kDiagnosticsHeader = "t,agent_id,t_n,epsilon,delta_nt";

}  // namespace

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  while (true) {
    const auto comma = line.find(',');
    fields.emplace_back(line.substr(0, comma));
    if (comma == std::string_view::npos) break;
    line = line.substr(comma + 1);
  }
  return fields;
}

void write_trace_csv(std::ostream& out, std::span<const TraceRecord> records) {
  out << kTraceHeader << '\n';
  for (const auto& r : records) {
    out << r.t << ',' << format_double(r.p_t) << ',' << to_string(r.branch) << ',' << r.agent_id << ','
        << join_coordinates(r.x) << ',' << format_double(r.y) << ',' << format_double(r.f_x) << ','
        << format_double(r.regret_inst) << ',' << format_double(r.regret_cum) << ','
        << format_double(r.simple_regret) << ',' << format_double(r.beta_t) << ',' << format_double(r.c_t)
        << ',' << format_double(r.psi_t) << '\n';
  }
}

std::vector<TraceRecord> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw UsageError("trace CSV: bad header");
  std::vector<TraceRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 13) throw UsageError("trace CSV: expected 13 fields");
    TraceRecord r;
    r.t = parse_int<std::size_t>(f[0]);
    r.p_t = parse_double(f[1]);
    r.branch = parse_branch(f[2]);
    r.agent_id = parse_int<std::int64_t>(f[3]);
    r.x = split_coordinates(f[4]);
    r.y = parse_double(f[5]);
    r.f_x = parse_double(f[6]);
    r.regret_inst = parse_double(f[7]);
    r.regret_cum = parse_double(f[8]);
    r.simple_regret = parse_double(f[9]);
    r.beta_t = parse_double(f[10]);
    r.c_t = parse_double(f[11]);
    r.psi_t = parse_double(f[12]);
    out.push_back(std::move(r));
  }
  return out;
}

void write_diagnostics_csv(std::ostream& out, std::span<const DiagnosticRecord> records) {
  out << kDiagnosticsHeader << '\n';
  for (const auto& r : records) {
    out << r.t << ',' << r.agent_id << ',' << r.t_n << ',' << format_double(r.epsilon) << ','
        << format_double(r.delta_nt) << '\n';
  }
}

std::vector<DiagnosticRecord> read_diagnostics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kDiagnosticsHeader) throw UsageError("diagnostics CSV: bad header");
  std::vector<DiagnosticRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw UsageError("diagnostics CSV: expected 5 fields");
    out.push_back({parse_int<std::size_t>(f[0]), parse_int<std::uint32_t>(f[1]), parse_int<std::uint32_t>(f[2]),
                   parse_double(f[3]), parse_double(f[4])});
  }
  return out;
}

}  // namespace fbo
