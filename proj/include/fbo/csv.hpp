#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fbo/fts.hpp"

namespace fbo {

/// Shortest decimal that parses back to the same double ("nan", "inf" for specials).
std::string format_double(double v);
double parse_double(std::string_view s);

std::vector<std::string> split_csv_line(std::string_view line);

/// t,p_t,branch,agent_id,x,y,f_x,regret_inst,regret_cum,simple_regret,beta_t,c_t,psi_t
void write_trace_csv(std::ostream& out, std::span<const TraceRecord> records);
std::vector<TraceRecord> read_trace_csv(std::istream& in);

/// t,agent_id,t_n,epsilon,delta_nt
void write_diagnostics_csv(std::ostream& out, std::span<const DiagnosticRecord> records);
std::vector<DiagnosticRecord> read_diagnostics_csv(std::istream& in);

}  // namespace fbo
