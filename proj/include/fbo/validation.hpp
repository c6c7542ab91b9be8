#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fbo {

/// RFF predictive moments through (nu, Sigma) against the kernelized forms with k_hat = phi^T phi'.
/// Relative error is |a - b| / max(1, |b|).
struct WoodburyCheck {
  std::size_t instances = 0;
  double max_mean_error = 0.0;
  double max_variance_error = 0.0;
  bool passed = false;
};

/// Random instances with D in {1, 2}, t <= 50, M <= 200, noise variance in {1e-6, 1e-2}.
/// flip_sign negates nu before predicting (fault injection for the harness itself).
WoodburyCheck woodbury_equivalence(std::size_t instances, std::uint64_t seed, bool flip_sign = false,
                                   double tolerance = 1e-8);

struct ApproxRow {
  std::size_t m = 0;
  std::uint64_t seed = 0;
  double sup_error = 0.0;
  double mean_error = 0.0;
};

/// Kernel approximation error on the 1000-point unit grid over 1000 random pairs per (M, seed).
std::vector<ApproxRow> approx_study(const std::vector<std::size_t>& ms, const std::vector<std::uint64_t>& seeds,
                                    double lengthscale = 0.03, std::size_t pairs = 1000);
double median_sup_error(const std::vector<ApproxRow>& rows, std::size_t m);
void write_approx_csv(std::ostream& out, const std::vector<ApproxRow>& rows);

struct ValidationLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ValidationOptions {
  std::uint64_t seed = 20201;
  bool mutate_sign_flip = false;
};

struct ValidationReport {
  std::vector<ValidationLine> lines;
  bool all_passed() const;
};

ValidationReport run_validation(const ValidationOptions& options = {});
/// One line per property: "PASS name: detail" or "FAIL name: detail".
void print_report(std::ostream& out, const ValidationReport& report);

}  // namespace fbo
