#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fbo/rng.hpp"

namespace fbo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Largest domain for which a joint draw over every point is taken exactly.
inline constexpr std::size_t kDefaultJointSampleCap = 4096;

struct KernelHyper {
  double lengthscale = 1.0;
  double signal_variance = 1.0;

  void validate() const;
  bool operator==(const KernelHyper&) const = default;
};

/// Squared-exponential kernel sigma0^2 * exp(-|x - x2|^2 / (2 l^2)).
double se_kernel(const Vector& x, const Vector& x2, const KernelHyper& hyper);

/// Discrete candidate set. Points are stored one per row.
class Domain {
 public:
  explicit Domain(Matrix points);

  /// n points evenly spaced on [lo, hi], endpoints included.
  static Domain uniform_grid_1d(std::size_t n, double lo = 0.0, double hi = 1.0);

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
  Vector point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)).transpose(); }
  const Matrix& points() const { return points_; }

  /// Index of the point equal to x, if any.
  std::optional<std::size_t> find(const Vector& x) const;

 private:
  Matrix points_;
};

struct Observation {
  Vector x;
  double y = 0.0;
};

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Kernel matrix between the rows of a and the rows of b.
Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelHyper& hyper);

/// Cholesky factor of `a + jitter * I`. Jitter starts at 1e-9 * scale and is raised
/// tenfold up to 1e-3 * scale; throws NumericalError past that.
struct JitteredCholesky {
  Matrix lower;
  double jitter = 0.0;
};
JitteredCholesky cholesky_with_jitter(const Matrix& a, double scale);

/// Exact GP regression with zero prior mean. Single writer; concurrent readers are fine.
class GpModel {
 public:
  GpModel(KernelHyper hyper, double noise_variance);

  void add_observation(Vector x, double y);
  void add_observations(std::span<const Observation> obs);

  Moments predict(const Vector& x) const;
  /// Posterior means at every row of `points`.
  Vector predict_mean(const Matrix& points) const;

  double log_marginal_likelihood() const;
  /// 1/2 log det(I + K_t / sigma^2) over the stored observations.
  double info_gain() const;

  /// (K_t + sigma^2 I + jitter)^{-1} r using the cached factor.
  Vector solve(const Vector& r) const;

  const KernelHyper& hyper() const { return hyper_; }
  double noise_variance() const { return noise_variance_; }
  std::size_t size() const { return observations_.size(); }
  std::size_t dim() const { return observations_.empty() ? 0 : static_cast<std::size_t>(observations_.front().x.size()); }
  const std::vector<Observation>& observations() const { return observations_; }
  Matrix inputs() const;
  const Vector& targets() const { return targets_; }
  const Matrix& cholesky() const { return chol_; }
  /// (K_t + sigma^2 I)^{-1} y.
  const Vector& alpha() const { return alpha_; }
  double jitter() const { return jitter_; }

 private:
  void refactor();

  KernelHyper hyper_;
  double noise_variance_;
  std::vector<Observation> observations_;
  Vector targets_;
  Matrix chol_;
  Vector alpha_;
  double jitter_ = 0.0;
};

/// Cached prior factor over a domain. Joint posterior draws then cost O(|X| t)
/// on top of one O(|X|^2) prior draw, using the pathwise update
///   f_post = f_prior + k_X^T (K_t + sigma^2 I)^{-1} (y - f_prior(X_t) - e).
/// Immutable after construction; share freely across threads.
class GridPrior {
 public:
  GridPrior(Domain domain, KernelHyper hyper, std::size_t cap = kDefaultJointSampleCap);

  const Domain& domain() const { return domain_; }
  const KernelHyper& hyper() const { return hyper_; }
  const Matrix& cholesky() const { return chol_; }
  double jitter() const { return jitter_; }

  Vector sample_prior(RngStream& rng) const;

 private:
  Domain domain_;
  KernelHyper hyper_;
  Matrix chol_;
  double jitter_ = 0.0;
};

/// Joint draw over the domain from GP(mu_t, beta^2 Sigma_t). Forms the dense
/// posterior covariance over the domain and factors it.
Vector sample_gp_function(const GpModel& model, double beta, const Domain& domain, RngStream& rng,
                          std::size_t cap = kDefaultJointSampleCap);

/// Same distribution through the cached prior factor. Every observation input must be
/// a domain point; otherwise falls back to the dense route.
Vector sample_gp_function(const GpModel& model, double beta, const GridPrior& prior, RngStream& rng);

/// As above with the domain index of each observation supplied by the caller
/// (observation_indices[i] must locate model.observations()[i]).
Vector sample_gp_function(const GpModel& model, double beta, const GridPrior& prior,
                          std::span<const std::size_t> observation_indices, RngStream& rng);

/// Grid candidate maximizing the log marginal likelihood; ties go to the lowest index.
KernelHyper fit_hyperparameters(std::span<const Observation> observations, double noise_variance,
                                std::span<const KernelHyper> grid);

/// First index of the maximum value.
std::size_t argmax(const Vector& values);

}  // namespace fbo
