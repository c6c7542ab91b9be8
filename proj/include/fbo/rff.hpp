#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fbo/bytes.hpp"
#include "fbo/kernel_gp.hpp"
#include "fbo/rng.hpp"

namespace fbo {

/// Shared random Fourier feature basis for the SE kernel.
///
/// Frequencies s_i ~ N(0, l^-2 I) and phases b_i ~ U[0, 2 pi] are drawn from a
/// seeded stream, so agents can share the basis by exchanging
/// (seed, M, D, l, sigma0^2) alone. The fingerprint hashes the canonical
/// serialization and is what agents compare to detect a mismatched basis.
struct RffBasis {
  std::size_t num_features = 0;  // M
  std::size_t dim = 0;           // D
  Matrix frequencies;            // M x D
  Vector phases;                 // M
  double lengthscale = 1.0;
  double signal_variance = 1.0;
  std::uint64_t seed = 0;
  bool seeded = true;  // false when built from explicit arrays
  std::uint64_t fingerprint = 0;

  KernelHyper hyper() const { return {lengthscale, signal_variance}; }
};

RffBasis build_basis(std::size_t num_features, std::size_t dim, double lengthscale,
                     double signal_variance, std::uint64_t seed);

/// Basis from explicit arrays, for exchange with implementations that do not share our RNG.
RffBasis basis_from_arrays(Matrix frequencies, Vector phases, double lengthscale, double signal_variance);

/// FNV-1a over LE (M u32, D u32, l f64, sigma0^2 f64, s row-major, b).
std::uint64_t basis_fingerprint(const RffBasis& basis);

enum class BasisFileMode : std::uint8_t { kSeedOnly = 0, kExplicit = 1 };

/// "FBO1" basis exchange blob.
Bytes encode_basis_file(const RffBasis& basis, BasisFileMode mode);
RffBasis decode_basis_file(std::span<const std::uint8_t> bytes);

/// phi(x) rescaled so |phi(x)|^2 = sigma0^2.
Vector features(const RffBasis& basis, const Vector& x);
/// Features for every domain point, one row per point (|X| x M).
Matrix feature_matrix(const RffBasis& basis, const Matrix& points);

/// Posterior of the weights in the Bayesian linear model f(x) = phi(x)^T w with prior N(0, I):
///   Sigma_t = Phi^T Phi + sigma^2 I,  nu_t = Sigma_t^{-1} Phi^T y,  w ~ N(nu_t, sigma^2 Sigma_t^{-1}).
struct RffPosterior {
  Vector nu;
  Matrix sigma_chol;  // L with L L^T = Sigma_t
  double noise_variance = 0.0;
  std::size_t num_observations = 0;
  std::uint64_t basis_fingerprint = 0;
};

RffPosterior fit_rff_posterior(const RffBasis& basis, std::span<const Observation> observations,
                               double noise_variance);
/// Same fit from precomputed feature rows (t x M).
RffPosterior fit_rff_posterior(const RffBasis& basis, const Matrix& phi, const Vector& y, double noise_variance);

/// w = nu + sigma * L^{-T} z, z ~ N(0, I).
Vector sample_weights(const RffPosterior& posterior, RngStream& rng);

Moments rff_predict(const RffPosterior& posterior, const RffBasis& basis, const Vector& x);

/// phi(x)^T w at every domain point.
Vector eval_weight_function(const RffBasis& basis, const Vector& omega, const Domain& domain);

struct KernelApproxError {
  double sup_error = 0.0;
  double mean_error = 0.0;
};

using PointPair = std::pair<Vector, Vector>;

KernelApproxError kernel_approx_error(const RffBasis& basis, const KernelHyper& hyper,
                                      std::span<const PointPair> pairs);

/// `count` pairs drawn uniformly (with replacement) from the domain.
std::vector<PointPair> random_pairs(const Domain& domain, std::size_t count, RngStream& rng);

}  // namespace fbo
