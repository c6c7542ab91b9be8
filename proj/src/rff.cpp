#include "fbo/rff.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "fbo/errors.hpp"

namespace fbo {

namespace {

constexpr std::string_view kBasisMagic = "FBO1";
constexpr std::size_t kMaxDecodedFeatures = std::size_t{1} << 24;
constexpr std::size_t kMaxDecodedDim = std::size_t{1} << 16;

void check_basis_params(std::size_t m, std::size_t d, double l, double s0) {
  if (m == 0) throw UsageError("number of random features must be >= 1");
  if (d == 0) throw UsageError("input dimension must be >= 1");
  KernelHyper{l, s0}.validate();
  if (m > std::numeric_limits<std::uint32_t>::max() || d > std::numeric_limits<std::uint32_t>::max())
    throw UsageError("basis dimensions exceed u32");
}

void check_fingerprint(const RffPosterior& posterior, const RffBasis& basis) {
  if (posterior.basis_fingerprint != basis.fingerprint)
    throw ProtocolError("basis fingerprint mismatch between posterior and basis");
}

}  // namespace

RffBasis build_basis(std::size_t num_features, std::size_t dim, double lengthscale,
                     double signal_variance, std::uint64_t seed) {
  check_basis_params(num_features, dim, lengthscale, signal_variance);
  RffBasis basis;
  basis.num_features = num_features;
  basis.dim = dim;
  basis.lengthscale = lengthscale;
  basis.signal_variance = signal_variance;
  basis.seed = seed;
  basis.seeded = true;

  RngStream rng(seed);
  const auto m = static_cast<Eigen::Index>(num_features);
  const auto d = static_cast<Eigen::Index>(dim);
  basis.frequencies.resize(m, d);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) basis.frequencies(i, j) = rng.normal() / lengthscale;
  basis.phases.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) basis.phases(i) = rng.uniform(0.0, 2.0 * std::numbers::pi);
  basis.fingerprint = basis_fingerprint(basis);
  return basis;
}

RffBasis basis_from_arrays(Matrix frequencies, Vector phases, double lengthscale, double signal_variance) {
  const auto m = static_cast<std::size_t>(frequencies.rows());
  const auto d = static_cast<std::size_t>(frequencies.cols());
  check_basis_params(m, d, lengthscale, signal_variance);
  if (phases.size() != frequencies.rows()) throw UsageError("phases length must equal feature count");
  if (!frequencies.allFinite() || !phases.allFinite()) throw UsageError("basis arrays must be finite");
  for (Eigen::Index i = 0; i < phases.size(); ++i) {
    if (phases(i) < 0.0 || phases(i) > 2.0 * std::numbers::pi) throw UsageError("phase outside [0, 2pi]");
  }
  RffBasis basis;
  basis.num_features = m;
  basis.dim = d;
  basis.frequencies = std::move(frequencies);
  basis.phases = std::move(phases);
  basis.lengthscale = lengthscale;
  basis.signal_variance = signal_variance;
  basis.seeded = false;
  basis.fingerprint = basis_fingerprint(basis);
  return basis;
}

std::uint64_t basis_fingerprint(const RffBasis& basis) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(basis.num_features));
  w.u32(static_cast<std::uint32_t>(basis.dim));
  w.f64(basis.lengthscale);
  w.f64(basis.signal_variance);
  for (Eigen::Index i = 0; i < basis.frequencies.rows(); ++i)
    for (Eigen::Index j = 0; j < basis.frequencies.cols(); ++j) w.f64(basis.frequencies(i, j));
  for (Eigen::Index i = 0; i < basis.phases.size(); ++i) w.f64(basis.phases(i));
  return fnv1a64(w.bytes());
}

Bytes encode_basis_file(const RffBasis& basis, BasisFileMode mode) {
  if (mode == BasisFileMode::kSeedOnly && !basis.seeded)
    throw UsageError("seed-only encoding needs a seeded basis");
  ByteWriter w;
  w.raw(kBasisMagic);
  w.u32(static_cast<std::uint32_t>(basis.num_features));
  w.u32(static_cast<std::uint32_t>(basis.dim));
  w.f64(basis.lengthscale);
  w.f64(basis.signal_variance);
  w.u8(static_cast<std::uint8_t>(mode));
  if (mode == BasisFileMode::kSeedOnly) {
    w.u64(basis.seed);
  } else {
    for (Eigen::Index i = 0; i < basis.frequencies.rows(); ++i)
      for (Eigen::Index j = 0; j < basis.frequencies.cols(); ++j) w.f64(basis.frequencies(i, j));
    for (Eigen::Index i = 0; i < basis.phases.size(); ++i) w.f64(basis.phases(i));
  }
  w.u64(basis.fingerprint);
  return std::move(w).bytes();
}

RffBasis decode_basis_file(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.raw(4, "magic") != kBasisMagic) throw ProtocolError("magic: expected \"FBO1\"");
  const std::size_t m = r.u32("M");
  const std::size_t d = r.u32("D");
  const double l = r.f64("lengthscale");
  const double s0 = r.f64("signal_variance");
  const std::uint8_t mode = r.u8("mode");
  if (m > kMaxDecodedFeatures || d > kMaxDecodedDim)
    throw ProtocolError("M/D: basis dimensions exceed decoder limits");
  RffBasis basis;
  try {
    if (mode == static_cast<std::uint8_t>(BasisFileMode::kSeedOnly)) {
      basis = build_basis(m, d, l, s0, r.u64("seed"));
    } else if (mode == static_cast<std::uint8_t>(BasisFileMode::kExplicit)) {
      r.need(m * d * 8, "frequencies");
      Matrix s(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
      for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) = r.f64("frequencies");
      r.need(m * 8, "phases");
      Vector b(static_cast<Eigen::Index>(m));
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = r.f64("phases");
      basis = basis_from_arrays(std::move(s), std::move(b), l, s0);
    } else {
      throw ProtocolError("mode: unknown value " + std::to_string(mode));
    }
  } catch (const UsageError& e) {
    throw ProtocolError(std::string("basis parameters: ") + e.what());
  }
  const std::uint64_t fp = r.u64("fingerprint");
  if (r.remaining() != 0) throw ProtocolError("trailing bytes after fingerprint");
  if (fp != basis.fingerprint) throw ProtocolError("fingerprint: does not match reconstructed basis");
  return basis;
}

Vector features(const RffBasis& basis, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != basis.dim) throw UsageError("features: dimension mismatch");
  const double scale = std::sqrt(2.0 / static_cast<double>(basis.num_features));
  Vector phi = ((basis.frequencies * x + basis.phases).array().cos() * scale).matrix();
  const double norm = phi.norm();
  if (!(norm > 0.0)) throw NumericalError("features: raw feature vector has zero norm");
  phi *= std::sqrt(basis.signal_variance) / norm;
  return phi;
}

Matrix feature_matrix(const RffBasis& basis, const Matrix& points) {
  if (static_cast<std::size_t>(points.cols()) != basis.dim)
    throw UsageError("feature_matrix: dimension mismatch");
  Matrix phi(points.rows(), static_cast<Eigen::Index>(basis.num_features));
  for (Eigen::Index i = 0; i < points.rows(); ++i) phi.row(i) = features(basis, points.row(i).transpose()).transpose();
  return phi;
}

RffPosterior fit_rff_posterior(const RffBasis& basis, std::span<const Observation> observations,
                               double noise_variance) {
  const auto t = static_cast<Eigen::Index>(observations.size());
  Matrix phi(t, static_cast<Eigen::Index>(basis.num_features));
  Vector y(t);
  for (Eigen::Index i = 0; i < t; ++i) {
    const auto& o = observations[static_cast<std::size_t>(i)];
    phi.row(i) = features(basis, o.x).transpose();
    y(i) = o.y;
  }
  return fit_rff_posterior(basis, phi, y, noise_variance);
}

RffPosterior fit_rff_posterior(const RffBasis& basis, const Matrix& phi, const Vector& y, double noise_variance) {
  if (!(noise_variance > 0.0)) throw UsageError("noise_variance must be positive");
  const auto m = static_cast<Eigen::Index>(basis.num_features);
  if (phi.cols() != m || phi.rows() != y.size()) throw UsageError("fit_rff_posterior: shape mismatch");

  Matrix sigma = Matrix::Identity(m, m) * noise_variance;
  if (phi.rows() > 0) sigma.selfadjointView<Eigen::Lower>().rankUpdate(phi.transpose());
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success || !y.allFinite())
    throw NumericalError("fit_rff_posterior: factorization of Sigma_t failed (non-finite input?)");

  RffPosterior post;
  post.sigma_chol = llt.matrixL();
  post.nu = llt.solve(phi.transpose() * y);
  post.noise_variance = noise_variance;
  post.num_observations = static_cast<std::size_t>(y.size());
  post.basis_fingerprint = basis.fingerprint;
  return post;
}

Vector sample_weights(const RffPosterior& posterior, RngStream& rng) {
  const auto m = posterior.nu.size();
  Vector z(m);
  for (Eigen::Index i = 0; i < m; ++i) z(i) = rng.normal();
  posterior.sigma_chol.triangularView<Eigen::Lower>().transpose().solveInPlace(z);
  return posterior.nu + std::sqrt(posterior.noise_variance) * z;
}

Moments rff_predict(const RffPosterior& posterior, const RffBasis& basis, const Vector& x) {
  check_fingerprint(posterior, basis);
  const Vector phi = features(basis, x);
  const Vector v = posterior.sigma_chol.triangularView<Eigen::Lower>().solve(phi);
  return {phi.dot(posterior.nu), posterior.noise_variance * v.squaredNorm()};
}

Vector eval_weight_function(const RffBasis& basis, const Vector& omega, const Domain& domain) {
  if (static_cast<std::size_t>(omega.size()) != basis.num_features)
    throw UsageError("eval_weight_function: omega length must equal M");
  return feature_matrix(basis, domain.points()) * omega;
}

KernelApproxError kernel_approx_error(const RffBasis& basis, const KernelHyper& hyper,
                                      std::span<const PointPair> pairs) {
  if (pairs.empty()) throw UsageError("kernel_approx_error needs at least one pair");
  KernelApproxError out;
  double total = 0.0;
  for (const auto& [a, b] : pairs) {
    const double err = std::abs(se_kernel(a, b, hyper) - features(basis, a).dot(features(basis, b)));
    out.sup_error = std::max(out.sup_error, err);
    total += err;
  }
  out.mean_error = total / static_cast<double>(pairs.size());
  return out;
}

std::vector<PointPair> random_pairs(const Domain& domain, std::size_t count, RngStream& rng) {
  std::vector<PointPair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t a = rng.index(domain.size());
    const std::size_t b = rng.index(domain.size());
    pairs.emplace_back(domain.point(a), domain.point(b));
  }
  return pairs;
}

}  // namespace fbo
