#include "fbo/kernel_gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "fbo/errors.hpp"

namespace fbo {

namespace {

constexpr double kInitialJitter = 1e-9;
constexpr double kMaxJitter = 1e-3;

Vector standard_normal(Eigen::Index n, RngStream& rng) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
  return z;
}

}  // namespace

void KernelHyper::validate() const {
  if (!(lengthscale > 0.0) || !std::isfinite(lengthscale))
    throw UsageError("lengthscale must be positive and finite");
  if (!(signal_variance > 0.0) || !std::isfinite(signal_variance))
    throw UsageError("signal_variance must be positive and finite");
}

double se_kernel(const Vector& x, const Vector& x2, const KernelHyper& hyper) {
  if (x.size() != x2.size()) throw UsageError("se_kernel: dimension mismatch");
  const double sq = (x - x2).squaredNorm();
  return hyper.signal_variance * std::exp(-sq / (2.0 * hyper.lengthscale * hyper.lengthscale));
}

Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelHyper& hyper) {
  if (a.cols() != b.cols()) throw UsageError("kernel_matrix: dimension mismatch");
  const double inv_two_l2 = 1.0 / (2.0 * hyper.lengthscale * hyper.lengthscale);
  Matrix k(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double sq = (a.row(i) - b.row(j)).squaredNorm();
      k(i, j) = hyper.signal_variance * std::exp(-sq * inv_two_l2);
    }
  }
  return k;
}

JitteredCholesky cholesky_with_jitter(const Matrix& a, double scale) {
  if (a.rows() == 0) return {Matrix(0, 0), kInitialJitter * scale};
  Matrix work = a;
  for (double rel = kInitialJitter; rel <= kMaxJitter * (1.0 + 1e-12); rel *= 10.0) {
    const double jitter = rel * scale;
    work.diagonal() = a.diagonal().array() + jitter;
    Eigen::LLT<Matrix> llt(work);
    if (llt.info() == Eigen::Success) {
      Matrix lower = llt.matrixL();
      if (lower.allFinite()) return {std::move(lower), jitter};
    }
  }
  std::ostringstream msg;
  msg << "Cholesky failed at max jitter " << kMaxJitter * scale << " (n=" << a.rows()
      << ", min diag=" << a.diagonal().minCoeff() << ", max diag=" << a.diagonal().maxCoeff()
      << ", finite=" << (a.allFinite() ? "yes" : "no") << ")";
  throw NumericalError(msg.str());
}

Domain::Domain(Matrix points) : points_(std::move(points)) {
  if (points_.rows() == 0 || points_.cols() == 0) throw UsageError("domain must be non-empty");
  if (!points_.allFinite()) throw UsageError("domain coordinates must be finite");
  // Sorted copy of row indices makes the duplicate check O(n log n).
  std::vector<Eigen::Index> order(static_cast<std::size_t>(points_.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  auto less = [this](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < points_.cols(); ++c) {
      if (points_(a, c) != points_(b, c)) return points_(a, c) < points_(b, c);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (!less(order[i - 1], order[i])) throw UsageError("domain contains duplicate points");
  }
}

Domain Domain::uniform_grid_1d(std::size_t n, double lo, double hi) {
  if (n == 0) throw UsageError("grid size must be positive");
  Matrix pts(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) {
    pts(static_cast<Eigen::Index>(i), 0) =
        n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return Domain(std::move(pts));
}

std::optional<std::size_t> Domain::find(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) return std::nullopt;
  for (Eigen::Index i = 0; i < points_.rows(); ++i) {
    if ((points_.row(i).transpose().array() == x.array()).all()) return static_cast<std::size_t>(i);
  }
  return std::nullopt;
}

GpModel::GpModel(KernelHyper hyper, double noise_variance)
    : hyper_(hyper), noise_variance_(noise_variance) {
  hyper_.validate();
  if (!(noise_variance_ > 0.0) || !std::isfinite(noise_variance_))
    throw UsageError("noise_variance must be positive and finite");
}

void GpModel::add_observation(Vector x, double y) {
  if (!observations_.empty() && x.size() != observations_.front().x.size())
    throw UsageError("observation dimension mismatch");
  observations_.push_back({std::move(x), y});
  refactor();
}

void GpModel::add_observations(std::span<const Observation> obs) {
  for (const auto& o : obs) {
    if (!observations_.empty() && o.x.size() != observations_.front().x.size())
      throw UsageError("observation dimension mismatch");
    observations_.push_back(o);
  }
  refactor();
}

Matrix GpModel::inputs() const {
  const auto t = static_cast<Eigen::Index>(observations_.size());
  Matrix x(t, t == 0 ? 0 : observations_.front().x.size());
  for (Eigen::Index i = 0; i < t; ++i) x.row(i) = observations_[static_cast<std::size_t>(i)].x.transpose();
  return x;
}

void GpModel::refactor() {
  const auto t = static_cast<Eigen::Index>(observations_.size());
  targets_.resize(t);
  for (Eigen::Index i = 0; i < t; ++i) targets_(i) = observations_[static_cast<std::size_t>(i)].y;
  const Matrix x = inputs();
  Matrix k = kernel_matrix(x, x, hyper_);
  k.diagonal().array() += noise_variance_;
  auto fact = cholesky_with_jitter(k, hyper_.signal_variance);
  chol_ = std::move(fact.lower);
  jitter_ = fact.jitter;
  alpha_ = solve(targets_);
}

Vector GpModel::solve(const Vector& r) const {
  if (chol_.rows() == 0) return Vector(0);
  Vector v = chol_.triangularView<Eigen::Lower>().solve(r);
  chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(v);
  return v;
}

Moments GpModel::predict(const Vector& x) const {
  const double prior = hyper_.signal_variance;
  if (observations_.empty()) return {0.0, prior};
  if (static_cast<std::size_t>(x.size()) != dim()) throw UsageError("predict: dimension mismatch");
  const Vector kx = kernel_matrix(inputs(), x.transpose(), hyper_).col(0);
  const double mean = kx.dot(alpha_);
  const Vector v = chol_.triangularView<Eigen::Lower>().solve(kx);
  double variance = prior - v.squaredNorm();
  if (variance < 0.0) {
    std::ostringstream msg;
    msg << "clamped raw posterior variance " << variance << " to 0";
    if (variance < -10.0 * jitter_) msg << " (outside tolerance " << -10.0 * jitter_ << ")";
    warn(msg.str());
    variance = 0.0;
  }
  return {mean, variance};
}

Vector GpModel::predict_mean(const Matrix& points) const {
  if (observations_.empty()) return Vector::Zero(points.rows());
  return kernel_matrix(points, inputs(), hyper_) * alpha_;
}

double GpModel::log_marginal_likelihood() const {
  if (observations_.empty()) throw UsageError("log_marginal_likelihood needs at least one observation");
  const double t = static_cast<double>(observations_.size());
  const double log_det = 2.0 * chol_.diagonal().array().log().sum();
  return -0.5 * targets_.dot(alpha_) - 0.5 * log_det - 0.5 * t * std::log(2.0 * std::numbers::pi);
}

double GpModel::info_gain() const {
  if (observations_.empty()) return 0.0;
  const Matrix x = inputs();
  Matrix a = kernel_matrix(x, x, hyper_) / noise_variance_;
  a.diagonal().array() += 1.0;
  // I + K/sigma^2 has eigenvalues >= 1, so no jitter is needed.
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("info_gain: factorization failed");
  const Matrix l = llt.matrixL();
  return l.diagonal().array().log().sum();
}

GridPrior::GridPrior(Domain domain, KernelHyper hyper, std::size_t cap)
    : domain_(std::move(domain)), hyper_(hyper) {
  hyper_.validate();
  if (domain_.size() > cap) {
    throw CapacityError("domain of " + std::to_string(domain_.size()) +
                        " points exceeds joint-sampling cap " + std::to_string(cap) +
                        "; use the random-feature path");
  }
  auto fact = cholesky_with_jitter(kernel_matrix(domain_.points(), domain_.points(), hyper_),
                                   hyper_.signal_variance);
  chol_ = std::move(fact.lower);
  jitter_ = fact.jitter;
}

Vector GridPrior::sample_prior(RngStream& rng) const {
  const Vector z = standard_normal(chol_.rows(), rng);
  return chol_.triangularView<Eigen::Lower>() * z;
}

Vector sample_gp_function(const GpModel& model, double beta, const Domain& domain, RngStream& rng,
                          std::size_t cap) {
  if (domain.size() > cap) {
    throw CapacityError("domain of " + std::to_string(domain.size()) +
                        " points exceeds joint-sampling cap " + std::to_string(cap) +
                        "; use the random-feature path");
  }
  if (!(beta >= 0.0)) throw UsageError("beta must be nonnegative");
  const Matrix& pts = domain.points();
  const Vector mean = model.predict_mean(pts);
  if (beta == 0.0) return mean;
  Matrix cov = kernel_matrix(pts, pts, model.hyper());
  if (model.size() > 0) {
    const Matrix v = model.cholesky().triangularView<Eigen::Lower>().solve(
        kernel_matrix(model.inputs(), pts, model.hyper()));
    cov.noalias() -= v.transpose() * v;
  }
  const auto fact = cholesky_with_jitter(cov, model.hyper().signal_variance);
  const Vector z = standard_normal(cov.rows(), rng);
  const Vector draw = fact.lower.triangularView<Eigen::Lower>() * z;
  return mean + beta * draw;
}

Vector sample_gp_function(const GpModel& model, double beta, const GridPrior& prior, RngStream& rng) {
  std::vector<std::size_t> idx;
  idx.reserve(model.size());
  for (const auto& o : model.observations()) {
    auto i = prior.domain().find(o.x);
    if (!i) return sample_gp_function(model, beta, prior.domain(), rng, prior.domain().size());
    idx.push_back(*i);
  }
  return sample_gp_function(model, beta, prior, idx, rng);
}

Vector sample_gp_function(const GpModel& model, double beta, const GridPrior& prior,
                          std::span<const std::size_t> observation_indices, RngStream& rng) {
  if (!(beta >= 0.0)) throw UsageError("beta must be nonnegative");
  if (!(model.hyper() == prior.hyper())) throw UsageError("GridPrior hyperparameters differ from model");
  if (observation_indices.size() != model.size())
    throw UsageError("one domain index per observation is required");
  const Matrix& pts = prior.domain().points();
  if (model.size() == 0) {
    if (beta == 0.0) return Vector::Zero(pts.rows());
    return beta * prior.sample_prior(rng);
  }
  const Matrix k_xt = kernel_matrix(pts, model.inputs(), model.hyper());
  const Vector mean = k_xt * model.alpha();
  if (beta == 0.0) return mean;

  Vector deviation = prior.sample_prior(rng);
  const auto t = static_cast<Eigen::Index>(observation_indices.size());
  const double noise_sd = std::sqrt(model.noise_variance());
  Vector r(t);
  for (Eigen::Index i = 0; i < t; ++i) {
    r(i) = deviation(static_cast<Eigen::Index>(observation_indices[static_cast<std::size_t>(i)])) +
           noise_sd * rng.normal();
  }
  deviation.noalias() -= k_xt * model.solve(r);
  return mean + beta * deviation;
}

KernelHyper fit_hyperparameters(std::span<const Observation> observations, double noise_variance,
                                std::span<const KernelHyper> grid) {
  if (grid.empty()) throw UsageError("hyperparameter grid is empty");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  bool any_finite = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    GpModel model(grid[i], noise_variance);
    model.add_observations(observations);
    const double value = model.log_marginal_likelihood();
    if (!std::isfinite(value)) continue;
    if (!any_finite || value > best_value) {
      best = i;
      best_value = value;
      any_finite = true;
    }
  }
  if (!any_finite) warn("fit_hyperparameters: no candidate has finite likelihood; using the first");
  return grid[best];
}

std::size_t argmax(const Vector& values) {
  if (values.size() == 0) throw UsageError("argmax of empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values(i) > values(best)) best = i;
  }
  return static_cast<std::size_t>(best);
}

}  // namespace fbo
