#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cdlab/linalg.hpp"
#include "cdlab/rng.hpp"

namespace cdlab {

class GridField;

/// Monte-Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t n_samples = 0;
};

/// Bivariate normal with SPD covariance. Precision and log-normaliser are
/// cached at construction.
class Gaussian {
 public:
  Gaussian(Vec2 mean, Sym2 cov);

  static Gaussian standard() { return Gaussian({0.0, 0.0}, Sym2::identity()); }

  const Vec2& mean() const { return mean_; }
  const Sym2& cov() const { return cov_; }
  const Sym2& precision() const { return precision_; }

  double log_density(const Vec2& x) const;
  Vec2 score(const Vec2& x) const { return -(precision_ * (x - mean_)); }
  Vec2 sample(RngStream& rng) const { return mean_ + cov_.cholesky_apply(rng.normal2()); }
  double entropy() const;

  /// Law of sqrt(a) X + sqrt(1 - a) Z for X ~ this, Z ~ N(0, I).
  Gaussian noised(double alpha) const;

 private:
  Vec2 mean_;
  Sym2 cov_;
  Sym2 precision_;
  double log_norm_;
};

/// Weighted mixture of bivariate normals.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<Gaussian> components);
  explicit GaussianMixture(Gaussian single) : GaussianMixture({1.0}, {std::move(single)}) {}

  std::size_t size() const { return components_.size(); }
  bool is_single() const { return components_.size() == 1; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Gaussian>& components() const { return components_; }

  double log_density(const Vec2& x) const;
  Vec2 score(const Vec2& x) const;
  /// Both at once; the score reuses the responsibilities of the density.
  double log_density_and_score(const Vec2& x, Vec2& score) const;

  GaussianMixture noised(double alpha) const;

  Vec2 sample(RngStream& rng) const;
  /// n i.i.d. draws; draw i uses stream (seed, i).
  std::vector<Vec2> sample(std::size_t n, std::uint64_t seed) const;

  Vec2 mean() const;
  Sym2 covariance() const;

 private:
  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<Gaussian> components_;
};

/// Differential entropy: closed form for a single component, Monte Carlo
/// with n samples otherwise.
Estimate entropy(const GaussianMixture& gm, std::size_t n = 100000, std::uint64_t seed = 0);

/// Closed-form KL(p || q). Throws std::invalid_argument for mixtures.
double gaussian_kl(const GaussianMixture& p, const GaussianMixture& q);
double gaussian_kl(const Gaussian& p, const Gaussian& q);

/// Reward-weighted q * exp(lambda a^T x) / Z for Gaussian q: N(mu + lambda Sigma a, Sigma).
Gaussian tilted_gaussian(const Gaussian& q, double lambda, const Vec2& a);

/// Normalised prod_i q_i^{lambda_i} for Gaussian q_i and lambda on the simplex.
Gaussian weighted_gaussian_product(std::span<const Gaussian> qs, std::span<const double> lambda);

/// Throws std::invalid_argument unless lambda is nonnegative and sums to 1 within tol.
void require_simplex(std::span<const double> lambda, double tol = 1e-9);

/// Scalar reward r(x) with an analytic gradient.
class Reward {
 public:
  enum class Kind { linear, quadratic, tabulated };

  /// r(x) = a^T x.
  static Reward linear(Vec2 a);
  /// r(x) = -scale * |x - center|^2.
  static Reward quadratic(Vec2 center, double scale);
  /// Bilinear interpolation of grid values; constant extension outside the grid.
  static Reward tabulated(std::shared_ptr<const GridField> grid);

  Kind kind() const { return kind_; }
  const Vec2& direction() const { return a_; }

  double operator()(const Vec2& x) const;
  Vec2 gradient(const Vec2& x) const;

 private:
  Kind kind_ = Kind::linear;
  Vec2 a_;
  Vec2 center_;
  double scale_ = 0.0;
  std::shared_ptr<const GridField> grid_;
};

}  // namespace cdlab
