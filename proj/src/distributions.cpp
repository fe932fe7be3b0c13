#include "cdlab/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "cdlab/grid.hpp"

namespace cdlab {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)
constexpr double kMinEigenvalue = 1e-10;

}  // namespace

Gaussian::Gaussian(Vec2 mean, Sym2 cov) : mean_(mean), cov_(cov) {
  if (!is_finite(mean)) throw std::invalid_argument("Gaussian mean not finite");
  if (!(cov.min_eigenvalue() > kMinEigenvalue)) throw std::invalid_argument("covariance not positive definite");
  precision_ = cov_.inverse();
  log_norm_ = -kLog2Pi - 0.5 * std::log(cov_.det());
}

double Gaussian::log_density(const Vec2& x) const {
  const Vec2 d = x - mean_;
  return log_norm_ - 0.5 * dot(d, precision_ * d);
}

double Gaussian::entropy() const { return 1.0 + kLog2Pi + 0.5 * std::log(cov_.det()); }

Gaussian Gaussian::noised(double alpha) const {
  return Gaussian(std::sqrt(alpha) * mean_, alpha * cov_ + Sym2::identity(1.0 - alpha));
}

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<Gaussian> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
  if (weights_.size() != components_.size()) throw std::invalid_argument("mixture weight count mismatch");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixture weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
  log_weights_.reserve(weights_.size());
  for (double w : weights_) log_weights_.push_back(w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity());
}

double GaussianMixture::log_density(const Vec2& x) const {
  if (components_.size() == 1) return components_[0].log_density(x);
  double best = -std::numeric_limits<double>::infinity();
  double buf[16];
  std::vector<double> heap;
  double* terms = buf;
  if (components_.size() > 16) {
    heap.resize(components_.size());
    terms = heap.data();
  }
  for (std::size_t k = 0; k < components_.size(); ++k) {
    terms[k] = log_weights_[k] + components_[k].log_density(x);
    best = std::max(best, terms[k]);
  }
  if (!std::isfinite(best)) return best;
  double sum = 0.0;
  for (std::size_t k = 0; k < components_.size(); ++k) sum += std::exp(terms[k] - best);
  return best + std::log(sum);
}

double GaussianMixture::log_density_and_score(const Vec2& x, Vec2& score) const {
  if (components_.size() == 1) {
    score = components_[0].score(x);
    return components_[0].log_density(x);
  }
  double best = -std::numeric_limits<double>::infinity();
  double buf[16];
  std::vector<double> heap;
  double* terms = buf;
  if (components_.size() > 16) {
    heap.resize(components_.size());
    terms = heap.data();
  }
  for (std::size_t k = 0; k < components_.size(); ++k) {
    terms[k] = log_weights_[k] + components_[k].log_density(x);
    best = std::max(best, terms[k]);
  }
  double sum = 0.0;
  Vec2 acc;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const double r = std::exp(terms[k] - best);
    sum += r;
    acc += r * components_[k].score(x);
  }
  score = (1.0 / sum) * acc;
  return best + std::log(sum);
}

Vec2 GaussianMixture::score(const Vec2& x) const {
  Vec2 s;
  log_density_and_score(x, s);
  return s;
}

GaussianMixture GaussianMixture::noised(double alpha) const {
  std::vector<Gaussian> comps;
  comps.reserve(components_.size());
  for (const auto& c : components_) comps.push_back(c.noised(alpha));
  return GaussianMixture(weights_, std::move(comps));
}

Vec2 GaussianMixture::sample(RngStream& rng) const {
  if (components_.size() == 1) return components_[0].sample(rng);
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t k = 0;
  for (; k + 1 < weights_.size(); ++k) {
    cum += weights_[k];
    if (u < cum) break;
  }
  // skip trailing zero-weight components
  while (weights_[k] == 0.0 && k > 0) --k;
  return components_[k].sample(rng);
}

std::vector<Vec2> GaussianMixture::sample(std::size_t n, std::uint64_t seed) const {
  std::vector<Vec2> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(seed, i);
    out[i] = sample(rng);
  }
  return out;
}

Vec2 GaussianMixture::mean() const {
  Vec2 m;
  for (std::size_t k = 0; k < size(); ++k) m += weights_[k] * components_[k].mean();
  return m;
}

Sym2 GaussianMixture::covariance() const {
  const Vec2 m = mean();
  Sym2 c;
  for (std::size_t k = 0; k < size(); ++k) {
    const Vec2 d = components_[k].mean() - m;
    c += weights_[k] * (components_[k].cov() + Sym2{d.x * d.x, d.x * d.y, d.y * d.y});
  }
  return c;
}

Estimate entropy(const GaussianMixture& gm, std::size_t n, std::uint64_t seed) {
  if (gm.is_single()) return {gm.components()[0].entropy(), 0.0, 0};
  if (n < 2) throw std::invalid_argument("entropy estimate needs n >= 2");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(seed, i);
    const double v = -gm.log_density(gm.sample(rng));
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1));
  return {mean, std::sqrt(var / n), n};
}

double gaussian_kl(const Gaussian& p, const Gaussian& q) {
  const Sym2& q_prec = q.precision();
  const Vec2 d = q.mean() - p.mean();
  return 0.5 * (trace_product(q_prec, p.cov()) + dot(d, q_prec * d) - 2.0 + std::log(q.cov().det() / p.cov().det()));
}

double gaussian_kl(const GaussianMixture& p, const GaussianMixture& q) {
  if (!p.is_single() || !q.is_single()) throw std::invalid_argument("gaussian_kl needs single-component inputs");
  return gaussian_kl(p.components()[0], q.components()[0]);
}

Gaussian tilted_gaussian(const Gaussian& q, double lambda, const Vec2& a) {
  return Gaussian(q.mean() + lambda * (q.cov() * a), q.cov());
}

void require_simplex(std::span<const double> lambda, double tol) {
  if (lambda.empty()) throw std::invalid_argument("empty weight vector");
  double total = 0.0;
  for (double l : lambda) {
    if (!(l >= -tol) || !std::isfinite(l)) throw std::invalid_argument("weights must be nonnegative");
    total += l;
  }
  if (std::abs(total - 1.0) > tol) throw std::invalid_argument("weights must sum to 1");
}

Gaussian weighted_gaussian_product(std::span<const Gaussian> qs, std::span<const double> lambda) {
  if (qs.size() != lambda.size()) throw std::invalid_argument("one weight per Gaussian required");
  require_simplex(lambda);
  Sym2 prec;
  Vec2 eta;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    prec += lambda[i] * qs[i].precision();
    eta += lambda[i] * (qs[i].precision() * qs[i].mean());
  }
  const Sym2 cov = prec.inverse();
  return Gaussian(cov * eta, cov);
}

Reward Reward::linear(Vec2 a) {
  Reward r;
  r.kind_ = Kind::linear;
  r.a_ = a;
  return r;
}

Reward Reward::quadratic(Vec2 center, double scale) {
  Reward r;
  r.kind_ = Kind::quadratic;
  r.center_ = center;
  r.scale_ = scale;
  return r;
}

Reward Reward::tabulated(std::shared_ptr<const GridField> grid) {
  if (!grid) throw std::invalid_argument("tabulated reward needs a grid");
  Reward r;
  r.kind_ = Kind::tabulated;
  r.grid_ = std::move(grid);
  return r;
}

double Reward::operator()(const Vec2& x) const {
  switch (kind_) {
    case Kind::linear:
      return dot(a_, x);
    case Kind::quadratic:
      return -scale_ * squared_norm(x - center_);
    case Kind::tabulated:
      return grid_->interpolate(x);
  }
  return 0.0;
}

Vec2 Reward::gradient(const Vec2& x) const {
  switch (kind_) {
    case Kind::linear:
      return a_;
    case Kind::quadratic:
      return (-2.0 * scale_) * (x - center_);
    case Kind::tabulated:
      return grid_->interpolate_gradient(x);
  }
  return {};
}

}  // namespace cdlab
