#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cdlab/distributions.hpp"
#include "cdlab/linalg.hpp"

namespace cdlab {

struct Bounds {
  double x_min = -1.0;
  double x_max = 1.0;
  double y_min = -1.0;
  double y_max = 1.0;

  bool operator==(const Bounds&) const = default;
};

/// Density tabulated at the cell centres of a regular nx-by-ny grid.
/// Values are stored row-major (index = iy * nx + ix).
class GridField {
 public:
  GridField(Bounds bounds, int nx, int ny, std::vector<double> values);

  /// Tabulate `density` and normalise so the Riemann sum is 1.
  static GridField from_density(const std::function<double(const Vec2&)>& density, Bounds bounds, int nx,
                                int ny);
  static GridField from_mixture(const GaussianMixture& gm, Bounds bounds, int nx = 256, int ny = 256);

  const Bounds& bounds() const { return bounds_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double dx() const { return dx_; }
  double dy() const { return dy_; }
  double cell_area() const { return dx_ * dy_; }
  const std::vector<double>& values() const { return values_; }
  Vec2 cell_center(int ix, int iy) const;
  double at(int ix, int iy) const { return values_[static_cast<std::size_t>(iy) * nx_ + ix]; }

  double mass() const;
  /// Copy rescaled to unit mass; throws InfeasibleError on zero mass.
  GridField normalized() const;
  bool same_grid(const GridField& other) const;

  Vec2 mean() const;
  Sym2 covariance() const;

  /// Bilinear interpolation (clamped at the boundary) and its gradient.
  double interpolate(const Vec2& x) const;
  Vec2 interpolate_gradient(const Vec2& x) const;

 private:
  Bounds bounds_;
  int nx_;
  int ny_;
  double dx_;
  double dy_;
  std::vector<double> values_;
};

/// Rectangle covering mean +/- `radius` standard deviations of every component.
Bounds auto_bounds(std::span<const GaussianMixture> models, double radius = 5.0);

/// Normalised field plus log of the normaliser of the unnormalised product.
struct GridProduct {
  GridField field;
  double log_normalizer;
};

/// prod_i f_i^{lambda_i}, normalised (AND composition). lambda must be on the simplex.
/// Throws InfeasibleError if the product vanishes everywhere.
GridProduct grid_product(std::span<const GridField> fields, std::span<const double> lambda);

/// f * exp(sum_i lambda_i r_i), normalised (reward tilt).
GridProduct grid_tilt(const GridField& field, std::span<const Reward> rewards, std::span<const double> lambda);

/// Riemann-sum KL(p || q); +infinity if p has mass where q vanishes.
double grid_kl(const GridField& p, const GridField& q);

struct MinimaxOptions {
  /// Coarse lattice step; <= 0 selects 0.02 for m = 2 and 0.05 otherwise.
  double step = 0.0;
  /// Successive halving of a local lattice around the best point until the step
  /// falls below this value. Set >= step to disable refinement.
  double refine_to = 1e-3;
};

struct MinimaxResult {
  std::vector<double> lambda;
  double max_kl;
  std::vector<double> kls;
};

/// Brute-force minimiser of max_i KL(product(lambda) || f_i) over the simplex.
/// Ties within 1e-12 are broken toward the uniform vector. m <= 4.
MinimaxResult grid_minimax_lambda(std::span<const GridField> fields, MinimaxOptions options = {});

}  // namespace cdlab
