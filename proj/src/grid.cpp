#include "cdlab/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cdlab/error.hpp"

namespace cdlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> log_values(const GridField& f) {
  std::vector<double> out(f.values().size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = f.values()[c] > 0.0 ? std::log(f.values()[c]) : kNegInf;
  return out;
}

// Normalises a log-field in place to a density; returns log of the Riemann-sum normaliser.
double normalize_log_field(std::vector<double>& lp, double cell_area) {
  double best = kNegInf;
  for (double v : lp) best = std::max(best, v);
  if (!std::isfinite(best)) throw InfeasibleError("product density vanishes on the whole grid (disjoint supports)");
  double sum = 0.0;
  for (double v : lp) sum += std::exp(v - best);
  const double log_z = best + std::log(sum * cell_area);
  for (double& v : lp) v = std::exp(v - log_z);
  return log_z;
}

double kl_from_logs(const std::vector<double>& p, const std::vector<double>& log_q, double cell_area) {
  double acc = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] <= 0.0) continue;
    if (log_q[c] == kNegInf) return std::numeric_limits<double>::infinity();
    acc += p[c] * (std::log(p[c]) - log_q[c]);
  }
  return acc * cell_area;
}

}  // namespace

GridField::GridField(Bounds bounds, int nx, int ny, std::vector<double> values)
    : bounds_(bounds), nx_(nx), ny_(ny), values_(std::move(values)) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("grid needs at least 2x2 cells");
  if (!(bounds.x_max > bounds.x_min && bounds.y_max > bounds.y_min)) throw std::invalid_argument("empty grid bounds");
  if (values_.size() != static_cast<std::size_t>(nx) * ny) throw std::invalid_argument("grid value count mismatch");
  for (double v : values_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("grid values must be finite and nonnegative");
  }
  dx_ = (bounds.x_max - bounds.x_min) / nx;
  dy_ = (bounds.y_max - bounds.y_min) / ny;
}

GridField GridField::from_density(const std::function<double(const Vec2&)>& density, Bounds bounds, int nx,
                                  int ny) {
  std::vector<double> v(static_cast<std::size_t>(nx) * ny);
  const double dx = (bounds.x_max - bounds.x_min) / nx;
  const double dy = (bounds.y_max - bounds.y_min) / ny;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      v[static_cast<std::size_t>(iy) * nx + ix] = density({bounds.x_min + (ix + 0.5) * dx, bounds.y_min + (iy + 0.5) * dy});
    }
  }
  return GridField(bounds, nx, ny, std::move(v)).normalized();
}

GridField GridField::from_mixture(const GaussianMixture& gm, Bounds bounds, int nx, int ny) {
  return from_density([&gm](const Vec2& x) { return std::exp(gm.log_density(x)); }, bounds, nx, ny);
}

Vec2 GridField::cell_center(int ix, int iy) const {
  return {bounds_.x_min + (ix + 0.5) * dx_, bounds_.y_min + (iy + 0.5) * dy_};
}

double GridField::mass() const {
  double s = 0.0;
  for (double v : values_) s += v;
  return s * cell_area();
}

GridField GridField::normalized() const {
  const double m = mass();
  if (!(m > 0.0)) throw InfeasibleError("grid field has zero mass");
  std::vector<double> v = values_;
  for (double& x : v) x /= m;
  return GridField(bounds_, nx_, ny_, std::move(v));
}

bool GridField::same_grid(const GridField& other) const {
  return bounds_ == other.bounds_ && nx_ == other.nx_ && ny_ == other.ny_;
}

Vec2 GridField::mean() const {
  Vec2 m;
  double total = 0.0;
  for (int iy = 0; iy < ny_; ++iy) {
    for (int ix = 0; ix < nx_; ++ix) {
      const double w = at(ix, iy);
      m += w * cell_center(ix, iy);
      total += w;
    }
  }
  return (1.0 / total) * m;
}

Sym2 GridField::covariance() const {
  const Vec2 m = mean();
  Sym2 c;
  double total = 0.0;
  for (int iy = 0; iy < ny_; ++iy) {
    for (int ix = 0; ix < nx_; ++ix) {
      const double w = at(ix, iy);
      const Vec2 d = cell_center(ix, iy) - m;
      c += w * Sym2{d.x * d.x, d.x * d.y, d.y * d.y};
      total += w;
    }
  }
  return (1.0 / total) * c;
}

namespace {

struct Bilinear {
  int ix0, iy0, ix1, iy1;
  double fx, fy;
  bool clamped_x, clamped_y;
};

Bilinear locate(const GridField& g, const Vec2& x) {
  Bilinear b{};
  const double gx = (x.x - g.bounds().x_min) / g.dx() - 0.5;
  const double gy = (x.y - g.bounds().y_min) / g.dy() - 0.5;
  auto axis = [](double u, int n, int& i0, int& i1, double& f, bool& clamped) {
    clamped = false;
    if (u <= 0.0) {
      i0 = i1 = 0;
      f = 0.0;
      clamped = true;
    } else if (u >= n - 1) {
      i0 = i1 = n - 1;
      f = 0.0;
      clamped = true;
    } else {
      i0 = static_cast<int>(std::floor(u));
      i1 = i0 + 1;
      f = u - i0;
    }
  };
  axis(gx, g.nx(), b.ix0, b.ix1, b.fx, b.clamped_x);
  axis(gy, g.ny(), b.iy0, b.iy1, b.fy, b.clamped_y);
  return b;
}

}  // namespace

double GridField::interpolate(const Vec2& x) const {
  const Bilinear b = locate(*this, x);
  const double v00 = at(b.ix0, b.iy0), v10 = at(b.ix1, b.iy0);
  const double v01 = at(b.ix0, b.iy1), v11 = at(b.ix1, b.iy1);
  return (1 - b.fy) * ((1 - b.fx) * v00 + b.fx * v10) + b.fy * ((1 - b.fx) * v01 + b.fx * v11);
}

Vec2 GridField::interpolate_gradient(const Vec2& x) const {
  const Bilinear b = locate(*this, x);
  const double v00 = at(b.ix0, b.iy0), v10 = at(b.ix1, b.iy0);
  const double v01 = at(b.ix0, b.iy1), v11 = at(b.ix1, b.iy1);
  const double gx = b.clamped_x ? 0.0 : ((1 - b.fy) * (v10 - v00) + b.fy * (v11 - v01)) / dx_;
  const double gy = b.clamped_y ? 0.0 : ((1 - b.fx) * (v01 - v00) + b.fx * (v11 - v10)) / dy_;
  return {gx, gy};
}

Bounds auto_bounds(std::span<const GaussianMixture> models, double radius) {
  if (models.empty()) throw std::invalid_argument("auto_bounds needs at least one model");
  Bounds b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
           std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& gm : models) {
    for (const auto& c : gm.components()) {
      const double sx = radius * std::sqrt(c.cov().xx);
      const double sy = radius * std::sqrt(c.cov().yy);
      b.x_min = std::min(b.x_min, c.mean().x - sx);
      b.x_max = std::max(b.x_max, c.mean().x + sx);
      b.y_min = std::min(b.y_min, c.mean().y - sy);
      b.y_max = std::max(b.y_max, c.mean().y + sy);
    }
  }
  return b;
}

GridProduct grid_product(std::span<const GridField> fields, std::span<const double> lambda) {
  if (fields.empty()) throw std::invalid_argument("grid_product needs at least one field");
  if (fields.size() != lambda.size()) throw std::invalid_argument("one weight per field required");
  require_simplex(lambda);
  for (const auto& f : fields) {
    if (!f.same_grid(fields[0])) throw std::invalid_argument("grid_product fields must share a grid");
  }
  const std::size_t cells = fields[0].values().size();
  std::vector<double> lp(cells, 0.0);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (lambda[i] == 0.0) continue;
    const auto& v = fields[i].values();
    for (std::size_t c = 0; c < cells; ++c) lp[c] += v[c] > 0.0 ? lambda[i] * std::log(v[c]) : kNegInf;
  }
  const double log_z = normalize_log_field(lp, fields[0].cell_area());
  const auto& f0 = fields[0];
  return {GridField(f0.bounds(), f0.nx(), f0.ny(), std::move(lp)), log_z};
}

GridProduct grid_tilt(const GridField& field, std::span<const Reward> rewards, std::span<const double> lambda) {
  if (rewards.size() != lambda.size()) throw std::invalid_argument("one multiplier per reward required");
  std::vector<double> lp(field.values().size());
  for (int iy = 0; iy < field.ny(); ++iy) {
    for (int ix = 0; ix < field.nx(); ++ix) {
      const std::size_t c = static_cast<std::size_t>(iy) * field.nx() + ix;
      const double v = field.values()[c];
      if (v <= 0.0) {
        lp[c] = kNegInf;
        continue;
      }
      double r = 0.0;
      const Vec2 x = field.cell_center(ix, iy);
      for (std::size_t i = 0; i < rewards.size(); ++i) r += lambda[i] * rewards[i](x);
      lp[c] = std::log(v) + r;
    }
  }
  const double log_z = normalize_log_field(lp, field.cell_area());
  return {GridField(field.bounds(), field.nx(), field.ny(), std::move(lp)), log_z};
}

double grid_kl(const GridField& p, const GridField& q) {
  if (!p.same_grid(q)) throw std::invalid_argument("grid_kl fields must share a grid");
  return kl_from_logs(p.values(), log_values(q), p.cell_area());
}

namespace {

class MinimaxObjective {
 public:
  explicit MinimaxObjective(std::span<const GridField> fields) : cell_area_(fields[0].cell_area()) {
    for (const auto& f : fields) logs_.push_back(log_values(f));
    lp_.resize(logs_[0].size());
  }

  // Returns max KL and fills per-field KLs; +inf if the product is empty.
  double operator()(const std::vector<double>& lambda, std::vector<double>& kls) {
    std::fill(lp_.begin(), lp_.end(), 0.0);
    for (std::size_t i = 0; i < logs_.size(); ++i) {
      if (lambda[i] == 0.0) continue;
      for (std::size_t c = 0; c < lp_.size(); ++c) lp_[c] += lambda[i] * logs_[i][c];
    }
    try {
      normalize_log_field(lp_, cell_area_);
    } catch (const InfeasibleError&) {
      kls.assign(logs_.size(), std::numeric_limits<double>::infinity());
      return std::numeric_limits<double>::infinity();
    }
    double worst = 0.0;
    kls.resize(logs_.size());
    for (std::size_t i = 0; i < logs_.size(); ++i) {
      kls[i] = kl_from_logs(lp_, logs_[i], cell_area_);
      worst = std::max(worst, kls[i]);
    }
    return worst;
  }

 private:
  double cell_area_;
  std::vector<std::vector<double>> logs_;
  std::vector<double> lp_;
};

double distance_to_uniform(const std::vector<double>& lambda) {
  const double u = 1.0 / lambda.size();
  double d = 0.0;
  for (double l : lambda) d += (l - u) * (l - u);
  return d;
}

// All nonnegative integer vectors of length m summing to total.
void compositions(int m, int total, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == m - 1) {
    cur.push_back(total);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (int k = 0; k <= total; ++k) {
    cur.push_back(k);
    compositions(m, total - k, cur, out);
    cur.pop_back();
  }
}

// Integer offsets in {-2..2}^m summing to zero.
std::vector<std::vector<int>> local_moves(int m) {
  std::vector<std::vector<int>> out;
  std::vector<int> d(static_cast<std::size_t>(m), -2);
  while (true) {
    int s = 0;
    for (int v : d) s += v;
    bool zero = true;
    for (int v : d) zero = zero && v == 0;
    if (s == 0 && !zero) out.push_back(d);
    int i = 0;
    while (i < m && d[static_cast<std::size_t>(i)] == 2) d[static_cast<std::size_t>(i++)] = -2;
    if (i == m) break;
    ++d[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace

MinimaxResult grid_minimax_lambda(std::span<const GridField> fields, MinimaxOptions options) {
  const int m = static_cast<int>(fields.size());
  if (m < 1 || m > 4) throw std::invalid_argument("grid_minimax_lambda supports 1 to 4 fields");
  for (const auto& f : fields) {
    if (!f.same_grid(fields[0])) throw std::invalid_argument("fields must share a grid");
  }
  const double step = options.step > 0.0 ? options.step : (m == 2 ? 0.02 : 0.05);
  const int divisions = std::max(1, static_cast<int>(std::lround(1.0 / step)));

  MinimaxObjective objective(fields);
  MinimaxResult best{std::vector<double>(static_cast<std::size_t>(m), 1.0 / m),
                     std::numeric_limits<double>::infinity(), {}};
  std::vector<double> kls;

  auto consider = [&](const std::vector<double>& lambda) {
    const double v = objective(lambda, kls);
    const double tol = 1e-12 * std::max(1.0, std::abs(best.max_kl));
    const bool better = v < best.max_kl - tol ||
                        (std::abs(v - best.max_kl) <= tol && distance_to_uniform(lambda) < distance_to_uniform(best.lambda));
    if (better || !std::isfinite(best.max_kl)) {
      if (std::isfinite(v) || !std::isfinite(best.max_kl)) {
        best.lambda = lambda;
        best.max_kl = v;
        best.kls = kls;
      }
    }
  };

  consider(best.lambda);
  std::vector<std::vector<int>> lattice;
  std::vector<int> cur;
  compositions(m, divisions, cur, lattice);
  std::vector<double> lambda(static_cast<std::size_t>(m));
  for (const auto& k : lattice) {
    for (int i = 0; i < m; ++i) lambda[static_cast<std::size_t>(i)] = double(k[static_cast<std::size_t>(i)]) / divisions;
    consider(lambda);
  }
  if (!std::isfinite(best.max_kl)) throw InfeasibleError("product empty for every lambda (disjoint supports)");

  const auto moves = local_moves(m);
  for (double h = 0.5 / divisions; m > 1 && h >= options.refine_to * 0.999; h *= 0.5) {
    for (int sweep = 0; sweep < 64; ++sweep) {
      const std::vector<double> center = best.lambda;
      for (const auto& d : moves) {
        bool ok = true;
        for (int i = 0; i < m && ok; ++i) {
          lambda[static_cast<std::size_t>(i)] = center[static_cast<std::size_t>(i)] + h * d[static_cast<std::size_t>(i)];
          ok = lambda[static_cast<std::size_t>(i)] >= -1e-15;
        }
        if (!ok) continue;
        for (double& l : lambda) l = std::max(0.0, l);
        consider(lambda);
      }
      if (best.lambda == center) break;
    }
  }
  return best;
}

}  // namespace cdlab
