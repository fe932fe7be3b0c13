#pragma once

#include <vector>

namespace cdlab {

/// Cumulative signal-retention coefficients alpha_0 = 1 > alpha_1 > ... > alpha_T > 0.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> alphas);

  /// alpha_t = alpha_T^(t/T): geometric decay from 1 to `alpha_final`.
  static NoiseSchedule geometric(int steps, double alpha_final = 0.01);
  /// alpha_t linear in t from 1 to `alpha_final`.
  static NoiseSchedule linear(int steps, double alpha_final = 0.01);

  int steps() const { return static_cast<int>(alphas_.size()) - 1; }
  double alpha(int t) const;
  const std::vector<double>& alphas() const { return alphas_; }

 private:
  std::vector<double> alphas_;
};

/// Per-step reverse-process standard deviations sigma_1..sigma_T.
class VarianceSchedule {
 public:
  VarianceSchedule(const NoiseSchedule& noise, std::vector<double> sigmas);

  /// sigma_t = eta * sqrt((1 - a_{t-1}) / (1 - a_t)) * sqrt(1 - a_t / a_{t-1}).
  /// eta = 1 is the fully stochastic (DDPM-like) member of the family, eta = 0 is deterministic.
  static VarianceSchedule ddim(const NoiseSchedule& noise, double eta);

  int steps() const { return static_cast<int>(sigmas_.size()); }
  double sigma(int t) const;
  const std::vector<double>& sigmas() const { return sigmas_; }

 private:
  std::vector<double> sigmas_;
};

/// Scalar forms of the per-step constants; the schedule-level functions below
/// validate their inputs and forward here.
double gamma_coefficient(double alpha_prev, double alpha_cur, double sigma);
double pointwise_coefficient(double alpha_prev, double alpha_cur);

/// gamma_t = sqrt(a_{t-1}/a_t)(1 - a_t) - sqrt((1 - a_{t-1} - sigma_t^2)(1 - a_t)), the
/// coefficient of the score in one reverse step.
double gamma(const NoiseSchedule& noise, const VarianceSchedule& var, int t);

/// gamma_t^2 / (2 sigma_t^2): per-step weight of the path-wise KL.
/// Throws DeterministicStepError when sigma_t = 0.
double pathwise_weight(const NoiseSchedule& noise, const VarianceSchedule& var, int t);

/// (a_{t-1} - a_t) / (2 a_t^2): forward-difference discretisation of
/// a'(tau) / (2 a(tau)^2), the point-wise KL weight on the score of the
/// rescaled variable x / sqrt(a_t).
double pointwise_weight(const NoiseSchedule& noise, int t);

/// Noise and variance schedules with the per-step constants precomputed.
/// Immutable after construction.
class Schedule {
 public:
  Schedule(NoiseSchedule noise, VarianceSchedule var);

  static Schedule geometric(int steps, double alpha_final = 0.01, double eta = 1.0);

  int steps() const { return noise_.steps(); }
  const NoiseSchedule& noise() const { return noise_; }
  const VarianceSchedule& variance() const { return var_; }

  double alpha(int t) const { return noise_.alphas()[static_cast<std::size_t>(t)]; }
  double sqrt_alpha(int t) const { return sqrt_alpha_[static_cast<std::size_t>(t)]; }
  double sqrt_one_minus_alpha(int t) const { return sqrt_one_minus_alpha_[static_cast<std::size_t>(t)]; }
  double sigma(int t) const { return var_.sigmas()[static_cast<std::size_t>(t - 1)]; }
  double gamma(int t) const { return gamma_[static_cast<std::size_t>(t - 1)]; }
  /// sqrt(a_{t-1} / a_t), the state coefficient of one reverse step.
  double state_coef(int t) const { return state_coef_[static_cast<std::size_t>(t - 1)]; }
  double pointwise_weight(int t) const { return pointwise_[static_cast<std::size_t>(t - 1)]; }

 private:
  NoiseSchedule noise_;
  VarianceSchedule var_;
  std::vector<double> sqrt_alpha_;
  std::vector<double> sqrt_one_minus_alpha_;
  std::vector<double> gamma_;
  std::vector<double> state_coef_;
  std::vector<double> pointwise_;
};

}  // namespace cdlab
