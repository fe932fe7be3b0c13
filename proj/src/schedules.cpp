#include "cdlab/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cdlab/error.hpp"

namespace cdlab {

namespace {

void check_step(int t, int steps) {
  if (t < 1 || t > steps) {
    throw std::out_of_range("time index " + std::to_string(t) + " outside 1.." + std::to_string(steps));
  }
}

// Rounding slack for sigma_t^2 <= 1 - a_{t-1}.
constexpr double kRadicandTol = 1e-12;

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
  if (alphas_.size() < 2) throw std::invalid_argument("noise schedule needs at least one step");
  if (alphas_.front() != 1.0) throw std::invalid_argument("noise schedule must start at alpha_0 = 1");
  for (std::size_t t = 1; t < alphas_.size(); ++t) {
    if (!(alphas_[t] > 0.0 && alphas_[t] <= 1.0)) {
      throw std::invalid_argument("alpha_" + std::to_string(t) + " outside (0, 1]");
    }
    if (!(alphas_[t] < alphas_[t - 1])) {
      throw std::invalid_argument("noise schedule not strictly decreasing at t=" + std::to_string(t));
    }
  }
}

NoiseSchedule NoiseSchedule::geometric(int steps, double alpha_final) {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(alpha_final > 0.0 && alpha_final < 1.0)) throw std::invalid_argument("alpha_final outside (0, 1)");
  std::vector<double> a(static_cast<std::size_t>(steps) + 1);
  a[0] = 1.0;
  for (int t = 1; t <= steps; ++t) a[static_cast<std::size_t>(t)] = std::pow(alpha_final, double(t) / steps);
  return NoiseSchedule(std::move(a));
}

NoiseSchedule NoiseSchedule::linear(int steps, double alpha_final) {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(alpha_final > 0.0 && alpha_final < 1.0)) throw std::invalid_argument("alpha_final outside (0, 1)");
  std::vector<double> a(static_cast<std::size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) a[static_cast<std::size_t>(t)] = 1.0 - (1.0 - alpha_final) * t / steps;
  return NoiseSchedule(std::move(a));
}

double NoiseSchedule::alpha(int t) const {
  if (t < 0 || t > steps()) throw std::out_of_range("time index " + std::to_string(t) + " outside schedule");
  return alphas_[static_cast<std::size_t>(t)];
}

VarianceSchedule::VarianceSchedule(const NoiseSchedule& noise, std::vector<double> sigmas)
    : sigmas_(std::move(sigmas)) {
  if (static_cast<int>(sigmas_.size()) != noise.steps()) {
    throw std::invalid_argument("variance schedule length differs from noise schedule");
  }
  for (int t = 1; t <= noise.steps(); ++t) {
    const double s = sigmas_[static_cast<std::size_t>(t - 1)];
    if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("sigma_" + std::to_string(t) + " invalid");
    if (s * s > 1.0 - noise.alpha(t - 1) + kRadicandTol) {
      throw std::invalid_argument("sigma_" + std::to_string(t) + "^2 exceeds 1 - alpha_" + std::to_string(t - 1));
    }
  }
}

VarianceSchedule VarianceSchedule::ddim(const NoiseSchedule& noise, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta_ddim outside [0, 1]");
  std::vector<double> s(static_cast<std::size_t>(noise.steps()));
  for (int t = 1; t <= noise.steps(); ++t) {
    const double prev = noise.alpha(t - 1);
    const double cur = noise.alpha(t);
    s[static_cast<std::size_t>(t - 1)] = eta * std::sqrt((1.0 - prev) / (1.0 - cur)) * std::sqrt(1.0 - cur / prev);
  }
  return VarianceSchedule(noise, std::move(s));
}

double VarianceSchedule::sigma(int t) const {
  check_step(t, steps());
  return sigmas_[static_cast<std::size_t>(t - 1)];
}

double gamma_coefficient(double alpha_prev, double alpha_cur, double sigma) {
  const double radicand = std::max(0.0, 1.0 - alpha_prev - sigma * sigma);
  return std::sqrt(alpha_prev / alpha_cur) * (1.0 - alpha_cur) - std::sqrt(radicand * (1.0 - alpha_cur));
}

double pointwise_coefficient(double alpha_prev, double alpha_cur) {
  return (alpha_prev - alpha_cur) / (2.0 * alpha_cur * alpha_cur);
}

double gamma(const NoiseSchedule& noise, const VarianceSchedule& var, int t) {
  if (noise.steps() != var.steps()) throw std::invalid_argument("schedules differ in length");
  check_step(t, noise.steps());
  return gamma_coefficient(noise.alpha(t - 1), noise.alpha(t), var.sigma(t));
}

double pathwise_weight(const NoiseSchedule& noise, const VarianceSchedule& var, int t) {
  const double g = gamma(noise, var, t);
  const double s = var.sigma(t);
  if (s == 0.0) {
    throw DeterministicStepError("path-wise KL undefined at deterministic step t=" + std::to_string(t));
  }
  return g * g / (2.0 * s * s);
}

double pointwise_weight(const NoiseSchedule& noise, int t) {
  check_step(t, noise.steps());
  return pointwise_coefficient(noise.alpha(t - 1), noise.alpha(t));
}

Schedule::Schedule(NoiseSchedule noise, VarianceSchedule var) : noise_(std::move(noise)), var_(std::move(var)) {
  if (noise_.steps() != var_.steps()) throw std::invalid_argument("schedules differ in length");
  const int steps = noise_.steps();
  for (int t = 0; t <= steps; ++t) {
    sqrt_alpha_.push_back(std::sqrt(noise_.alpha(t)));
    sqrt_one_minus_alpha_.push_back(std::sqrt(1.0 - noise_.alpha(t)));
  }
  for (int t = 1; t <= steps; ++t) {
    gamma_.push_back(cdlab::gamma(noise_, var_, t));
    state_coef_.push_back(std::sqrt(noise_.alpha(t - 1) / noise_.alpha(t)));
    pointwise_.push_back(cdlab::pointwise_weight(noise_, t));
  }
}

Schedule Schedule::geometric(int steps, double alpha_final, double eta) {
  auto noise = NoiseSchedule::geometric(steps, alpha_final);
  auto var = VarianceSchedule::ddim(noise, eta);
  return Schedule(std::move(noise), std::move(var));
}

}  // namespace cdlab
