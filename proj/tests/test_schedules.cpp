#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>

#include "cdlab/error.hpp"
#include "cdlab/schedules.hpp"
#include "doctest.h"

using namespace cdlab;
using big = boost::multiprecision::cpp_dec_float_50;

namespace {

big big_alpha_geometric(int t, int T, double final_alpha) {
  return boost::multiprecision::pow(big(final_alpha), big(t) / big(T));
}

big big_sigma(const big& prev, const big& cur, double eta) {
  using boost::multiprecision::sqrt;
  return big(eta) * sqrt((1 - prev) / (1 - cur)) * sqrt(1 - cur / prev);
}

big big_gamma(const big& prev, const big& cur, const big& sigma) {
  using boost::multiprecision::sqrt;
  return sqrt(prev / cur) * (1 - cur) - sqrt((1 - prev - sigma * sigma) * (1 - cur));
}

double rel(double a, const big& b) { return std::abs(a - b.convert_to<double>()) / std::abs(b.convert_to<double>()); }

}  // namespace

TEST_CASE("geometric schedule endpoints and monotonicity") {
  const auto n = NoiseSchedule::geometric(200);
  CHECK(n.steps() == 200);
  CHECK(n.alpha(0) == 1.0);
  CHECK(n.alpha(200) == doctest::Approx(0.01).epsilon(1e-14));
  for (int t = 1; t <= 200; ++t) {
    CHECK(n.alpha(t) < n.alpha(t - 1));
    CHECK(rel(n.alpha(t), big_alpha_geometric(t, 200, 0.01)) < 1e-14);
  }
}

TEST_CASE("linear schedule") {
  const auto n = NoiseSchedule::linear(10, 0.1);
  CHECK(n.alpha(0) == 1.0);
  CHECK(n.alpha(5) == doctest::Approx(0.55));
  CHECK(n.alpha(10) == doctest::Approx(0.1));
}

TEST_CASE("invalid noise schedules are rejected") {
  CHECK_THROWS_AS(NoiseSchedule({1.0}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5, 0.6}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule({1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::geometric(0), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::geometric(10, 1.5), std::invalid_argument);
}

TEST_CASE("DDIM variance, gamma and weights agree with a 50-digit oracle") {
  const int T = 50;
  for (double eta : {0.3, 1.0}) {
    const auto noise = NoiseSchedule::geometric(T);
    const auto var = VarianceSchedule::ddim(noise, eta);
    CHECK(var.sigma(1) == 0.0);
    for (int t = 1; t <= T; ++t) {
      const big prev = t == 1 ? big(1) : big_alpha_geometric(t - 1, T, 0.01);
      const big cur = big_alpha_geometric(t, T, 0.01);
      const big s = big_sigma(prev, cur, eta);
      const big g = big_gamma(prev, cur, s);
      if (t > 1) {
        CHECK(rel(var.sigma(t), s) < 1e-12);
        const big w = g * g / (2 * s * s);
        CHECK(rel(pathwise_weight(noise, var, t), w) < 1e-9);
      }
      CHECK(rel(gamma(noise, var, t), g) < 1e-10);
      CHECK(rel(pointwise_weight(noise, t), (prev - cur) / (2 * cur * cur)) < 1e-12);
    }
  }
}

TEST_CASE("one reverse step with the exact score keeps the marginal variance of a point mass") {
  // Data at 0: x_t ~ N(0, 1 - a_t), score -x / (1 - a_t).
  const Schedule s(NoiseSchedule::geometric(40), VarianceSchedule::ddim(NoiseSchedule::geometric(40), 0.7));
  for (int t = 1; t <= 40; ++t) {
    const double v = 1.0 - s.alpha(t);
    const double coef = s.state_coef(t) - s.gamma(t) / v;
    CHECK(coef * coef * v + s.sigma(t) * s.sigma(t) == doctest::Approx(1.0 - s.alpha(t - 1)).epsilon(1e-12));
  }
}

TEST_CASE("deterministic steps have no path-wise weight") {
  const auto noise = NoiseSchedule::geometric(10);
  const auto var = VarianceSchedule::ddim(noise, 0.0);
  CHECK_THROWS_AS(pathwise_weight(noise, var, 5), DeterministicStepError);
  const auto var1 = VarianceSchedule::ddim(noise, 1.0);
  CHECK_THROWS_AS(pathwise_weight(noise, var1, 1), DeterministicStepError);
}

TEST_CASE("variance schedules are validated") {
  const auto noise = NoiseSchedule({1.0, 0.5, 0.25});
  CHECK_THROWS_AS(VarianceSchedule(noise, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(VarianceSchedule(noise, {0.0, -0.1}), std::invalid_argument);
  CHECK_THROWS_AS(VarianceSchedule(noise, {0.0, 0.8}), std::invalid_argument);  // 0.64 > 1 - 0.5
  CHECK_NOTHROW(VarianceSchedule(noise, {0.0, std::sqrt(0.5)}));
  CHECK_THROWS_AS(VarianceSchedule::ddim(noise, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(noise.alpha(3), std::out_of_range);
  CHECK_THROWS_AS(pointwise_weight(noise, 0), std::out_of_range);
}

TEST_CASE("Schedule caches the per-step constants") {
  const auto s = Schedule::geometric(30);
  for (int t = 1; t <= 30; ++t) {
    CHECK(s.gamma(t) == gamma(s.noise(), s.variance(), t));
    CHECK(s.pointwise_weight(t) == pointwise_weight(s.noise(), t));
    CHECK(s.state_coef(t) == doctest::Approx(std::sqrt(s.alpha(t - 1) / s.alpha(t))));
    CHECK(s.sqrt_alpha(t) * s.sqrt_alpha(t) == doctest::Approx(s.alpha(t)));
  }
}
