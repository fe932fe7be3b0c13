#include <cmath>

#include "cdlab/diffusion.hpp"
#include "cdlab/error.hpp"
#include "cdlab/score_field.hpp"
#include "doctest.h"

using namespace cdlab;

namespace {

// Exact variance of x_0 when the sampler runs on N(0, I) with its true score
// -x: x_{t-1} = (c_t - g_t) x_t + s_t eps is linear, so the variance follows a
// scalar recursion from v_T = 1.
double linear_sampler_variance(const std::vector<double>& a, double eta) {
  double v = 1.0;
  for (std::size_t t = a.size() - 1; t >= 1; --t) {
    const double s2 = eta * eta * (1 - a[t - 1]) / (1 - a[t]) * (1 - a[t] / a[t - 1]);
    const double g = std::sqrt(a[t - 1] / a[t]) * (1 - a[t]) - std::sqrt((1 - a[t - 1] - s2) * (1 - a[t]));
    const double k = std::sqrt(a[t - 1] / a[t]) - g;
    v = k * k * v + s2;
  }
  return v;
}

}  // namespace

TEST_CASE("forward noising and one reverse step follow their formulas") {
  const Schedule s = Schedule::geometric(10);
  const Vec2 x0{1.0, -2.0}, eps{0.3, 0.7};
  const Vec2 xt = forward_noise(x0, 4, s, eps);
  const double a = std::pow(0.01, 0.4);
  CHECK(xt.x == doctest::Approx(std::sqrt(a) * 1.0 + std::sqrt(1 - a) * 0.3));
  CHECK(xt.y == doctest::Approx(std::sqrt(a) * -2.0 + std::sqrt(1 - a) * 0.7));

  const Vec2 score{-0.5, 0.25};
  const Vec2 prev = ddim_step(xt, 4, score, s, eps);
  const double ap = std::pow(0.01, 0.3);
  const double sig = std::sqrt((1 - ap) / (1 - a)) * std::sqrt(1 - a / ap);
  const double g = std::sqrt(ap / a) * (1 - a) - std::sqrt((1 - ap - sig * sig) * (1 - a));
  CHECK(prev.x == doctest::Approx(std::sqrt(ap / a) * xt.x + g * score.x + sig * eps.x));
  CHECK(prev.y == doctest::Approx(std::sqrt(ap / a) * xt.y + g * score.y + sig * eps.y));

  RngStream r1(3, 1), r2(3, 1);
  const Vec2 noised = forward_noise(x0, 4, s, r1);
  const Vec2 e = r2.normal2();
  CHECK(noised == forward_noise(x0, 4, s, e));
}

TEST_CASE("batched, parallel and per-trajectory samplers agree bitwise") {
  const Schedule s = Schedule::geometric(40);
  const GaussianMixture gm({0.3, 0.7}, {Gaussian({-2, 0}, Sym2::identity(0.5)), Gaussian({1, 1}, Sym2{1.0, 0.2, 0.6})});
  const ScoreField f = ScoreField::analytic(gm, s.noise());
  const auto a = sample_trajectories(f, 600, s, 17, Exec::serial, true);
  const auto b = sample_trajectories(f, 600, s, 17, Exec::parallel, true);
  const auto c = sample_trajectories_reference(f, 600, s, 17);
  CHECK(a.states == b.states);
  CHECK(a.states == c.states);
  CHECK(a.noises == c.noises);
  CHECK(a.scores == b.scores);
  CHECK(a.endpoints() == sample_endpoints(f, 600, s, 17, Exec::parallel));
  CHECK(a.endpoints() == sample_endpoints(f, 600, s, 17, Exec::serial));
  // x_T is the noise addressed at level T + 1; every step is a ddim_step.
  CHECK(a.state(40, 5) == trajectory_noise(17, 5, 41));
  for (int t = 40; t >= 1; --t) {
    CHECK(a.state(t - 1, 9) == ddim_step(a.state(t, 9), t, a.score(t, 9), s, a.noise(t, 9)));
    CHECK(a.noise(t, 9) == trajectory_noise(17, 9, t));
  }
  CHECK(sample_trajectories(f, 600, s, 18).states != a.states);
}

TEST_CASE("exact scores reproduce the sampler's analytic endpoint variance") {
  for (const bool geometric : {false, true}) {
    const int T = 100;
    const NoiseSchedule noise = geometric ? NoiseSchedule::geometric(T) : NoiseSchedule::linear(T);
    const Schedule s(noise, VarianceSchedule::ddim(noise, 1.0));
    const double v = linear_sampler_variance(noise.alphas(), 1.0);
    const ScoreField f = ScoreField::analytic(GaussianMixture(Gaussian::standard()), noise);
    const auto x = sample_endpoints(f, 40000, s, 5);
    const Sym2 c = sample_covariance(x, sample_mean(x));
    // Variance of a sample variance of n normals is 2 v^2 / (n - 1).
    const double se = v * std::sqrt(2.0 / 39999);
    CHECK(std::abs(c.xx - v) < 4 * se);
    CHECK(std::abs(c.yy - v) < 4 * se);
    CHECK(std::abs(c.xy) < 4 * v / std::sqrt(40000.0));
  }
}

TEST_CASE("analytic field is the noised mixture score") {
  const NoiseSchedule noise = NoiseSchedule::geometric(20);
  const GaussianMixture gm({0.5, 0.5}, {Gaussian({-1, 0}, Sym2::identity()), Gaussian({2, 1}, Sym2{0.5, 0.1, 0.8})});
  const ScoreField f = ScoreField::analytic(gm, noise);
  CHECK(f.steps() == 20);
  CHECK(f.kind() == ScoreField::Kind::analytic);
  for (int t : {0, 1, 7, 20}) {
    const double a = noise.alpha(t);
    // Hand-built noised components.
    const GaussianMixture ref({0.5, 0.5}, {Gaussian({-std::sqrt(a), 0}, Sym2::identity()),
                                           Gaussian({2 * std::sqrt(a), std::sqrt(a)},
                                                    Sym2{0.5 * a + 1 - a, 0.1 * a, 0.8 * a + 1 - a})});
    for (const Vec2 x : {Vec2{0.1, 0.2}, Vec2{-2.0, 1.5}, Vec2{3.0, -1.0}}) {
      const Vec2 got = f(x, t), want = ref.score(x);
      CHECK(got.x == doctest::Approx(want.x).epsilon(1e-12));
      CHECK(got.y == doctest::Approx(want.y).epsilon(1e-12));
    }
  }
  std::vector<Vec2> xs{{0, 0}, {1, 2}, {-1, 3}}, out(3);
  f.eval_batch(xs, 5, out);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == f(xs[i], 5));
}

TEST_CASE("combined and terminal fields") {
  const NoiseSchedule noise = NoiseSchedule::geometric(10);
  const ScoreField p = ScoreField::analytic(GaussianMixture(Gaussian({1, 0}, Sym2::identity())), noise);
  const ScoreField q = ScoreField::analytic(GaussianMixture(Gaussian({0, 2}, Sym2::identity(2.0))), noise);
  const Vec2 x{0.4, -0.3};
  CHECK(ScoreField::combo({p, q}, {1.0, 0.0})(x, 3) == p(x, 3));
  const Vec2 mix = ScoreField::combo({p, q}, {0.25, 0.75})(x, 3);
  CHECK(mix.x == doctest::Approx(0.25 * p(x, 3).x + 0.75 * q(x, 3).x));
  CHECK_THROWS(ScoreField::combo({p, q}, {0.5, 0.6}));
  const ScoreField w = ScoreField::with_terminal(p, q);
  CHECK(w(x, 2) == p(x, 2));
  CHECK(w(x, 1) == q(x, 1));
  CHECK(w(x, 0) == q(x, 0));
}

TEST_CASE("noised endpoint copies are addressable") {
  const Schedule s = Schedule::geometric(10);
  const std::vector<Vec2> x0{{1, 1}, {-2, 0}};
  const auto xt = noise_endpoint_samples(x0, 6, s, 9);
  CHECK(xt[1] == forward_noise(x0[1], 6, s, counter_normal2(9, 1, 6)));
}

TEST_CASE("non-finite scores raise DivergenceError") {
  const NoiseSchedule noise = NoiseSchedule::geometric(10);
  const Schedule s(noise, VarianceSchedule::ddim(noise, 1.0));
  MlpScoreNet raw({{4}, 2, false}, 10, 1);
  std::vector<double> p(raw.parameters().begin(), raw.parameters().end());
  p[0] = std::nan("");
  std::copy(p.begin(), p.end(), raw.parameters().begin());
  const ScoreField f = ScoreField::learned(std::make_shared<const MlpScoreNet>(raw));
  CHECK_THROWS_AS(sample_trajectories(f, 10, s, 1), DivergenceError);
  CHECK_THROWS_AS(sample_trajectories_reference(f, 10, s, 1), DivergenceError);
  RngStream r(1, 0);
  CHECK_THROWS_AS(ddim_step({0, 0}, 3, f, s, r), DivergenceError);
}
