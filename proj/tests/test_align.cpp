#include <cmath>

#include "cdlab/align.hpp"
#include "cdlab/error.hpp"
#include "doctest.h"

using namespace cdlab;

namespace {

AlignProblem linear_problem(double threshold) {
  AlignProblem p{GaussianMixture(Gaussian::standard()), {Reward::linear({1, 0})}, {threshold}, {}, {}};
  set_reward_stats(p, {0.0}, {1.0});
  return p;
}

// Central differences of f over every network parameter; returns the worst
// ratio |fd - g| / (rel * max(|fd|, |g|) + floor).
template <class F>
double worst_fd_ratio(MlpScoreNet& net, F f, const std::vector<double>& g, double rel, double floor) {
  auto p = net.parameters();
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double keep = p[k], h = 1e-5;
    p[k] = keep + h;
    const double fp = f();
    p[k] = keep - h;
    const double fm = f();
    p[k] = keep;
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[k]) / (rel * std::max(std::abs(fd), std::abs(g[k])) + floor));
  }
  return worst;
}

}  // namespace

TEST_CASE("dual step: EMA seeded with the first slack, multipliers stay nonnegative") {
  DualState d{{0.0}, {}, 0.05, 0.9, false};
  const std::vector<double> slack{-1.0};
  dual_step(d, slack);
  CHECK(d.lambda[0] == doctest::Approx(0.05));
  CHECK(d.ema_slack[0] == doctest::Approx(-1.0));
  const std::vector<double> positive{3.0};
  dual_step(d, positive);
  CHECK(d.ema_slack[0] == doctest::Approx(0.9 * -1.0 + 0.1 * 3.0));
  CHECK(d.lambda[0] == doctest::Approx(0.05 + 0.05 * 0.6));
  for (int i = 0; i < 50; ++i) dual_step(d, positive);
  CHECK(d.lambda[0] == 0.0);
}

TEST_CASE("constraint slack is the mean normalised reward minus threshold") {
  AlignProblem p = linear_problem(0.5);
  set_reward_stats(p, {1.0}, {2.0});
  const std::vector<Vec2> x{{1, 0}, {3, 5}, {-1, 2}};
  // Normalised rewards 0, 1, -1.
  CHECK(constraint_slack(p, x)[0] == doctest::Approx(-0.5));
  CHECK(p.normalized(0, {5, 0}) == doctest::Approx(2.0));
}

TEST_CASE("reward statistics from the pretrained sampler") {
  const NoiseSchedule n = NoiseSchedule::linear(100);
  const Schedule s(n, VarianceSchedule::ddim(n, 1.0));
  AlignProblem p{GaussianMixture(Gaussian({1, 0}, Sym2::identity())), {Reward::linear({2, 0})}, {0.0}, {}, {}};
  normalize_rewards(p, s, 20000, 1);
  CHECK(std::abs(p.reward_mean[0] - 2.0) < 0.06);
  // Sampler variance is slightly below 1 (about 0.967 here).
  CHECK(p.reward_std[0] == doctest::Approx(2.0 * std::sqrt(0.967)).epsilon(0.02));
  AlignProblem flat{GaussianMixture(Gaussian::standard()), {Reward::linear({0, 0})}, {0.0}, {}, {}};
  CHECK_THROWS_AS(normalize_rewards(flat, s, 100, 1), ConfigError);
}

TEST_CASE("KL gradient matches finite differences of the fixed-trajectory surrogate") {
  const Schedule s = Schedule::geometric(8);
  const ScoreField pre = ScoreField::analytic(GaussianMixture(Gaussian::standard()), s.noise());
  MlpScoreNet net({{8, 8}, 4, false}, 8, 3);
  const auto field = aligned_field(std::make_shared<const MlpScoreNet>(net), pre);
  const auto traj = sample_trajectories(field, 40, s, 5);
  const auto g = kl_gradient(net, pre, traj, s, Exec::serial);
  auto surrogate = [&] {
    double v = 0.0;
    for (std::size_t b = 0; b < traj.n; ++b)
      for (int t = 2; t <= 8; ++t) {
        const Vec2 x = traj.state(t, b);
        v += s.gamma(t) * s.gamma(t) / (2 * s.sigma(t) * s.sigma(t)) * squared_norm(net.forward(x, t) - pre(x, t));
      }
    return v / double(traj.n);
  };
  CHECK(worst_fd_ratio(net, surrogate, g, 1e-4, 1e-9) <= 1.0);
  CHECK(g == kl_gradient(net, pre, traj, s, Exec::parallel));
}

TEST_CASE("reward gradient matches finite differences of the weighted path log-likelihood") {
  const Schedule s = Schedule::geometric(8);
  const ScoreField pre = ScoreField::analytic(GaussianMixture(Gaussian::standard()), s.noise());
  MlpScoreNet net({{8, 8}, 4, false}, 8, 7);
  const auto field = aligned_field(std::make_shared<const MlpScoreNet>(net), pre);
  const auto traj = sample_trajectories(field, 40, s, 6);
  AlignProblem p{GaussianMixture(Gaussian::standard()), {Reward::linear({1, 0}), Reward::quadratic({0, 1}, 0.5)},
                 {0.0, 0.0}, {}, {}};
  set_reward_stats(p, {0.1, -1.0}, {1.0, 0.8});
  const std::vector<double> lambda{0.7, 1.3};
  std::vector<double> R(traj.n);
  double mean = 0.0;
  for (std::size_t b = 0; b < traj.n; ++b) {
    const Vec2 x0 = traj.state(0, b);
    R[b] = lambda[0] * p.normalized(0, x0) + lambda[1] * p.normalized(1, x0);
    mean += R[b] / double(traj.n);
  }
  auto weighted_loglik = [&] {
    double v = 0.0;
    for (std::size_t b = 0; b < traj.n; ++b)
      for (int t = 2; t <= 8; ++t) {
        const Vec2 r = traj.state(t - 1, b) - s.state_coef(t) * traj.state(t, b) - s.gamma(t) * net.forward(traj.state(t, b), t);
        v += (R[b] - mean) * -squared_norm(r) / (2 * s.sigma(t) * s.sigma(t));
      }
    return v / double(traj.n);
  };
  const auto g = reward_gradient(net, p, lambda, traj, s, Exec::serial);
  CHECK(worst_fd_ratio(net, weighted_loglik, g, 1e-4, 1e-9) <= 1.0);
}

TEST_CASE("aligned field uses the pretrained score on the last step") {
  const Schedule s = Schedule::geometric(8);
  const ScoreField pre = ScoreField::analytic(GaussianMixture(Gaussian::standard()), s.noise());
  auto net = std::make_shared<const MlpScoreNet>(MlpOptions{{4}, 2, false}, 8, 1);
  const auto f = aligned_field(net, pre);
  CHECK(f({0.3, 0.1}, 1) == pre({0.3, 0.1}, 1));
  CHECK(f({0.3, 0.1}, 5) == net->forward({0.3, 0.1}, 5));
  const auto traj = sample_trajectories(f, 5, s, 2);
  const auto pts = trajectory_points(traj);
  CHECK(pts.xs.size() == 5 * 7);
  for (int t : pts.ts) CHECK(t >= 2);
}

TEST_CASE("unreachable threshold is infeasible") {
  const NoiseSchedule n = NoiseSchedule::linear(10);
  const Schedule s(n, VarianceSchedule::ddim(n, 1.0));
  AlignProblem p = linear_problem(50.0);
  AlignConfig c;
  c.net = {{8}, 2, false};
  c.warm_start_steps = 20;
  c.rounds = 20;
  c.primal_steps = 2;
  c.batch = 32;
  c.n_eval = 256;
  c.n_final = 256;
  c.dual_lr = 1.0;
  c.lambda_init = 0.0;
  c.lambda_max = 2.0;
  CHECK_THROWS_AS(run_alignment(p, s, c), InfeasibleError);
}

TEST_CASE("inactive constraint leaves the multiplier at zero") {
  const NoiseSchedule n = NoiseSchedule::linear(10);
  const Schedule s(n, VarianceSchedule::ddim(n, 1.0));
  AlignProblem p = linear_problem(-5.0);
  AlignConfig c;
  c.net = {{8}, 2, false};
  c.warm_start_steps = 50;
  c.rounds = 5;
  c.primal_steps = 2;
  c.batch = 64;
  c.n_eval = 512;
  c.n_final = 512;
  c.dual_lr = 1.0;
  c.lambda_init = 0.5;
  const auto r = run_alignment(p, s, c);
  CHECK(r.lambda[0] == 0.0);
  CHECK(r.slack[0] > 0.0);
  CHECK(r.complementary_slackness[0] == 0.0);
  CHECK(r.history.size() == 5);
  for (const auto& h : r.history) CHECK(h.lambda[0] >= 0.0);
  CHECK(r.samples.size() == 512);
}
