#include "cdlab/align.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cdlab/error.hpp"
#include "cdlab/log.hpp"

namespace cdlab {

void set_reward_stats(AlignProblem& problem, std::vector<double> mean, std::vector<double> std) {
  if (mean.size() != problem.size() || std.size() != problem.size()) {
    throw std::invalid_argument("reward statistics need one entry per reward");
  }
  for (double s : std) {
    if (!(s >= 1e-8)) throw ConfigError("degenerate reward: standard deviation under the pretrained model < 1e-8");
  }
  problem.reward_mean = std::move(mean);
  problem.reward_std = std::move(std);
}

void normalize_rewards(AlignProblem& problem, const Schedule& sched, std::size_t n_calib, std::uint64_t seed,
                       Exec exec) {
  if (problem.rewards.empty()) throw std::invalid_argument("alignment needs at least one reward");
  if (n_calib < 2) throw std::invalid_argument("normalize_rewards: n_calib must be >= 2");
  const ScoreField field = ScoreField::analytic(problem.pretrained, sched.noise());
  const auto x0 = sample_endpoints(field, n_calib, sched, seed, exec);
  std::vector<double> mean(problem.size(), 0.0);
  std::vector<double> sd(problem.size(), 0.0);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    double m = 0.0;
    for (const auto& x : x0) m += problem.rewards[i](x);
    m /= double(x0.size());
    double ss = 0.0;
    for (const auto& x : x0) ss += (problem.rewards[i](x) - m) * (problem.rewards[i](x) - m);
    mean[i] = m;
    sd[i] = std::sqrt(ss / double(x0.size() - 1));
  }
  set_reward_stats(problem, std::move(mean), std::move(sd));
}

void dual_step(DualState& state, std::span<const double> slack) {
  if (slack.size() != state.lambda.size()) throw std::invalid_argument("dual_step: size mismatch");
  for (double s : slack) {
    if (!std::isfinite(s)) throw DivergenceError("dual_step: non-finite slack");
  }
  if (!state.seeded) {
    state.ema_slack.assign(slack.begin(), slack.end());
    state.seeded = true;
  } else {
    for (std::size_t i = 0; i < slack.size(); ++i) {
      state.ema_slack[i] = state.beta * state.ema_slack[i] + (1.0 - state.beta) * slack[i];
    }
  }
  for (std::size_t i = 0; i < slack.size(); ++i) {
    state.lambda[i] = std::max(0.0, state.lambda[i] - state.eta * state.ema_slack[i]);
  }
}

ScoreField aligned_field(std::shared_ptr<const MlpScoreNet> net, const ScoreField& pretrained) {
  return ScoreField::with_terminal(ScoreField::learned(std::move(net)), pretrained);
}

TrajectoryPoints trajectory_points(const TrajectoryBatch& traj) {
  TrajectoryPoints p;
  const std::size_t count = traj.steps >= 2 ? static_cast<std::size_t>(traj.steps - 1) * traj.n : 0;
  p.xs.reserve(count);
  p.ts.reserve(count);
  for (int t = traj.steps; t >= 2; --t) {
    for (std::size_t b = 0; b < traj.n; ++b) {
      p.xs.push_back(traj.state(t, b));
      p.ts.push_back(t);
    }
  }
  return p;
}

std::vector<double> constraint_slack(const AlignProblem& problem, std::span<const Vec2> x0) {
  if (x0.empty()) throw std::invalid_argument("constraint_slack: no samples");
  std::vector<double> slack(problem.size(), 0.0);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    double m = 0.0;
    for (const auto& x : x0) m += problem.normalized(i, x);
    slack[i] = m / double(x0.size()) - problem.thresholds[i];
  }
  return slack;
}

std::vector<Vec2> reward_upstream(const AlignProblem& problem, std::span<const double> lambda,
                                  const TrajectoryBatch& traj, const Schedule& sched) {
  if (lambda.size() != problem.size()) throw std::invalid_argument("reward_upstream: one multiplier per reward");
  const std::size_t B = traj.n;
  std::vector<double> R(B, 0.0);
  double mean = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const Vec2& x0 = traj.state(0, b);
    for (std::size_t i = 0; i < problem.size(); ++i) R[b] += lambda[i] * problem.normalized(i, x0);
    mean += R[b];
  }
  mean /= double(B);
  std::vector<Vec2> up;
  up.reserve(static_cast<std::size_t>(traj.steps - 1) * B);
  for (int t = traj.steps; t >= 2; --t) {
    const double sigma = sched.sigma(t);
    if (!(sigma > 0.0)) throw DeterministicStepError("reward gradient needs sigma_t > 0 at t = " + std::to_string(t));
    const double c = sched.gamma(t) / (sigma * double(B));
    for (std::size_t b = 0; b < B; ++b) up.push_back((c * (R[b] - mean)) * traj.noise(t, b));
  }
  return up;
}

std::vector<Vec2> kl_upstream(const MlpScoreNet& net, const ScoreField& pretrained, const TrajectoryBatch& traj,
                              const Schedule& sched, Exec exec, bool score_term) {
  const std::size_t B = traj.n;
  const int T = traj.steps;
  std::vector<Vec2> up(static_cast<std::size_t>(T - 1) * B);
  std::vector<double> cost(score_term ? up.size() : 0);
  std::vector<Vec2> s_theta(B);
  std::vector<Vec2> s_q(B);
  for (int t = T; t >= 2; --t) {
    const auto xs = traj.level(t);
    if (traj.scores.empty()) {
      batch_forward(net, xs, t, s_theta, exec);
    } else {
      // Recorded during sampling with the same network.
      for (std::size_t b = 0; b < B; ++b) s_theta[b] = traj.score(t, b);
    }
    pretrained.eval_batch(xs, t, s_q);
    const double w = pathwise_weight(sched.noise(), sched.variance(), t);
    const double c = 2.0 * w / double(B);
    const std::size_t row = static_cast<std::size_t>(T - t) * B;
    for (std::size_t b = 0; b < B; ++b) {
      const Vec2 d = s_theta[b] - s_q[b];
      up[row + b] = c * d;
      if (score_term) cost[row + b] = w * squared_norm(d);
    }
  }
  if (score_term) {
    // Rows run t = T..2; accumulate the cost-to-go from t = 2 upwards.
    std::vector<double> to_go(B, 0.0);
    for (int t = 2; t <= T; ++t) {
      const std::size_t row = static_cast<std::size_t>(T - t) * B;
      double mean = 0.0;
      for (std::size_t b = 0; b < B; ++b) mean += to_go[b];
      mean /= double(B);
      const double k = sched.gamma(t) / (sched.sigma(t) * double(B));
      for (std::size_t b = 0; b < B; ++b) up[row + b] += (k * (to_go[b] - mean)) * traj.noise(t, b);
      for (std::size_t b = 0; b < B; ++b) to_go[b] += cost[row + b];
    }
  }
  return up;
}

std::vector<double> reward_gradient(const MlpScoreNet& net, const AlignProblem& problem,
                                    std::span<const double> lambda, const TrajectoryBatch& traj,
                                    const Schedule& sched, Exec exec) {
  const auto pts = trajectory_points(traj);
  const auto up = reward_upstream(problem, lambda, traj, sched);
  return batch_gradient(net, pts.xs, pts.ts, up, exec);
}

std::vector<double> kl_gradient(const MlpScoreNet& net, const ScoreField& pretrained, const TrajectoryBatch& traj,
                                const Schedule& sched, Exec exec) {
  const auto pts = trajectory_points(traj);
  const auto up = kl_upstream(net, pretrained, traj, sched, exec);
  return batch_gradient(net, pts.xs, pts.ts, up, exec);
}

namespace {

std::vector<double> mean_rewards(const AlignProblem& problem, std::span<const Vec2> x0) {
  std::vector<double> m(problem.size(), 0.0);
  for (std::size_t i = 0; i < problem.size(); ++i) {
    for (const auto& x : x0) m[i] += problem.rewards[i](x);
    m[i] /= double(x0.size());
  }
  return m;
}

}  // namespace

AlignResult run_alignment(const AlignProblem& input, const Schedule& sched, const AlignConfig& config, Exec exec) {
  if (input.rewards.empty()) throw std::invalid_argument("alignment needs at least one reward");
  if (input.thresholds.size() != input.size()) throw std::invalid_argument("alignment needs one threshold per reward");
  for (double b : input.thresholds) {
    if (!std::isfinite(b)) throw std::invalid_argument("alignment thresholds must be finite");
  }
  if (config.batch < 2) throw std::invalid_argument("alignment batch must be >= 2");
  if (sched.steps() < 2) throw std::invalid_argument("alignment needs T >= 2");

  AlignProblem problem = input;
  if (problem.reward_mean.empty()) {
    normalize_rewards(problem, sched, config.n_calib, derive_seed(config.seed, 1), exec);
  }
  const ScoreField pretrained = ScoreField::analytic(problem.pretrained, sched.noise());

  AlignResult r;
  r.net = std::make_shared<MlpScoreNet>(config.net, sched.steps(), derive_seed(config.seed, 2));
  {
    TrainOptions warm;
    warm.steps = config.warm_start_steps;
    warm.batch = config.warm_start_batch;
    warm.adam = config.adam;
    warm.seed = derive_seed(config.seed, 3);
    const GaussianMixture& q = problem.pretrained;
    train(*r.net, [&q](std::size_t n, std::uint64_t s) { return q.sample(n, s); }, sched, warm, nullptr, exec);
  }
  const ScoreField field = aligned_field(r.net, pretrained);

  DualState dual;
  dual.lambda.assign(problem.size(), config.lambda_init);
  dual.eta = config.dual_lr;
  dual.beta = config.ema;
  Adam adam(r.net->parameter_count(), config.adam);
  const std::uint64_t eval_seed = derive_seed(config.seed, 4);

  auto evaluate = [&](std::size_t n, AlignRound& out) {
    const auto traj = sample_trajectories(field, n, sched, eval_seed, exec);
    const auto x0 = traj.endpoints();
    out.slack = constraint_slack(problem, x0);
    out.mean_reward = mean_rewards(problem, x0);
    out.kl = pathwise_kl(traj, field, pretrained, sched, exec);
    return x0;
  };

  for (int h = 0; h < config.rounds; ++h) {
    if (config.lr_final > 0.0 && config.rounds > 1) {
      const double frac = double(h) / double(config.rounds - 1);
      adam.set_lr(config.adam.lr * std::pow(config.lr_final / config.adam.lr, frac));
    }
    for (int k = 0; k < config.primal_steps; ++k) {
      const std::uint64_t s = derive_seed(config.seed, 1000000 + static_cast<std::uint64_t>(h) * 100000 + k);
      const auto traj = sample_trajectories(field, static_cast<std::size_t>(config.batch), sched, s, exec, true);
      const auto pts = trajectory_points(traj);
      auto up = kl_upstream(*r.net, pretrained, traj, sched, exec, config.kl_score_term);
      const auto rw = reward_upstream(problem, dual.lambda, traj, sched);
      for (std::size_t j = 0; j < up.size(); ++j) up[j] -= rw[j];
      const auto grad = batch_gradient(*r.net, pts.xs, pts.ts, up, exec);
      for (double g : grad) {
        if (!std::isfinite(g)) throw DivergenceError("alignment primal step produced a non-finite gradient");
      }
      adam.step(r.net->parameters(), grad);
    }
    AlignRound round;
    round.lambda = dual.lambda;
    evaluate(config.n_eval, round);
    dual_step(dual, round.slack);
    round.ema_slack = dual.ema_slack;
    log_debug("align round " + std::to_string(h) + " lambda[0] " + std::to_string(dual.lambda[0]) + " slack[0] " +
              std::to_string(round.slack[0]) + " kl " + std::to_string(round.kl.value));
    r.history.push_back(round);
    for (std::size_t i = 0; i < problem.size(); ++i) {
      if (dual.lambda[i] > config.lambda_max && round.slack[i] < 0.0) {
        throw InfeasibleError("constraint " + std::to_string(i) + " looks infeasible: lambda " +
                              std::to_string(dual.lambda[i]) + " exceeds " + std::to_string(config.lambda_max) +
                              " with slack " + std::to_string(round.slack[i]));
      }
    }
  }

  AlignRound last;
  r.samples = evaluate(config.n_final, last);
  r.lambda = r.history.empty() ? dual.lambda : r.history.back().lambda;
  r.slack = last.slack;
  r.mean_reward = last.mean_reward;
  r.kl = last.kl;
  for (std::size_t i = 0; i < problem.size(); ++i) r.complementary_slackness.push_back(r.lambda[i] * r.slack[i]);
  return r;
}

}  // namespace cdlab
