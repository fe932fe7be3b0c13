#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cdlab/diffusion.hpp"
#include "cdlab/distributions.hpp"
#include "cdlab/divergence.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/schedules.hpp"
#include "cdlab/score_field.hpp"
#include "cdlab/score_model.hpp"

namespace cdlab {

/// Expected-reward constraints E[r_i(x0)] >= b_i around a pretrained model.
/// Thresholds are in normalised units r~ = (r - mean) / std, with the
/// statistics taken from the pretrained sampler.
struct AlignProblem {
  GaussianMixture pretrained;
  std::vector<Reward> rewards;
  std::vector<double> thresholds;
  std::vector<double> reward_mean;  // filled by normalize_rewards
  std::vector<double> reward_std;

  std::size_t size() const { return rewards.size(); }
  /// Normalised reward i at x.
  double normalized(std::size_t i, const Vec2& x) const { return (rewards[i](x) - reward_mean[i]) / reward_std[i]; }
};

/// Estimates reward mean/std from n_calib endpoints of the pretrained DDIM
/// sampler. Throws ConfigError when a reward is (numerically) constant.
void normalize_rewards(AlignProblem& problem, const Schedule& sched, std::size_t n_calib, std::uint64_t seed,
                       Exec exec = Exec::parallel);

/// Sets the statistics directly (e.g. when they are known in closed form).
void set_reward_stats(AlignProblem& problem, std::vector<double> mean, std::vector<double> std);

/// Multipliers with EMA-smoothed slack; lambda_i >= 0 after every step.
struct DualState {
  std::vector<double> lambda;
  std::vector<double> ema_slack;
  double eta = 0.05;
  double beta = 0.9;
  bool seeded = false;
};

/// lambda <- [lambda - eta * ema(slack)]_+; the EMA starts at the first slack.
void dual_step(DualState& state, std::span<const double> slack);

/// The trainable sampler: the network drives the stochastic steps t >= 2 and
/// the pretrained score drives the deterministic last step t = 1.
ScoreField aligned_field(std::shared_ptr<const MlpScoreNet> net, const ScoreField& pretrained);

/// Per-sample upstream for sum_b <u_b, s(x_b, t_b)> over the points (t >= 2)
/// of a trajectory batch; feed to batch_gradient.
struct TrajectoryPoints {
  std::vector<Vec2> xs;
  std::vector<int> ts;
};
TrajectoryPoints trajectory_points(const TrajectoryBatch& traj);

/// Log-derivative gradient of sum_i lambda_i E[r~_i(x0)] (ascent direction)
/// with a batch-mean baseline, as upstream on trajectory_points(traj):
/// u_{b,t} = (R_b - mean R) gamma_t eps_{b,t} / (sigma_t B).
std::vector<Vec2> reward_upstream(const AlignProblem& problem, std::span<const double> lambda,
                                  const TrajectoryBatch& traj, const Schedule& sched);

/// Gradient of the path-wise KL surrogate with trajectories held fixed, as
/// upstream: u_{b,t} = 2 w_t (s_theta - s_q) / B with w_t = gamma_t^2 / (2 sigma_t^2).
/// Uses the scores recorded in `traj` when present (they must come from `net`).
/// With `score_term`, also adds the dependence of the trajectory law on theta
/// that the surrogate drops: step t' is credited with the KL terms that follow
/// it, (G_{t'} - mean G_{t'}) gamma_{t'} eps / (sigma_{t'} B) with
/// G_{t'} = sum_{t=2}^{t'-1} w_t |s_theta - s_q|^2 at x_t. The sum of both parts
/// is an unbiased gradient of the path-wise KL.
std::vector<Vec2> kl_upstream(const MlpScoreNet& net, const ScoreField& pretrained, const TrajectoryBatch& traj,
                              const Schedule& sched, Exec exec = Exec::parallel, bool score_term = false);

/// Parameter-space versions of the two gradients.
std::vector<double> reward_gradient(const MlpScoreNet& net, const AlignProblem& problem,
                                    std::span<const double> lambda, const TrajectoryBatch& traj,
                                    const Schedule& sched, Exec exec = Exec::parallel);
std::vector<double> kl_gradient(const MlpScoreNet& net, const ScoreField& pretrained, const TrajectoryBatch& traj,
                                const Schedule& sched, Exec exec = Exec::parallel);

/// Mean normalised reward per constraint minus threshold.
std::vector<double> constraint_slack(const AlignProblem& problem, std::span<const Vec2> x0);

struct AlignConfig {
  MlpOptions net{{32, 32}, 8, false};
  AdamOptions adam;
  /// Primal learning rate decays geometrically from adam.lr to this value over
  /// the rounds (<= 0: constant).
  double lr_final = 0.0;
  int warm_start_steps = 2000;
  int warm_start_batch = 256;
  int rounds = 20;
  int primal_steps = 200;
  int batch = 256;
  double dual_lr = 0.05;
  double ema = 0.9;
  double lambda_init = 1.0;
  double lambda_max = 100.0;
  std::size_t n_calib = 16384;
  std::size_t n_eval = 4096;   // slack estimate per round
  std::size_t n_final = 16384; // final report
  /// Use the unbiased path-wise KL gradient instead of the fixed-trajectory surrogate.
  bool kl_score_term = false;
  std::uint64_t seed = 0;
};

struct AlignRound {
  std::vector<double> lambda;     // used during the round's primal steps
  std::vector<double> slack;      // measured after the primal steps
  std::vector<double> ema_slack;
  std::vector<double> mean_reward;  // raw units
  KlEstimate kl;
};

struct AlignResult {
  std::shared_ptr<MlpScoreNet> net;
  std::vector<AlignRound> history;
  std::vector<double> lambda;
  std::vector<double> slack;
  std::vector<double> mean_reward;
  std::vector<double> complementary_slackness;  // lambda_i * slack_i
  KlEstimate kl;
  std::vector<Vec2> samples;
};

/// Primal-dual reward alignment. Throws InfeasibleError when some lambda_i
/// exceeds lambda_max while its slack is still negative.
AlignResult run_alignment(const AlignProblem& problem, const Schedule& sched, const AlignConfig& config,
                          Exec exec = Exec::parallel);

}  // namespace cdlab
