#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cdlab/distributions.hpp"
#include "cdlab/divergence.hpp"
#include "cdlab/mcmc.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/schedules.hpp"
#include "cdlab/score_field.hpp"
#include "cdlab/score_model.hpp"

namespace cdlab {

/// Euclidean projection onto {lambda >= 0, sum lambda = 1} (Michelot's
/// active-set iteration). Throws std::invalid_argument on non-finite input.
std::vector<double> simplex_project(std::span<const double> v);

/// lambda_i = exp(H_i) / sum_j exp(H_j).
std::vector<double> entropy_softmax_lambda(std::span<const double> entropies);
/// Same, with closed-form entropies (single Gaussians) or Monte-Carlo ones.
std::vector<double> entropy_softmax_lambda(std::span<const GaussianMixture> models, std::size_t n = 100000,
                                           std::uint64_t seed = 0);

/// Stop when ||lambda_{h+1} - lambda_h||_inf < tol for `patience` consecutive
/// rounds, or after max_rounds.
struct DualSchedule {
  double eta = 0.05;
  int max_rounds = 200;
  double tol = 1e-3;
  int patience = 5;
};

/// One round of a composition dual loop.
struct ComposeRound {
  std::vector<double> lambda;  // weights used in this round
  std::vector<KlEstimate> kls;
};

struct ComposeResult {
  std::vector<double> lambda;
  std::vector<ComposeRound> history;
  std::vector<KlEstimate> final_kls;  // evaluated at the final lambda
  std::vector<Vec2> samples;          // endpoint samples at the final lambda
  int rounds = 0;
  bool converged = false;
  std::shared_ptr<MlpScoreNet> net;  // primal-dual only
};

/// lambda + eta * constraint values, projected onto the simplex. Any constant
/// shift of the values (the epigraph variable) cancels in the projection.
std::vector<double> simplex_dual_step(std::span<const double> lambda, std::span<const double> values, double eta);

struct DualOnlyConfig {
  DualSchedule dual;
  std::size_t n_samples = 4096;
  std::uint64_t seed = 0;
  /// If false, every round reuses the same noise (common random numbers).
  bool fresh_noise = false;
};

/// Dual-only AND: per round, endpoint samples of the surrogate score
/// sum_i lambda_i s_i, point-wise KL to every model, projected dual ascent.
/// Throws InfeasibleError when a KL estimate is not finite.
ComposeResult dual_only_and(std::span<const ScoreField> models, const Schedule& sched, const DualOnlyConfig& config,
                            Exec exec = Exec::parallel);

struct PrimalDualConfig {
  DualSchedule dual;
  MlpOptions net;
  TrainOptions train;            // `steps` is primal steps per dual round
  int warm_start_steps = 1000;   // DSM steps before the first dual round
  AnnealConfig mcmc;
  std::size_t n_mcmc = 4096;     // MCMC training pool per round
  std::size_t n_kl = 1024;       // MCMC samples noised for the point-wise KLs
  std::size_t n_endpoint = 4096; // final learned-sampler endpoints
  /// Closing fit at the final weights: final_steps DSM steps (0: train.steps)
  /// with the learning rate decaying geometrically to final_lr (<= 0: constant).
  int final_steps = 0;
  double final_lr = 0.0;
  std::uint64_t seed = 0;
  /// Keep lambda fixed at its initial value (primal-only check).
  bool freeze_dual = false;
  std::vector<double> lambda_init;  // empty: uniform
};

/// Primal-dual AND: per round, annealed MCMC from the lambda-product, DSM
/// training of the score net (warm-started), point-wise KL of the learned
/// field to every model on noised MCMC samples, projected dual ascent.
ComposeResult primal_dual_and(std::span<const ScoreField> models, const Schedule& sched,
                              const PrimalDualConfig& config, Exec exec = Exec::parallel);

struct MixtureConfig {
  DualSchedule dual;
  std::size_t n_samples = 100000;  // per model, drawn once
  std::uint64_t seed = 0;
};

struct MixtureRound {
  std::vector<double> lambda;
  std::vector<Estimate> cross_entropy;  // E_{q_i}[-log q_mix]
  std::vector<Estimate> forward_kl;     // D_KL(q_i || q_mix)
};

struct MixtureResult {
  std::vector<double> lambda;
  std::vector<MixtureRound> history;
  std::vector<Estimate> final_forward_kl;
  Estimate entropy;          // H(q_mix) at the final lambda
  Estimate uniform_entropy;  // H(q_mix) at uniform lambda, same draws
  int rounds = 0;
  bool converged = false;
};

/// OR composition by projected ascent on H(q_mix(lambda)): the dual signal for
/// model i is E_{q_i}[-log q_mix] = D_KL(q_i || q_mix) + H(q_i), estimated on
/// fixed draws from each q_i.
MixtureResult mixture_or(std::span<const GaussianMixture> models, const MixtureConfig& config);

/// n draws from sum_i lambda_i q_i; draw j picks a model and samples it from stream (seed, j).
std::vector<Vec2> sample_mixture(std::span<const GaussianMixture> models, std::span<const double> lambda,
                                 std::size_t n, std::uint64_t seed);

}  // namespace cdlab
