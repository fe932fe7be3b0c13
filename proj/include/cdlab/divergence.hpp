#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cdlab/diffusion.hpp"
#include "cdlab/distributions.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/schedules.hpp"
#include "cdlab/score_field.hpp"

namespace cdlab {

/// KL estimate in nats; `steps` is the T it was computed with.
struct KlEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t n_samples = 0;
  int steps = 0;
};

/// Path-wise KL between the reverse processes of s_p and s_q along given
/// trajectories of s_p: per trajectory sum_t gamma_t^2/(2 sigma_t^2) |s_p - s_q|^2.
/// The sum runs over the stochastic steps t = 2..T (sigma_1 = 0 whenever
/// alpha_0 = 1, and both processes share that deterministic last step only if
/// their scores agree at t = 1; the caller is responsible for that).
/// Throws DeterministicStepError if sigma_t = 0 for some t >= 2.
KlEstimate pathwise_kl(const TrajectoryBatch& traj_p, const ScoreField& s_p, const ScoreField& s_q,
                       const Schedule& sched, Exec exec = Exec::parallel);

/// Samples n_traj trajectories of s_p and estimates the path-wise KL.
KlEstimate pathwise_kl(const ScoreField& s_p, const ScoreField& s_q, std::size_t n_traj, const Schedule& sched,
                       std::uint64_t seed, Exec exec = Exec::parallel);

/// Point-wise (endpoint) KL from clean samples of p:
/// sum_t w_t a_t E|s_p(x_t, t) - s_q(x_t, t)|^2 with x_t freshly noised from
/// p0_samples at every t (noise (seed, i, t)) and w_t = pointwise_weight(t).
/// The a_t factor converts the x-space score gap into the score gap of the
/// rescaled variable x / sqrt(a_t), on which w_t acts.
KlEstimate pointwise_kl(const ScoreField& s_p, const ScoreField& s_q, std::span<const Vec2> p0_samples,
                        const Schedule& sched, std::uint64_t seed, Exec exec = Exec::parallel);

/// Point-wise KL from one p to several q's on shared noised samples.
std::vector<KlEstimate> pointwise_kl(const ScoreField& s_p, std::span<const ScoreField> s_qs,
                                     std::span<const Vec2> p0_samples, const Schedule& sched, std::uint64_t seed,
                                     Exec exec = Exec::parallel);

using LogDensity = std::function<double(const Vec2&)>;

/// E_{x ~ q}[log q(x) - log p(x)] on the given samples of q.
/// Throws InfeasibleError when log p is -inf on a sample (support violation).
Estimate forward_kl(const GaussianMixture& q, const LogDensity& log_p, std::span<const Vec2> q_samples);
Estimate forward_kl(const GaussianMixture& q, const LogDensity& log_p, std::size_t n, std::uint64_t seed);

/// E_{x ~ q}[-log p(x)] on the given samples of q.
Estimate cross_entropy(const LogDensity& log_p, std::span<const Vec2> q_samples);

/// Log-density of the lambda-weighted mixture of models.
double mixture_log_density(std::span<const GaussianMixture> models, std::span<const double> weights, const Vec2& x);

/// Monte-Carlo entropy of sum_i w_i q_i; draws come from stream (seed, j).
Estimate mixture_entropy(std::span<const double> weights, std::span<const GaussianMixture> components,
                         std::size_t n, std::uint64_t seed);

}  // namespace cdlab
