#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdlab/linalg.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/rng.hpp"
#include "cdlab/schedules.hpp"
#include "cdlab/score_field.hpp"

namespace cdlab {

/// x_t = sqrt(a_t) x0 + sqrt(1 - a_t) eps.
Vec2 forward_noise(const Vec2& x0, int t, const Schedule& sched, RngStream& rng);
inline Vec2 forward_noise(const Vec2& x0, int t, const Schedule& sched, const Vec2& eps) {
  return sched.sqrt_alpha(t) * x0 + sched.sqrt_one_minus_alpha(t) * eps;
}

/// One reverse step x_{t-1} = sqrt(a_{t-1}/a_t) x_t + gamma_t s + sigma_t eps.
inline Vec2 ddim_step(const Vec2& x_t, int t, const Vec2& score, const Schedule& sched, const Vec2& eps) {
  return sched.state_coef(t) * x_t + sched.gamma(t) * score + sched.sigma(t) * eps;
}
/// Same, evaluating the field and drawing eps from `rng`. Throws DivergenceError
/// when the score is not finite.
Vec2 ddim_step(const Vec2& x_t, int t, const ScoreField& score, const Schedule& sched, RngStream& rng);

/// Noise of trajectory i at step t (t = T + 1 addresses the initial state x_T).
inline Vec2 trajectory_noise(std::uint64_t seed, std::size_t i, int t) {
  return counter_normal2(seed, i, static_cast<std::uint64_t>(t));
}

/// n reverse trajectories stored level-major: state(t, i) is x_t of trajectory i.
struct TrajectoryBatch {
  int steps = 0;
  std::size_t n = 0;
  std::vector<Vec2> states;  // (T + 1) * n
  std::vector<Vec2> noises;  // T * n; noise(t, i) drove the step x_t -> x_{t-1}
  std::vector<Vec2> scores;  // T * n when recorded: s(x_t, t) used in that step

  const Vec2& state(int t, std::size_t i) const { return states[static_cast<std::size_t>(t) * n + i]; }
  const Vec2& noise(int t, std::size_t i) const { return noises[static_cast<std::size_t>(t - 1) * n + i]; }
  const Vec2& score(int t, std::size_t i) const { return scores[static_cast<std::size_t>(t - 1) * n + i]; }
  std::span<const Vec2> level(int t) const {
    return std::span<const Vec2>(states).subspan(static_cast<std::size_t>(t) * n, n);
  }
  std::vector<Vec2> endpoints() const { return {states.begin(), states.begin() + static_cast<std::ptrdiff_t>(n)}; }
};

/// n trajectories of the reverse process driven by `score`; x_T ~ N(0, I).
/// Time-outer batched kernel: at each level the batch is split into fixed
/// chunks evaluated in parallel under Exec::parallel.
TrajectoryBatch sample_trajectories(const ScoreField& score, std::size_t n, const Schedule& sched,
                                    std::uint64_t seed, Exec exec = Exec::parallel, bool record_scores = false);

/// Per-trajectory serial reference of sample_trajectories (same noise, same numbers).
TrajectoryBatch sample_trajectories_reference(const ScoreField& score, std::size_t n, const Schedule& sched,
                                              std::uint64_t seed);

/// Endpoints only (no path storage).
std::vector<Vec2> sample_endpoints(const ScoreField& score, std::size_t n, const Schedule& sched,
                                   std::uint64_t seed, Exec exec = Exec::parallel);

/// Forward-noised copies of x0s at level t; element i uses noise (seed, i, t).
std::vector<Vec2> noise_endpoint_samples(std::span<const Vec2> x0s, int t, const Schedule& sched,
                                         std::uint64_t seed);

/// CSV "x,y,trajectory_id".
void write_endpoints_csv(const std::string& path, std::span<const Vec2> points);

}  // namespace cdlab
