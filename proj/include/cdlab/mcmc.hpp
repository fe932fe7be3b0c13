#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cdlab/linalg.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/rng.hpp"
#include "cdlab/schedules.hpp"
#include "cdlab/score_field.hpp"

namespace cdlab {

struct AnnealConfig {
  int steps_per_level = 20;
  /// Step size at level t is step_scale * (1 - a_t); level 0 reuses level 1.
  double step_scale = 0.1;
  /// Extra steps at level 0, letting the chains settle after the last move of
  /// the annealed target.
  int final_steps = 0;
  /// Abort when more than this fraction of chains diverge.
  double max_diverged_fraction = 0.01;
};

/// x + eps * score + sqrt(2 eps) * xi.
inline Vec2 ula_step(const Vec2& x, const Vec2& score, double eps, const Vec2& xi) {
  return x + eps * score + std::sqrt(2.0 * eps) * xi;
}
/// Same, evaluating `score` and drawing xi from `rng`. Throws DivergenceError
/// on a non-finite state.
Vec2 ula_step(const Vec2& x, const std::function<Vec2(const Vec2&)>& score, double eps, RngStream& rng);

double anneal_step_size(const Schedule& sched, const AnnealConfig& config, int t);

struct AnnealResult {
  std::vector<Vec2> samples;  // finite chains only, in chain order
  std::size_t diverged = 0;
};

/// Annealed Langevin chains targeting `target` at levels t = T..0, K steps per
/// level, starting from N(0, I). Chain i draws its noise from (seed, i, step).
/// Throws DivergenceError if the diverged fraction exceeds the configured cap.
AnnealResult annealed_sample(const ScoreField& target, const Schedule& sched, const AnnealConfig& config,
                             std::size_t n, std::uint64_t seed, Exec exec = Exec::parallel);

/// Per-chain serial reference (identical numbers).
AnnealResult annealed_sample_reference(const ScoreField& target, const Schedule& sched, const AnnealConfig& config,
                                       std::size_t n, std::uint64_t seed);

/// Convenience: target sum_i lambda_i s_i.
AnnealResult annealed_sample(std::span<const double> lambda, std::span<const ScoreField> models,
                             const Schedule& sched, const AnnealConfig& config, std::size_t n, std::uint64_t seed,
                             Exec exec = Exec::parallel);

}  // namespace cdlab
