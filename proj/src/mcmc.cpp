#include "cdlab/mcmc.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cdlab/error.hpp"

namespace cdlab {

namespace {

void validate(const ScoreField& target, const Schedule& sched, const AnnealConfig& config, std::size_t n) {
  if (n == 0) throw std::invalid_argument("annealed_sample: n must be >= 1");
  if (config.steps_per_level < 1) throw std::invalid_argument("annealed_sample: steps_per_level must be >= 1");
  if (config.final_steps < 0) throw std::invalid_argument("annealed_sample: final_steps must be >= 0");
  if (!(config.step_scale > 0.0)) throw std::invalid_argument("annealed_sample: step_scale must be > 0");
  if (target.steps() != sched.steps()) throw std::invalid_argument("annealed_sample: field and schedule disagree on T");
}

int level_steps(const AnnealConfig& config, int t) {
  return config.steps_per_level + (t == 0 ? config.final_steps : 0);
}

// Level 0 is the last level, so its extra steps extend the key range without collisions.
std::uint64_t step_key(const Schedule& sched, const AnnealConfig& config, int t, int k) {
  return static_cast<std::uint64_t>(sched.steps() - t) * static_cast<std::uint64_t>(config.steps_per_level) +
         static_cast<std::uint64_t>(k) + 1;
}

AnnealResult finish(std::vector<Vec2>& x, std::vector<char>& dead, const AnnealConfig& config) {
  AnnealResult r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (dead[i]) {
      ++r.diverged;
    } else {
      r.samples.push_back(x[i]);
    }
  }
  if (double(r.diverged) > config.max_diverged_fraction * double(x.size())) {
    throw DivergenceError("annealed MCMC: " + std::to_string(r.diverged) + " of " + std::to_string(x.size()) +
                          " chains diverged");
  }
  return r;
}

}  // namespace

Vec2 ula_step(const Vec2& x, const std::function<Vec2(const Vec2&)>& score, double eps, RngStream& rng) {
  if (!(eps > 0.0)) throw std::invalid_argument("ula_step: eps must be > 0");
  const Vec2 y = ula_step(x, score(x), eps, rng.normal2());
  if (!is_finite(y)) throw DivergenceError("ULA produced a non-finite state");
  return y;
}

double anneal_step_size(const Schedule& sched, const AnnealConfig& config, int t) {
  return config.step_scale * (1.0 - sched.alpha(t < 1 ? 1 : t));
}

AnnealResult annealed_sample(const ScoreField& target, const Schedule& sched, const AnnealConfig& config,
                             std::size_t n, std::uint64_t seed, Exec exec) {
  validate(target, sched, config, n);
  const int T = sched.steps();
  std::vector<Vec2> x(n);
  std::vector<char> dead(n, 0);
  for (std::size_t i = 0; i < n; ++i) x[i] = counter_normal2(seed, i, 0);
  for (int t = T; t >= 0; --t) {
    const double eps = anneal_step_size(sched, config, t);
    for_each_index(chunk_count(n), exec, [&](std::size_t c) {
      const std::size_t lo = c * kReductionChunk;
      const std::size_t len = std::min(kReductionChunk, n - lo);
      std::span<Vec2> xs(x.data() + lo, len);
      std::vector<Vec2> s(len);
      for (int k = 0; k < level_steps(config, t); ++k) {
        target.eval_batch(xs, t, s);
        const std::uint64_t key = step_key(sched, config, t, k);
        for (std::size_t j = 0; j < len; ++j) {
          if (dead[lo + j]) continue;
          const Vec2 y = ula_step(xs[j], s[j], eps, counter_normal2(seed, lo + j, key));
          if (is_finite(y)) {
            xs[j] = y;
          } else {
            dead[lo + j] = 1;
          }
        }
      }
    });
  }
  return finish(x, dead, config);
}

AnnealResult annealed_sample_reference(const ScoreField& target, const Schedule& sched, const AnnealConfig& config,
                                       std::size_t n, std::uint64_t seed) {
  validate(target, sched, config, n);
  const int T = sched.steps();
  std::vector<Vec2> x(n);
  std::vector<char> dead(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 xi = counter_normal2(seed, i, 0);
    for (int t = T; t >= 0 && !dead[i]; --t) {
      const double eps = anneal_step_size(sched, config, t);
      for (int k = 0; k < level_steps(config, t); ++k) {
        const Vec2 y = ula_step(xi, target(xi, t), eps, counter_normal2(seed, i, step_key(sched, config, t, k)));
        if (!is_finite(y)) {
          dead[i] = 1;
          break;
        }
        xi = y;
      }
    }
    x[i] = xi;
  }
  return finish(x, dead, config);
}

AnnealResult annealed_sample(std::span<const double> lambda, std::span<const ScoreField> models,
                             const Schedule& sched, const AnnealConfig& config, std::size_t n, std::uint64_t seed,
                             Exec exec) {
  return annealed_sample(ScoreField::combo({models.begin(), models.end()}, {lambda.begin(), lambda.end()}), sched,
                         config, n, seed, exec);
}

}  // namespace cdlab
