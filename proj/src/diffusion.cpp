#include "cdlab/diffusion.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "cdlab/error.hpp"

namespace cdlab {

namespace {

[[noreturn]] void throw_nonfinite(int t, std::size_t i) {
  throw DivergenceError("non-finite score at step t=" + std::to_string(t) + " (trajectory " + std::to_string(i) + ")");
}

// Runs the reverse chain for one level over the whole batch.
void reverse_level(const ScoreField& score, const Schedule& sched, std::uint64_t seed, int t,
                   std::span<const Vec2> from, std::span<Vec2> to, Vec2* noise_out, Vec2* score_out, Exec exec) {
  const std::size_t n = from.size();
  for_each_index(chunk_count(n), exec, [&](std::size_t c) {
    const std::size_t lo = c * kReductionChunk;
    const std::size_t len = std::min(kReductionChunk, n - lo);
    std::vector<Vec2> s(len);
    score.eval_batch(from.subspan(lo, len), t, s);
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t i = lo + k;
      if (!is_finite(s[k])) throw_nonfinite(t, i);
      const Vec2 eps = trajectory_noise(seed, i, t);
      if (noise_out) noise_out[i] = eps;
      if (score_out) score_out[i] = s[k];
      to[i] = ddim_step(from[i], t, s[k], sched, eps);
    }
  });
}

}  // namespace

Vec2 forward_noise(const Vec2& x0, int t, const Schedule& sched, RngStream& rng) {
  if (t < 0 || t > sched.steps()) throw std::out_of_range("forward_noise: time index out of range");
  return forward_noise(x0, t, sched, rng.normal2());
}

Vec2 ddim_step(const Vec2& x_t, int t, const ScoreField& score, const Schedule& sched, RngStream& rng) {
  if (t < 1 || t > sched.steps()) throw std::out_of_range("ddim_step: time index out of range");
  const Vec2 s = score(x_t, t);
  if (!is_finite(s)) throw_nonfinite(t, 0);
  return ddim_step(x_t, t, s, sched, rng.normal2());
}

TrajectoryBatch sample_trajectories(const ScoreField& score, std::size_t n, const Schedule& sched,
                                    std::uint64_t seed, Exec exec, bool record_scores) {
  if (n == 0) throw std::invalid_argument("sample_trajectories: n must be >= 1");
  if (score.steps() != sched.steps()) throw std::invalid_argument("score field and schedule disagree on T");
  const int T = sched.steps();
  TrajectoryBatch b;
  b.steps = T;
  b.n = n;
  b.states.resize(static_cast<std::size_t>(T + 1) * n);
  b.noises.resize(static_cast<std::size_t>(T) * n);
  if (record_scores) b.scores.resize(static_cast<std::size_t>(T) * n);
  Vec2* xT = b.states.data() + static_cast<std::size_t>(T) * n;
  for (std::size_t i = 0; i < n; ++i) xT[i] = trajectory_noise(seed, i, T + 1);
  for (int t = T; t >= 1; --t) {
    std::span<Vec2> all(b.states);
    reverse_level(score, sched, seed, t, all.subspan(static_cast<std::size_t>(t) * n, n),
                  all.subspan(static_cast<std::size_t>(t - 1) * n, n), b.noises.data() + static_cast<std::size_t>(t - 1) * n,
                  record_scores ? b.scores.data() + static_cast<std::size_t>(t - 1) * n : nullptr, exec);
  }
  return b;
}

TrajectoryBatch sample_trajectories_reference(const ScoreField& score, std::size_t n, const Schedule& sched,
                                              std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_trajectories: n must be >= 1");
  if (score.steps() != sched.steps()) throw std::invalid_argument("score field and schedule disagree on T");
  const int T = sched.steps();
  TrajectoryBatch b;
  b.steps = T;
  b.n = n;
  b.states.resize(static_cast<std::size_t>(T + 1) * n);
  b.noises.resize(static_cast<std::size_t>(T) * n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 x = trajectory_noise(seed, i, T + 1);
    b.states[static_cast<std::size_t>(T) * n + i] = x;
    for (int t = T; t >= 1; --t) {
      const Vec2 s = score(x, t);
      if (!is_finite(s)) throw_nonfinite(t, i);
      const Vec2 eps = trajectory_noise(seed, i, t);
      b.noises[static_cast<std::size_t>(t - 1) * n + i] = eps;
      x = ddim_step(x, t, s, sched, eps);
      b.states[static_cast<std::size_t>(t - 1) * n + i] = x;
    }
  }
  return b;
}

std::vector<Vec2> sample_endpoints(const ScoreField& score, std::size_t n, const Schedule& sched, std::uint64_t seed,
                                   Exec exec) {
  if (n == 0) throw std::invalid_argument("sample_endpoints: n must be >= 1");
  if (score.steps() != sched.steps()) throw std::invalid_argument("score field and schedule disagree on T");
  const int T = sched.steps();
  std::vector<Vec2> cur(n);
  std::vector<Vec2> next(n);
  for (std::size_t i = 0; i < n; ++i) cur[i] = trajectory_noise(seed, i, T + 1);
  for (int t = T; t >= 1; --t) {
    reverse_level(score, sched, seed, t, cur, next, nullptr, nullptr, exec);
    cur.swap(next);
  }
  return cur;
}

std::vector<Vec2> noise_endpoint_samples(std::span<const Vec2> x0s, int t, const Schedule& sched,
                                         std::uint64_t seed) {
  if (t < 0 || t > sched.steps()) throw std::out_of_range("noise_endpoint_samples: time index out of range");
  std::vector<Vec2> out(x0s.size());
  for (std::size_t i = 0; i < x0s.size(); ++i) {
    out[i] = t == 0 ? x0s[i] : forward_noise(x0s[i], t, sched, counter_normal2(seed, i, static_cast<std::uint64_t>(t)));
  }
  return out;
}

void write_endpoints_csv(const std::string& path, std::span<const Vec2> points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "x,y,trajectory_id\n" << std::setprecision(17);
  for (std::size_t i = 0; i < points.size(); ++i) out << points[i].x << ',' << points[i].y << ',' << i << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace cdlab
