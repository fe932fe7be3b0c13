#include "cdlab/divergence.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "cdlab/error.hpp"

namespace cdlab {

namespace {

Estimate mean_and_error(std::span<const double> v) {
  Estimate e;
  e.n_samples = v.size();
  if (v.empty()) return e;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  e.value = mean;
  e.standard_error = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1) / double(v.size())) : 0.0;
  return e;
}

KlEstimate to_kl(const Estimate& e, int steps) { return {e.value, e.standard_error, e.n_samples, steps}; }

}  // namespace

KlEstimate pathwise_kl(const TrajectoryBatch& traj, const ScoreField& s_p, const ScoreField& s_q,
                       const Schedule& sched, Exec exec) {
  const int T = sched.steps();
  if (traj.steps != T || s_p.steps() != T || s_q.steps() != T) {
    throw std::invalid_argument("pathwise_kl: trajectories, fields and schedule disagree on T");
  }
  if (traj.n == 0) throw std::invalid_argument("pathwise_kl: no trajectories");
  std::vector<double> weight(static_cast<std::size_t>(T) + 1, 0.0);
  for (int t = 2; t <= T; ++t) weight[static_cast<std::size_t>(t)] = pathwise_weight(sched.noise(), sched.variance(), t);

  const std::size_t n = traj.n;
  std::vector<double> total(n, 0.0);
  for_each_index(chunk_count(n), exec, [&](std::size_t c) {
    const std::size_t lo = c * kReductionChunk;
    const std::size_t len = std::min(kReductionChunk, n - lo);
    std::vector<Vec2> sp(len);
    std::vector<Vec2> sq(len);
    for (int t = T; t >= 2; --t) {
      const auto xs = traj.level(t).subspan(lo, len);
      s_p.eval_batch(xs, t, sp);
      s_q.eval_batch(xs, t, sq);
      const double w = weight[static_cast<std::size_t>(t)];
      for (std::size_t k = 0; k < len; ++k) total[lo + k] += w * squared_norm(sp[k] - sq[k]);
    }
  });
  return to_kl(mean_and_error(total), T);
}

KlEstimate pathwise_kl(const ScoreField& s_p, const ScoreField& s_q, std::size_t n_traj, const Schedule& sched,
                       std::uint64_t seed, Exec exec) {
  for (int t = 2; t <= sched.steps(); ++t) pathwise_weight(sched.noise(), sched.variance(), t);  // validate first
  return pathwise_kl(sample_trajectories(s_p, n_traj, sched, seed, exec), s_p, s_q, sched, exec);
}

std::vector<KlEstimate> pointwise_kl(const ScoreField& s_p, std::span<const ScoreField> s_qs,
                                     std::span<const Vec2> p0, const Schedule& sched, std::uint64_t seed,
                                     Exec exec) {
  if (p0.empty()) throw std::invalid_argument("pointwise_kl: empty sample set");
  const int T = sched.steps();
  if (s_p.steps() != T) throw std::invalid_argument("pointwise_kl: field and schedule disagree on T");
  for (const auto& q : s_qs) {
    if (q.steps() != T) throw std::invalid_argument("pointwise_kl: field and schedule disagree on T");
  }
  const std::size_t n = p0.size();
  const std::size_t m = s_qs.size();
  std::vector<double> total(n * m, 0.0);  // sample-major
  for_each_index(chunk_count(n), exec, [&](std::size_t c) {
    const std::size_t lo = c * kReductionChunk;
    const std::size_t len = std::min(kReductionChunk, n - lo);
    std::vector<Vec2> xt(len);
    std::vector<Vec2> sp(len);
    std::vector<Vec2> sq(len);
    for (int t = 1; t <= T; ++t) {
      for (std::size_t k = 0; k < len; ++k) {
        xt[k] = forward_noise(p0[lo + k], t, sched, counter_normal2(seed, lo + k, static_cast<std::uint64_t>(t)));
      }
      s_p.eval_batch(xt, t, sp);
      const double w = sched.pointwise_weight(t) * sched.alpha(t);
      for (std::size_t j = 0; j < m; ++j) {
        s_qs[j].eval_batch(xt, t, sq);
        for (std::size_t k = 0; k < len; ++k) total[(lo + k) * m + j] += w * squared_norm(sp[k] - sq[k]);
      }
    }
  });
  std::vector<KlEstimate> out;
  std::vector<double> column(n);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = total[i * m + j];
    out.push_back(to_kl(mean_and_error(column), T));
  }
  return out;
}

KlEstimate pointwise_kl(const ScoreField& s_p, const ScoreField& s_q, std::span<const Vec2> p0,
                        const Schedule& sched, std::uint64_t seed, Exec exec) {
  return pointwise_kl(s_p, std::span<const ScoreField>(&s_q, 1), p0, sched, seed, exec).front();
}

Estimate cross_entropy(const LogDensity& log_p, std::span<const Vec2> q_samples) {
  if (q_samples.empty()) throw std::invalid_argument("cross_entropy: empty sample set");
  std::vector<double> v(q_samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lp = log_p(q_samples[i]);
    if (!std::isfinite(lp)) throw InfeasibleError("support violation: log p is not finite at a sample of q");
    v[i] = -lp;
  }
  return mean_and_error(v);
}

Estimate forward_kl(const GaussianMixture& q, const LogDensity& log_p, std::span<const Vec2> q_samples) {
  if (q_samples.empty()) throw std::invalid_argument("forward_kl: empty sample set");
  std::vector<double> v(q_samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lp = log_p(q_samples[i]);
    if (!std::isfinite(lp)) throw InfeasibleError("support violation: log p is not finite at a sample of q");
    v[i] = q.log_density(q_samples[i]) - lp;
  }
  return mean_and_error(v);
}

Estimate forward_kl(const GaussianMixture& q, const LogDensity& log_p, std::size_t n, std::uint64_t seed) {
  const auto xs = q.sample(n, seed);
  return forward_kl(q, log_p, xs);
}

double mixture_log_density(std::span<const GaussianMixture> models, std::span<const double> weights, const Vec2& x) {
  double hi = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(models.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    terms[i] = std::log(weights[i]) + models[i].log_density(x);
    hi = std::max(hi, terms[i]);
  }
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double v : terms) s += std::exp(v - hi);
  return hi + std::log(s);
}

Estimate mixture_entropy(std::span<const double> weights, std::span<const GaussianMixture> components,
                         std::size_t n, std::uint64_t seed) {
  if (weights.size() != components.size() || components.empty()) {
    throw std::invalid_argument("mixture_entropy: one weight per component required");
  }
  require_simplex(weights);
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j) {
    RngStream rng(seed, j);
    const double u = rng.uniform();
    std::size_t k = 0;
    double acc = weights[0];
    while (u >= acc && k + 1 < weights.size()) acc += weights[++k];
    const Vec2 x = components[k].sample(rng);
    v[j] = -mixture_log_density(components, weights, x);
  }
  return mean_and_error(v);
}

}  // namespace cdlab
