#include "cdlab/compose.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cdlab/diffusion.hpp"
#include "cdlab/error.hpp"
#include "cdlab/log.hpp"

namespace cdlab {

std::vector<double> simplex_project(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("simplex_project: empty vector");
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument("simplex_project: non-finite input");
  }
  std::vector<char> active(v.size(), 1);
  std::size_t count = v.size();
  double tau = 0.0;
  for (;;) {
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (active[i]) sum += v[i];
    }
    tau = (sum - 1.0) / double(count);
    bool removed = false;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (active[i] && v[i] - tau <= 0.0) {
        active[i] = 0;
        --count;
        removed = true;
      }
    }
    if (!removed) break;
  }
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (active[i]) out[i] = v[i] - tau;
  }
  return out;
}

std::vector<double> entropy_softmax_lambda(std::span<const double> entropies) {
  if (entropies.empty()) throw std::invalid_argument("entropy_softmax_lambda: no models");
  const double hi = *std::max_element(entropies.begin(), entropies.end());
  std::vector<double> w(entropies.size());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) z += (w[i] = std::exp(entropies[i] - hi));
  for (double& x : w) x /= z;
  return w;
}

std::vector<double> entropy_softmax_lambda(std::span<const GaussianMixture> models, std::size_t n,
                                           std::uint64_t seed) {
  std::vector<double> h;
  for (std::size_t i = 0; i < models.size(); ++i) h.push_back(entropy(models[i], n, derive_seed(seed, i)).value);
  return entropy_softmax_lambda(h);
}

std::vector<double> simplex_dual_step(std::span<const double> lambda, std::span<const double> values, double eta) {
  if (lambda.size() != values.size()) throw std::invalid_argument("simplex_dual_step: size mismatch");
  std::vector<double> v(lambda.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = lambda[i] + eta * values[i];
  return simplex_project(v);
}

namespace {

double linf_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::vector<double> kl_values(const std::vector<KlEstimate>& kls) {
  std::vector<double> v;
  for (const auto& k : kls) {
    if (!std::isfinite(k.value)) {
      throw InfeasibleError("KL estimate is not finite; the models may not overlap");
    }
    v.push_back(k.value);
  }
  return v;
}

void require_models(std::span<const ScoreField> models, const Schedule& sched) {
  if (models.size() < 2) throw std::invalid_argument("composition needs at least two models");
  for (const auto& m : models) {
    if (m.steps() != sched.steps()) throw std::invalid_argument("models and schedule disagree on T");
  }
}

// Tracks the stopping rule; returns true when the loop should stop.
struct Convergence {
  const DualSchedule& rule;
  int stable = 0;
  bool update(double delta) {
    stable = delta < rule.tol ? stable + 1 : 0;
    return stable >= rule.patience;
  }
};

std::string format_lambda(std::span<const double> lambda) {
  std::string s = "(";
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(lambda[i]);
  }
  return s + ")";
}

}  // namespace

ComposeResult dual_only_and(std::span<const ScoreField> models, const Schedule& sched, const DualOnlyConfig& config,
                            Exec exec) {
  require_models(models, sched);
  const std::size_t m = models.size();
  ComposeResult r;
  r.lambda.assign(m, 1.0 / double(m));
  Convergence conv{config.dual};
  auto evaluate = [&](int round, std::vector<Vec2>* samples) {
    const std::uint64_t s = derive_seed(config.seed, config.fresh_noise ? static_cast<std::uint64_t>(round) : 0);
    const ScoreField field = ScoreField::combo({models.begin(), models.end()}, r.lambda);
    auto xs = sample_endpoints(field, config.n_samples, sched, derive_seed(s, 1), exec);
    auto kls = pointwise_kl(field, models, xs, sched, derive_seed(s, 2), exec);
    if (samples) *samples = std::move(xs);
    return kls;
  };
  for (int h = 0; h < config.dual.max_rounds; ++h) {
    auto kls = evaluate(h, nullptr);
    const auto next = simplex_dual_step(r.lambda, kl_values(kls), config.dual.eta);
    r.history.push_back({r.lambda, kls});
    const double delta = linf_distance(next, r.lambda);
    r.lambda = next;
    r.rounds = h + 1;
    log_debug("dual-only round " + std::to_string(h) + " lambda " + format_lambda(r.lambda));
    if (conv.update(delta)) {
      r.converged = true;
      break;
    }
  }
  r.final_kls = evaluate(r.rounds, &r.samples);
  kl_values(r.final_kls);
  return r;
}

ComposeResult primal_dual_and(std::span<const ScoreField> models, const Schedule& sched,
                              const PrimalDualConfig& config, Exec exec) {
  require_models(models, sched);
  const std::size_t m = models.size();
  ComposeResult r;
  if (config.lambda_init.empty()) {
    r.lambda.assign(m, 1.0 / double(m));
  } else {
    if (config.lambda_init.size() != m) throw std::invalid_argument("lambda_init needs one weight per model");
    require_simplex(config.lambda_init);
    r.lambda = config.lambda_init;
  }
  r.net = std::make_shared<MlpScoreNet>(config.net, sched.steps(), derive_seed(config.seed, 1));
  Adam adam(r.net->parameter_count(), config.train.adam);
  Convergence conv{config.dual};
  std::vector<Vec2> pool;

  auto refresh_pool = [&]() {
    const ScoreField target = ScoreField::combo({models.begin(), models.end()}, r.lambda);
    pool = annealed_sample(target, sched, config.mcmc, config.n_mcmc, derive_seed(config.seed, 2), exec).samples;
    const auto* data = &pool;
    const Sampler sampler = [data](std::size_t n, std::uint64_t seed) {
      RngStream rng(seed, 0);
      std::vector<Vec2> out(n);
      const int hi = static_cast<int>(data->size()) - 1;
      for (auto& x : out) x = (*data)[static_cast<std::size_t>(rng.uniform_int(0, hi))];
      return out;
    };
    return sampler;
  };
  auto primal = [&](int h) {
    const Sampler sampler = refresh_pool();
    TrainOptions opts = config.train;
    opts.steps = (h == 0 ? config.warm_start_steps : 0) + config.train.steps;
    opts.seed = derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(h));
    train(*r.net, sampler, sched, opts, &adam, exec);
  };
  auto final_fit = [&](int h) {
    const Sampler sampler = refresh_pool();
    const int total = config.final_steps > 0 ? config.final_steps : config.train.steps;
    const int segments = config.final_lr > 0.0 ? std::min(10, total) : 1;
    const double lr0 = config.train.adam.lr;
    for (int k = 0; k < segments; ++k) {
      if (segments > 1) adam.set_lr(lr0 * std::pow(config.final_lr / lr0, double(k) / double(segments - 1)));
      TrainOptions opts = config.train;
      opts.steps = total / segments + (k < total % segments ? 1 : 0);
      opts.seed = derive_seed(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(h)), k);
      train(*r.net, sampler, sched, opts, &adam, exec);
    }
    adam.set_lr(lr0);
  };
  auto dual_kls = [&]() {
    const ScoreField learned = ScoreField::learned(r.net);
    const std::size_t n = std::min(config.n_kl, pool.size());
    return pointwise_kl(learned, models, std::span<const Vec2>(pool).first(n), sched, derive_seed(config.seed, 3),
                        exec);
  };

  for (int h = 0; h < config.dual.max_rounds; ++h) {
    primal(h);
    auto kls = dual_kls();
    const auto values = kl_values(kls);
    r.history.push_back({r.lambda, kls});
    r.rounds = h + 1;
    if (config.freeze_dual) break;
    const auto next = simplex_dual_step(r.lambda, values, config.dual.eta);
    const double delta = linf_distance(next, r.lambda);
    r.lambda = next;
    log_debug("primal-dual round " + std::to_string(h) + " lambda " + format_lambda(r.lambda));
    if (conv.update(delta)) {
      r.converged = true;
      break;
    }
  }
  if (!config.freeze_dual) {
    // Fit the network once more at the final weights before reporting.
    final_fit(r.rounds);
  } else {
    r.converged = true;
  }
  r.final_kls = dual_kls();
  kl_values(r.final_kls);
  r.samples = sample_endpoints(ScoreField::learned(r.net), config.n_endpoint, sched, derive_seed(config.seed, 4), exec);
  return r;
}

std::vector<Vec2> sample_mixture(std::span<const GaussianMixture> models, std::span<const double> lambda,
                                 std::size_t n, std::uint64_t seed) {
  if (models.size() != lambda.size() || models.empty()) throw std::invalid_argument("sample_mixture: size mismatch");
  require_simplex(lambda);
  std::vector<Vec2> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    RngStream rng(seed, j);
    const double u = rng.uniform();
    std::size_t k = 0;
    double acc = lambda[0];
    while (u >= acc && k + 1 < lambda.size()) acc += lambda[++k];
    out[j] = models[k].sample(rng);
  }
  return out;
}

MixtureResult mixture_or(std::span<const GaussianMixture> models, const MixtureConfig& config) {
  const std::size_t m = models.size();
  if (m < 2) throw std::invalid_argument("mixture_or needs at least two models");
  if (config.n_samples < 2) throw std::invalid_argument("mixture_or needs at least two samples per model");
  const std::size_t n = config.n_samples;

  // log q_j at every draw of every model, and log q_i at its own draws.
  std::vector<std::vector<double>> logq(m * m);  // [i * m + j]: log q_j on draws of q_i
  for (std::size_t i = 0; i < m; ++i) {
    const auto xs = models[i].sample(n, derive_seed(config.seed, i));
    for (std::size_t j = 0; j < m; ++j) {
      auto& col = logq[i * m + j];
      col.resize(n);
      for (std::size_t k = 0; k < n; ++k) col[k] = models[j].log_density(xs[k]);
    }
  }

  auto evaluate = [&](std::span<const double> lambda, std::vector<Estimate>& ce, std::vector<Estimate>& fkl) {
    ce.assign(m, {});
    fkl.assign(m, {});
    std::vector<double> loglam(m);
    for (std::size_t j = 0; j < m; ++j) {
      loglam[j] = lambda[j] > 0.0 ? std::log(lambda[j]) : -std::numeric_limits<double>::infinity();
    }
    std::vector<double> a(n);
    std::vector<double> b(n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) hi = std::max(hi, loglam[j] + logq[i * m + j][k]);
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          if (lambda[j] > 0.0) s += std::exp(loglam[j] + logq[i * m + j][k] - hi);
        }
        const double lmix = hi + std::log(s);
        if (!std::isfinite(lmix)) throw InfeasibleError("support violation: mixture density vanishes at a draw");
        a[k] = -lmix;
        b[k] = logq[i * m + i][k] - lmix;
      }
      auto stats = [&](const std::vector<double>& v) {
        Estimate e;
        e.n_samples = n;
        double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(n);
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        e.value = mean;
        e.standard_error = std::sqrt(ss / double(n - 1) / double(n));
        return e;
      };
      ce[i] = stats(a);
      fkl[i] = stats(b);
    }
  };
  auto mixture_entropy_of = [&](std::span<const double> lambda, const std::vector<Estimate>& ce) {
    Estimate h;
    h.n_samples = n * m;
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      h.value += lambda[i] * ce[i].value;
      var += lambda[i] * lambda[i] * ce[i].standard_error * ce[i].standard_error;
    }
    h.standard_error = std::sqrt(var);
    return h;
  };

  MixtureResult r;
  r.lambda.assign(m, 1.0 / double(m));
  Convergence conv{config.dual};
  std::vector<Estimate> ce;
  std::vector<Estimate> fkl;
  evaluate(r.lambda, ce, fkl);
  r.uniform_entropy = mixture_entropy_of(r.lambda, ce);
  for (int h = 0; h < config.dual.max_rounds; ++h) {
    if (h > 0) evaluate(r.lambda, ce, fkl);
    std::vector<double> values;
    for (const auto& e : ce) values.push_back(e.value);
    const auto next = simplex_dual_step(r.lambda, values, config.dual.eta);
    r.history.push_back({r.lambda, ce, fkl});
    const double delta = linf_distance(next, r.lambda);
    r.lambda = next;
    r.rounds = h + 1;
    if (conv.update(delta)) {
      r.converged = true;
      break;
    }
  }
  evaluate(r.lambda, ce, fkl);
  r.final_forward_kl = fkl;
  r.entropy = mixture_entropy_of(r.lambda, ce);
  return r;
}

}  // namespace cdlab
