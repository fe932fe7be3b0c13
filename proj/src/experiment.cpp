#include "cdlab/experiment.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <system_error>

#include "cdlab/error.hpp"
#include "cdlab/log.hpp"
#include "cdlab/render.hpp"

namespace cdlab {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Row-oriented CSV text with round-trip precision.
class Csv {
 public:
  explicit Csv(const std::string& header) { out_ << std::setprecision(17) << header << '\n'; }

  template <typename... Ts>
  void row(const Ts&... fields) {
    bool first = true;
    ((out_ << (first ? "" : ",") << fields, first = false), ...);
    out_ << '\n';
  }
  /// A row from a leading key followed by a list of numbers.
  void row_list(const std::string& key, const std::vector<double>& values) {
    out_ << key;
    for (double v : values) out_ << ',' << v;
    out_ << '\n';
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

struct Outputs {
  std::vector<std::pair<std::string, std::string>> files;
  std::vector<Vec2> samples;
  std::vector<GridField> contours;
  Bounds bounds;
};

json to_json(const Vec2& v) { return json::array({v.x, v.y}); }
json to_json(const Sym2& s) { return json::array({json::array({s.xx, s.xy}), json::array({s.xy, s.yy})}); }
json to_json(const KlEstimate& k) {
  return {{"value", k.value}, {"stderr", k.standard_error}, {"n", k.n_samples}, {"T", k.steps}};
}
json to_json(const Estimate& e) { return {{"value", e.value}, {"stderr", e.standard_error}, {"n", e.n_samples}}; }
template <typename T>
json to_json_list(const std::vector<T>& xs) {
  json a = json::array();
  for (const auto& x : xs) a.push_back(to_json(x));
  return a;
}

double linf(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

/// (max - min) / mean of the KL values.
double spread(const std::vector<KlEstimate>& kls) {
  double lo = kls.front().value;
  double hi = lo;
  double mean = 0.0;
  for (const auto& k : kls) {
    lo = std::min(lo, k.value);
    hi = std::max(hi, k.value);
    mean += k.value / double(kls.size());
  }
  return (hi - lo) / mean;
}

std::string indexed_header(const std::string& lead, const std::vector<std::string>& stems, std::size_t m) {
  std::string h = lead;
  for (const auto& s : stems) {
    for (std::size_t i = 0; i < m; ++i) h += "," + s + "_" + std::to_string(i);
  }
  return h;
}

std::string samples_csv(std::span<const Vec2> xs) {
  Csv csv("x,y,trajectory_id");
  for (std::size_t i = 0; i < xs.size(); ++i) csv.row(xs[i].x, xs[i].y, i);
  return csv.str();
}

std::vector<GridField> grids_for(const std::vector<GaussianMixture>& models, const Bounds& b, int n) {
  std::vector<GridField> g;
  for (const auto& m : models) g.push_back(GridField::from_mixture(m, b, n, n));
  return g;
}

bool all_single(const std::vector<GaussianMixture>& models) {
  for (const auto& m : models) {
    if (!m.is_single()) return false;
  }
  return true;
}

json moments(std::span<const Vec2> xs) {
  const Vec2 mean = sample_mean(xs);
  return {{"mean", to_json(mean)}, {"cov", to_json(sample_covariance(xs, mean))}, {"n", xs.size()}};
}

std::vector<ScoreField> analytic_fields(const std::vector<GaussianMixture>& models, const Schedule& sched) {
  std::vector<ScoreField> f;
  for (const auto& m : models) f.push_back(ScoreField::analytic(m, sched.noise()));
  return f;
}

json run_compose_and(const ExperimentConfig& c, const RunOptions& opt, Outputs& out) {
  const Schedule sched = c.schedule.build();
  const auto fields = analytic_fields(c.models, sched);
  const std::size_t m = c.models.size();
  out.bounds = auto_bounds(c.models, 4.0);
  const auto grids = grids_for(c.models, out.bounds, c.oracle_grid);
  const MinimaxResult oracle = grid_minimax_lambda(grids, c.oracle);
  log_info("grid oracle lambda " + json(oracle.lambda).dump());

  const ComposeResult r = opt.dual_only ? dual_only_and(fields, sched, c.dual_only)
                                        : primal_dual_and(fields, sched, c.primal_dual);

  // Equal-weight baseline under the dual-only estimator.
  const std::vector<double> uniform(m, 1.0 / double(m));
  const std::uint64_t us = derive_seed(c.dual_only.seed, 0);
  const ScoreField ufield = ScoreField::combo(fields, uniform);
  const auto uxs = sample_endpoints(ufield, c.dual_only.n_samples, sched, derive_seed(us, 1));
  const auto ukls = pointwise_kl(ufield, fields, uxs, sched, derive_seed(us, 2));

  const GridProduct at_final = grid_product(grids, r.lambda);
  const GridProduct at_oracle = grid_product(grids, oracle.lambda);
  std::vector<double> grid_kls;
  for (const auto& g : grids) grid_kls.push_back(grid_kl(at_final.field, g));

  Csv hist(indexed_header("round", {"lambda"}, m));
  Csv klr("iteration,constraint_index,quantity,value,stderr");
  for (std::size_t h = 0; h < r.history.size(); ++h) {
    hist.row_list(std::to_string(h), r.history[h].lambda);
    for (std::size_t i = 0; i < m; ++i) {
      klr.row(h, i, "pointwise_kl", r.history[h].kls[i].value, r.history[h].kls[i].standard_error);
    }
  }
  hist.row_list(std::to_string(r.rounds), r.lambda);
  for (std::size_t i = 0; i < m; ++i) {
    klr.row(r.rounds, i, "pointwise_kl", r.final_kls[i].value, r.final_kls[i].standard_error);
  }
  out.files.emplace_back("lambda_history.csv", hist.str());
  out.files.emplace_back("kl_report.csv", klr.str());
  if (r.net) out.files.emplace_back("model.json", r.net->to_json());
  out.samples = r.samples;
  out.contours = grids;

  json s;
  s["algorithm"] = opt.dual_only ? "dual-only" : "primal-dual";
  s["models"] = c.model_names;
  s["lambda"] = r.lambda;
  s["rounds"] = r.rounds;
  s["converged"] = r.converged;
  s["kls"] = to_json_list(r.final_kls);
  s["kl_spread"] = spread(r.final_kls);
  s["uniform_kls"] = to_json_list(ukls);
  s["uniform_kl_spread"] = spread(ukls);
  s["samples"] = moments(r.samples);
  s["oracle"] = {{"lambda", oracle.lambda},
                 {"max_kl", oracle.max_kl},
                 {"kls", oracle.kls},
                 {"linf_distance", linf(r.lambda, oracle.lambda)},
                 {"product_mean", to_json(at_oracle.field.mean())},
                 {"product_cov", to_json(at_oracle.field.covariance())},
                 {"product_mean_at_lambda", to_json(at_final.field.mean())},
                 {"product_cov_at_lambda", to_json(at_final.field.covariance())},
                 {"grid_kls_at_lambda", grid_kls},
                 {"grid", c.oracle_grid}};
  if (all_single(c.models)) {
    std::vector<Gaussian> gs;
    for (const auto& mdl : c.models) gs.push_back(mdl.components().front());
    const Gaussian prod = weighted_gaussian_product(gs, r.lambda);
    s["closed_form_product_at_lambda"] = {{"mean", to_json(prod.mean())}, {"cov", to_json(prod.cov())}};
  }
  return s;
}

json run_compose_or(const ExperimentConfig& c, Outputs& out) {
  const std::size_t m = c.models.size();
  const MixtureResult r = mixture_or(c.models, c.mixture);
  std::vector<Estimate> entropies;
  std::vector<double> h;
  for (std::size_t i = 0; i < m; ++i) {
    entropies.push_back(entropy(c.models[i], c.mixture.n_samples, derive_seed(c.mixture.seed, 100 + i)));
    h.push_back(entropies.back().value);
  }
  const auto oracle = entropy_softmax_lambda(h);

  Csv hist(indexed_header("round", {"lambda"}, m));
  Csv klr("iteration,constraint_index,quantity,value,stderr");
  for (std::size_t k = 0; k < r.history.size(); ++k) {
    hist.row_list(std::to_string(k), r.history[k].lambda);
    for (std::size_t i = 0; i < m; ++i) {
      klr.row(k, i, "cross_entropy", r.history[k].cross_entropy[i].value, r.history[k].cross_entropy[i].standard_error);
      klr.row(k, i, "forward_kl", r.history[k].forward_kl[i].value, r.history[k].forward_kl[i].standard_error);
    }
  }
  hist.row_list(std::to_string(r.rounds), r.lambda);
  for (std::size_t i = 0; i < m; ++i) {
    klr.row(r.rounds, i, "forward_kl", r.final_forward_kl[i].value, r.final_forward_kl[i].standard_error);
  }
  out.files.emplace_back("lambda_history.csv", hist.str());
  out.files.emplace_back("kl_report.csv", klr.str());
  out.samples = sample_mixture(c.models, r.lambda, c.primal_dual.n_endpoint, derive_seed(c.mixture.seed, 9));
  out.bounds = auto_bounds(c.models, 4.0);
  out.contours = grids_for(c.models, out.bounds, c.oracle_grid);

  json s;
  s["models"] = c.model_names;
  s["lambda"] = r.lambda;
  s["rounds"] = r.rounds;
  s["converged"] = r.converged;
  s["forward_kls"] = to_json_list(r.final_forward_kl);
  s["entropy"] = to_json(r.entropy);
  s["uniform_entropy"] = to_json(r.uniform_entropy);
  s["samples"] = moments(out.samples);
  s["oracle"] = {{"lambda", oracle},
                 {"model_entropies", to_json_list(entropies)},
                 {"linf_distance", linf(r.lambda, oracle)}};
  return s;
}

json run_kl_check(const ExperimentConfig& c, Outputs& out) {
  if (c.schedule.alpha == "explicit") throw ConfigError("config kl_check: needs a geometric or linear schedule");
  const auto& k = c.kl_check;
  Csv klr("steps,pair,quantity,value,stderr");
  json pairs = json::array();
  for (std::size_t j = 0; j < k.pairs.size(); ++j) {
    const auto [pi, qi] = k.pairs[j];
    const GaussianMixture& p = c.models[pi];
    const GaussianMixture& q = c.models[qi];
    const bool closed = p.is_single() && q.is_single();
    const double exact = closed ? gaussian_kl(p, q) : 0.0;
    const auto x0 = p.sample(k.n_samples, derive_seed(c.seed, 100 + j));
    json rows = json::array();
    double prev = std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (int T : k.steps) {
      ScheduleConfig sc = c.schedule;
      sc.steps = T;
      const Schedule sched = sc.build();
      const ScoreField sp = ScoreField::analytic(p, sched.noise());
      const ScoreField sq = ScoreField::analytic(q, sched.noise());
      const KlEstimate pt = pointwise_kl(sp, sq, x0, sched, derive_seed(c.seed, 200 + j));
      const KlEstimate pw = pathwise_kl(sp, sq, k.n_trajectories, sched, derive_seed(c.seed, 300 + j));
      json row = {{"T", T}, {"pointwise", to_json(pt)}, {"pathwise", to_json(pw)}};
      klr.row(T, j, "pointwise_kl", pt.value, pt.standard_error);
      klr.row(T, j, "pathwise_kl", pw.value, pw.standard_error);
      if (closed) {
        const double rel = std::abs(pt.value - exact) / exact;
        row["relative_error"] = rel;
        monotone = monotone && rel <= prev;
        prev = rel;
        klr.row(T, j, "closed_form_kl", exact, 0.0);
      }
      rows.push_back(row);
      log_info("kl-check pair " + std::to_string(j) + " T=" + std::to_string(T) + " pointwise " +
               std::to_string(pt.value) + " pathwise " + std::to_string(pw.value));
    }
    json pj = {{"p", pi}, {"q", qi}, {"estimates", rows}};
    pj["closed_form"] = closed ? json(exact) : json(nullptr);
    if (closed) pj["monotone"] = monotone;
    pairs.push_back(pj);
  }
  out.files.emplace_back("kl_report.csv", klr.str());

  ScheduleConfig sc = c.schedule;
  sc.steps = k.steps.back();
  const Schedule sched = sc.build();
  const GaussianMixture& p0 = c.models[k.pairs.front().first];
  out.samples = sample_endpoints(ScoreField::analytic(p0, sched.noise()), c.primal_dual.n_endpoint, sched,
                                 derive_seed(c.seed, 400));
  out.bounds = auto_bounds(c.models, 4.0);
  out.contours = grids_for(c.models, out.bounds, c.oracle_grid);

  json s;
  s["models"] = c.model_names;
  s["pairs"] = pairs;
  s["samples"] = moments(out.samples);
  return s;
}

json run_oracle(const ExperimentConfig& c, Outputs& out) {
  const std::size_t m = c.models.size();
  out.bounds = auto_bounds(c.models, 4.0);
  const auto grids = grids_for(c.models, out.bounds, c.oracle_grid);
  const MinimaxResult mm = grid_minimax_lambda(grids, c.oracle);
  const GridProduct prod = grid_product(grids, mm.lambda);
  const std::vector<double> uniform(m, 1.0 / double(m));
  const GridProduct uprod = grid_product(grids, uniform);
  std::vector<double> ukls;
  for (const auto& g : grids) ukls.push_back(grid_kl(uprod.field, g));

  std::vector<Estimate> entropies;
  std::vector<double> h;
  for (std::size_t i = 0; i < m; ++i) {
    entropies.push_back(entropy(c.models[i], c.mixture.n_samples, derive_seed(c.seed, 100 + i)));
    h.push_back(entropies.back().value);
  }

  Csv klr("iteration,constraint_index,quantity,value,stderr");
  for (std::size_t i = 0; i < m; ++i) {
    klr.row(0, i, "grid_kl", mm.kls[i], 0.0);
    klr.row(0, i, "grid_kl_uniform", ukls[i], 0.0);
  }
  out.files.emplace_back("kl_report.csv", klr.str());
  out.contours = grids;

  json s;
  s["models"] = c.model_names;
  s["grid"] = c.oracle_grid;
  s["bounds"] = {out.bounds.x_min, out.bounds.x_max, out.bounds.y_min, out.bounds.y_max};
  s["minimax"] = {{"lambda", mm.lambda},
                  {"max_kl", mm.max_kl},
                  {"kls", mm.kls},
                  {"product_mean", to_json(prod.field.mean())},
                  {"product_cov", to_json(prod.field.covariance())}};
  s["uniform"] = {{"kls", ukls}, {"product_mean", to_json(uprod.field.mean())}};
  s["entropy_softmax"] = {{"lambda", entropy_softmax_lambda(h)}, {"model_entropies", to_json_list(entropies)}};
  if (all_single(c.models)) {
    std::vector<Gaussian> gs;
    for (const auto& mdl : c.models) gs.push_back(mdl.components().front());
    const Gaussian cf = weighted_gaussian_product(gs, mm.lambda);
    s["closed_form_product"] = {{"mean", to_json(cf.mean())}, {"cov", to_json(cf.cov())}};
    json kl = json::array();
    for (std::size_t i = 0; i < m; ++i) kl.push_back(gaussian_kl(cf, gs[i]));
    s["closed_form_product"]["kls"] = kl;
  }
  return s;
}

json run_align(const ExperimentConfig& c, Outputs& out) {
  const Schedule sched = c.schedule.build();
  const std::size_t m = c.rewards.size();
  AlignProblem problem{c.pretrained, c.rewards, c.thresholds, {}, {}};
  normalize_rewards(problem, sched, c.align.n_calib, derive_seed(c.align.seed, 1));
  const AlignResult r = run_alignment(problem, sched, c.align);

  std::vector<double> raw(m);
  for (std::size_t i = 0; i < m; ++i) raw[i] = r.lambda[i] / problem.reward_std[i];

  Csv dual(indexed_header("round", {"lambda", "slack", "ema_slack"}, m));
  Csv rewards(indexed_header("round", {"reward"}, m));
  Csv kl("round,value,stderr");
  for (std::size_t h = 0; h < r.history.size(); ++h) {
    const auto& a = r.history[h];
    std::vector<double> row = a.lambda;
    row.insert(row.end(), a.slack.begin(), a.slack.end());
    row.insert(row.end(), a.ema_slack.begin(), a.ema_slack.end());
    dual.row_list(std::to_string(h), row);
    rewards.row_list(std::to_string(h), a.mean_reward);
    kl.row(h, a.kl.value, a.kl.standard_error);
  }
  out.files.emplace_back("dual_history.csv", dual.str());
  out.files.emplace_back("rewards.csv", rewards.str());
  out.files.emplace_back("kl.csv", kl.str());
  out.files.emplace_back("model.json", r.net->to_json());
  out.samples = r.samples;
  const std::vector<GaussianMixture> base{c.pretrained};
  out.bounds = auto_bounds(base, 4.0);
  out.contours = grids_for(base, out.bounds, c.oracle_grid);

  json s;
  s["lambda"] = r.lambda;
  s["lambda_raw"] = raw;
  s["slack"] = r.slack;
  s["mean_reward"] = r.mean_reward;
  s["complementary_slackness"] = r.complementary_slackness;
  s["kl"] = to_json(r.kl);
  s["reward_mean"] = problem.reward_mean;
  s["reward_std"] = problem.reward_std;
  s["thresholds"] = c.thresholds;
  s["rounds"] = r.history.size();
  s["samples"] = moments(r.samples);

  // Tilted-Gaussian closed form: a single Gaussian q, one linear reward a^T x
  // with normalised threshold b. E_tilt[a^T x] = a^T mu + lambda a^T S a equals
  // a^T mu + b sd at lambda = b / sd, with sd^2 = a^T S a.
  if (c.pretrained.is_single() && m == 1 && c.rewards[0].kind() == Reward::Kind::linear) {
    const Gaussian& q = c.pretrained.components().front();
    const Vec2 a = c.rewards[0].direction();
    const double sd = std::sqrt(dot(a, q.cov() * a));
    const double lambda = std::max(0.0, c.thresholds[0] / sd);
    const Gaussian tilted = tilted_gaussian(q, lambda, a);
    s["oracle"] = {{"lambda_raw", lambda},
                   {"reward_mean", dot(a, q.mean())},
                   {"reward_std", sd},
                   {"tilted_mean", to_json(tilted.mean())},
                   {"tilted_cov", to_json(tilted.cov())},
                   {"tilted_mean_at_learned_lambda", to_json(tilted_gaussian(q, raw[0], a).mean())},
                   {"lambda_ratio", lambda > 0.0 ? json(raw[0] / lambda) : json(nullptr)}};
    out.contours.push_back(GridField::from_mixture(GaussianMixture(tilted), out.bounds, c.oracle_grid, c.oracle_grid));
  }
  return s;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    f << text;
    f.flush();
    if (!f) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

json run_experiment(const ExperimentConfig& c, const RunOptions& opt) {
  if (opt.dual_only && c.kind != ExperimentKind::compose_and) {
    throw ConfigError("--dual-only only applies to compose-and");
  }
  const auto t0 = std::chrono::steady_clock::now();
  Outputs out;
  json s;
  switch (c.kind) {
    case ExperimentKind::align:
      s = run_align(c, out);
      break;
    case ExperimentKind::compose_and:
      s = run_compose_and(c, opt, out);
      break;
    case ExperimentKind::compose_or:
      s = run_compose_or(c, out);
      break;
    case ExperimentKind::kl_check:
      s = run_kl_check(c, out);
      break;
    case ExperimentKind::oracle:
      s = run_oracle(c, out);
      break;
  }
  s["experiment"] = to_string(c.kind);
  s["seed"] = c.seed;
  s["config_hash"] = config_hash(c.canonical);
  s["schedule"] = {{"T", c.schedule.steps}, {"alpha", c.schedule.alpha}, {"eta_ddim", c.schedule.eta_ddim}};

  if (opt.write_files) {
    std::error_code ec;
    fs::create_directories(opt.out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory '" + opt.out_dir.string() + "': " + ec.message());
    // A stale summary from an earlier run must not outlive a failed write below.
    fs::remove(opt.out_dir / "summary.json", ec);
    for (const auto& [name, text] : out.files) write_file_atomic(opt.out_dir / name, text);
    if (!out.samples.empty()) write_file_atomic(opt.out_dir / "samples.csv", samples_csv(out.samples));
    if (c.plot.enabled && !out.samples.empty()) {
      write_ppm(render_scatter(out.samples, out.contours, out.bounds, c.plot.width, c.plot.height),
                (opt.out_dir / "plot.ppm").string());
    }
  }
  s["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (opt.write_files) write_file_atomic(opt.out_dir / "summary.json", s.dump(2) + "\n");
  return s;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DeterministicStepError*>(&e) ||
      dynamic_cast<const std::invalid_argument*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const InfeasibleError*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  return 1;
}

}  // namespace cdlab
