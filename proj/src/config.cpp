#include "cdlab/config.hpp"

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "cdlab/error.hpp"
#include "json.hpp"

namespace cdlab {

using json = nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config " + (path.empty() ? std::string("<root>") : path) + ": " + what);
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

void allow_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  require_object(j, path);
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) fail(path, "unknown key '" + k + "'");
  }
}

std::string child(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "expected a finite number");
  return v;
}

double get_double(const json& obj, const std::string& path, const char* key, double fallback, double lo, double hi) {
  if (!obj.contains(key)) return fallback;
  const double v = get_number(obj.at(key), child(path, key));
  if (v < lo || v > hi) fail(child(path, key), "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return v;
}

long long get_int(const json& obj, const std::string& path, const char* key, long long fallback, long long lo,
                  long long hi) {
  if (!obj.contains(key)) return fallback;
  const json& j = obj.at(key);
  if (!j.is_number_integer()) fail(child(path, key), "expected an integer");
  const long long v = j.get<long long>();
  if (v < lo || v > hi) fail(child(path, key), "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return v;
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) fail(child(path, key), "expected true or false");
  return obj.at(key).get<bool>();
}

Vec2 get_vec2(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) fail(path, "expected an array of two numbers");
  return {get_number(j[0], path + "[0]"), get_number(j[1], path + "[1]")};
}

Sym2 get_cov(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) fail(path, "expected a 2x2 array");
  const Vec2 r0 = get_vec2(j[0], path + "[0]");
  const Vec2 r1 = get_vec2(j[1], path + "[1]");
  if (std::abs(r0.y - r1.x) > 1e-12 * (1.0 + std::abs(r0.y))) fail(path, "covariance must be symmetric");
  return {r0.x, r0.y, r1.y};
}

std::vector<int> get_int_list(const json& j, const std::string& path, int lo, int hi) {
  if (!j.is_array() || j.empty()) fail(path, "expected a nonempty array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number_integer()) fail(path + "[" + std::to_string(i) + "]", "expected an integer");
    const long long v = j[i].get<long long>();
    if (v < lo || v > hi) fail(path + "[" + std::to_string(i) + "]", "value out of range");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

GaussianMixture parse_model(const json& j, const std::string& path, std::string* name) {
  allow_keys(j, path, {"name", "components"});
  if (j.contains("name")) {
    if (!j.at("name").is_string()) fail(child(path, "name"), "expected a string");
    if (name) *name = j.at("name").get<std::string>();
  }
  if (!j.contains("components")) fail(path, "missing 'components'");
  const json& comps = j.at("components");
  const std::string cpath = child(path, "components");
  if (!comps.is_array() || comps.empty()) fail(cpath, "expected a nonempty array");
  std::vector<double> w;
  std::vector<Gaussian> g;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const std::string p = cpath + "[" + std::to_string(k) + "]";
    allow_keys(comps[k], p, {"w", "mean", "cov"});
    for (const char* key : {"w", "mean", "cov"}) {
      if (!comps[k].contains(key)) fail(p, std::string("missing '") + key + "'");
    }
    const double wk = get_number(comps[k].at("w"), child(p, "w"));
    if (wk < 0.0) fail(child(p, "w"), "weight must be nonnegative");
    w.push_back(wk);
    try {
      g.emplace_back(get_vec2(comps[k].at("mean"), child(p, "mean")), get_cov(comps[k].at("cov"), child(p, "cov")));
    } catch (const std::invalid_argument& e) {
      fail(child(p, "cov"), e.what());
    }
  }
  try {
    return GaussianMixture(std::move(w), std::move(g));
  } catch (const std::invalid_argument& e) {
    fail(cpath, e.what());
  }
}

void parse_reward(const json& j, const std::string& path, std::vector<Reward>& rewards, std::vector<double>& b) {
  require_object(j, path);
  if (!j.contains("kind") || !j.at("kind").is_string()) fail(path, "missing string 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  if (!j.contains("b")) fail(path, "missing threshold 'b'");
  if (kind == "linear") {
    allow_keys(j, path, {"kind", "a", "b"});
    if (!j.contains("a")) fail(path, "missing 'a'");
    rewards.push_back(Reward::linear(get_vec2(j.at("a"), child(path, "a"))));
  } else if (kind == "quadratic") {
    allow_keys(j, path, {"kind", "center", "scale", "b"});
    if (!j.contains("center") || !j.contains("scale")) fail(path, "quadratic reward needs 'center' and 'scale'");
    rewards.push_back(Reward::quadratic(get_vec2(j.at("center"), child(path, "center")),
                                        get_number(j.at("scale"), child(path, "scale"))));
  } else {
    fail(child(path, "kind"), "unknown reward kind '" + kind + "' (linear | quadratic)");
  }
  b.push_back(get_number(j.at("b"), child(path, "b")));
}

void parse_schedule(const json& j, ScheduleConfig& s) {
  const std::string path = "schedule";
  allow_keys(j, path, {"T", "alpha", "eta_ddim"});
  s.steps = static_cast<int>(get_int(j, path, "T", s.steps, 1, 100000));
  s.eta_ddim = get_double(j, path, "eta_ddim", s.eta_ddim, 0.0, 1.0);
  if (j.contains("alpha")) {
    const json& a = j.at("alpha");
    if (a.is_string()) {
      s.alpha = a.get<std::string>();
      if (s.alpha != "geometric" && s.alpha != "linear") fail("schedule.alpha", "expected geometric, linear or an array");
    } else if (a.is_array()) {
      s.alpha = "explicit";
      s.alphas.clear();
      for (std::size_t i = 0; i < a.size(); ++i) s.alphas.push_back(get_number(a[i], "schedule.alpha[" + std::to_string(i) + "]"));
      if (j.contains("T") && static_cast<int>(s.alphas.size()) != s.steps + 1) fail("schedule.alpha", "explicit array must have T + 1 entries");
      s.steps = static_cast<int>(s.alphas.size()) - 1;
    } else {
      fail("schedule.alpha", "expected geometric, linear or an array");
    }
  }
  try {
    s.build();
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
}

MlpOptions parse_net(const json& j, const std::string& path, MlpOptions net) {
  if (j.contains("hidden")) net.hidden = get_int_list(j.at("hidden"), child(path, "hidden"), 1, 4096);
  net.time_features = static_cast<int>(get_int(j, path, "time_features", net.time_features, 0, 64));
  if (net.time_features % 2) fail(child(path, "time_features"), "must be even");
  return net;
}

}  // namespace

ExperimentKind parse_experiment_kind(const std::string& name) {
  if (name == "align") return ExperimentKind::align;
  if (name == "compose-and") return ExperimentKind::compose_and;
  if (name == "compose-or") return ExperimentKind::compose_or;
  if (name == "kl-check") return ExperimentKind::kl_check;
  if (name == "oracle") return ExperimentKind::oracle;
  throw ConfigError("unknown experiment '" + name + "'");
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::align:
      return "align";
    case ExperimentKind::compose_and:
      return "compose-and";
    case ExperimentKind::compose_or:
      return "compose-or";
    case ExperimentKind::kl_check:
      return "kl-check";
    case ExperimentKind::oracle:
      return "oracle";
  }
  return "?";
}

Schedule ScheduleConfig::build() const {
  NoiseSchedule noise = alpha == "linear"     ? NoiseSchedule::linear(steps)
                        : alpha == "explicit" ? NoiseSchedule(alphas)
                                              : NoiseSchedule::geometric(steps);
  VarianceSchedule var = VarianceSchedule::ddim(noise, eta_ddim);
  return Schedule(std::move(noise), std::move(var));
}

ExperimentConfig parse_config(const std::string& text, ExperimentKind kind) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  allow_keys(doc, "", {"experiment", "description", "seed", "schedule", "models", "pretrained", "rewards", "dual",
                       "primal", "mcmc", "estimation", "oracle", "kl_check", "plot"});
  ExperimentConfig c;
  c.kind = kind;
  c.canonical = doc.dump();
  if (doc.contains("experiment")) {
    if (!doc.at("experiment").is_string()) fail("experiment", "expected a string");
    if (parse_experiment_kind(doc.at("experiment").get<std::string>()) != kind) {
      fail("experiment", "config is for '" + doc.at("experiment").get<std::string>() + "' but was run as '" +
                             to_string(kind) + "'");
    }
  }
  if (doc.contains("description") && !doc.at("description").is_string()) fail("description", "expected a string");
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) fail("seed", "expected a nonnegative integer");
    c.seed = doc.at("seed").get<std::uint64_t>();
  }
  if (doc.contains("schedule")) parse_schedule(doc.at("schedule"), c.schedule);

  const bool needs_models = kind != ExperimentKind::align;
  if (doc.contains("models")) {
    const json& ms = doc.at("models");
    if (!ms.is_array()) fail("models", "expected an array");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      std::string name = "model" + std::to_string(i);
      c.models.push_back(parse_model(ms[i], "models[" + std::to_string(i) + "]", &name));
      c.model_names.push_back(name);
    }
  }
  if (needs_models && c.models.size() < 2) fail("models", "this experiment needs at least two models");
  if (!needs_models && doc.contains("models")) fail("models", "not used by align (use 'pretrained')");

  if (kind == ExperimentKind::align) {
    if (!doc.contains("pretrained")) fail("pretrained", "align needs a pretrained model");
    c.pretrained = parse_model(doc.at("pretrained"), "pretrained", nullptr);
    if (!doc.contains("rewards")) fail("rewards", "align needs at least one reward");
    const json& rs = doc.at("rewards");
    if (!rs.is_array() || rs.empty()) fail("rewards", "expected a nonempty array");
    for (std::size_t i = 0; i < rs.size(); ++i) parse_reward(rs[i], "rewards[" + std::to_string(i) + "]", c.rewards, c.thresholds);
  } else {
    if (doc.contains("pretrained")) fail("pretrained", "only used by align");
    if (doc.contains("rewards")) fail("rewards", "only used by align");
  }

  // Sections are validated for every kind so that a typo never goes unnoticed.
  const json empty = json::object();
  const json& dual = doc.contains("dual") ? doc.at("dual") : empty;
  const json& primal = doc.contains("primal") ? doc.at("primal") : empty;
  const json& mcmc = doc.contains("mcmc") ? doc.at("mcmc") : empty;
  const json& est = doc.contains("estimation") ? doc.at("estimation") : empty;
  const json& oracle = doc.contains("oracle") ? doc.at("oracle") : empty;
  const json& plot = doc.contains("plot") ? doc.at("plot") : empty;

  allow_keys(dual, "dual", {"eta", "max_rounds", "rounds", "tol", "patience", "ema", "lambda_init", "lambda_max",
                            "fresh_noise", "freeze"});
  allow_keys(primal, "primal", {"max_rounds", "final_steps", "final_lr", "steps_per_round", "batch", "lr", "lr_final", "warm_start_steps", "warm_start_batch",
                                "hidden", "time_features", "weighting", "kl_score_term"});
  allow_keys(mcmc, "mcmc", {"steps_per_level", "step_scale", "final_steps", "n"});
  allow_keys(est, "estimation", {"n_samples", "n_kl", "n_calibration", "n_eval", "n_final", "n_endpoint"});
  allow_keys(oracle, "oracle", {"grid", "step", "refine_to"});
  allow_keys(plot, "plot", {"enabled", "width", "height"});

  const long long big = 1LL << 24;
  DualSchedule ds;
  ds.eta = get_double(dual, "dual", "eta", ds.eta, 0.0, 1e6);
  ds.max_rounds = static_cast<int>(get_int(dual, "dual", "max_rounds", ds.max_rounds, 1, 100000));
  ds.tol = get_double(dual, "dual", "tol", ds.tol, 0.0, 1.0);
  ds.patience = static_cast<int>(get_int(dual, "dual", "patience", ds.patience, 1, 100000));

  // align
  AlignConfig& a = c.align;
  a.rounds = static_cast<int>(get_int(dual, "dual", "rounds", a.rounds, 0, 100000));
  a.dual_lr = get_double(dual, "dual", "eta", a.dual_lr, 0.0, 1e6);
  a.ema = get_double(dual, "dual", "ema", a.ema, 0.0, 1.0 - 1e-12);
  a.lambda_init = get_double(dual, "dual", "lambda_init", a.lambda_init, 0.0, 1e6);
  a.lambda_max = get_double(dual, "dual", "lambda_max", a.lambda_max, 0.0, 1e12);
  a.primal_steps = static_cast<int>(get_int(primal, "primal", "steps_per_round", a.primal_steps, 0, big));
  a.batch = static_cast<int>(get_int(primal, "primal", "batch", a.batch, 2, big));
  a.adam.lr = get_double(primal, "primal", "lr", a.adam.lr, 0.0, 1.0);
  a.lr_final = get_double(primal, "primal", "lr_final", a.lr_final, 0.0, 1.0);
  a.warm_start_steps = static_cast<int>(get_int(primal, "primal", "warm_start_steps", a.warm_start_steps, 0, big));
  a.warm_start_batch = static_cast<int>(get_int(primal, "primal", "warm_start_batch", a.warm_start_batch, 1, big));
  a.kl_score_term = get_bool(primal, "primal", "kl_score_term", a.kl_score_term);
  a.net = parse_net(primal, "primal", a.net);
  a.n_calib = static_cast<std::size_t>(get_int(est, "estimation", "n_calibration", static_cast<long long>(a.n_calib), 2, big));
  a.n_eval = static_cast<std::size_t>(get_int(est, "estimation", "n_eval", static_cast<long long>(a.n_eval), 2, big));
  a.n_final = static_cast<std::size_t>(get_int(est, "estimation", "n_final", static_cast<long long>(a.n_final), 2, big));

  // compose-and, dual-only
  c.dual_only.dual = ds;
  c.dual_only.n_samples = static_cast<std::size_t>(get_int(est, "estimation", "n_samples", static_cast<long long>(c.dual_only.n_samples), 1, big));
  c.dual_only.fresh_noise = get_bool(dual, "dual", "fresh_noise", c.dual_only.fresh_noise);

  // compose-and, primal-dual
  PrimalDualConfig& pd = c.primal_dual;
  pd.dual = ds;
  pd.dual.max_rounds = static_cast<int>(get_int(primal, "primal", "max_rounds", ds.max_rounds, 1, 100000));
  pd.net = parse_net(primal, "primal", MlpOptions{{64, 64}, 8, false});
  pd.train.steps = static_cast<int>(get_int(primal, "primal", "steps_per_round", 200, 0, big));
  pd.train.batch = static_cast<int>(get_int(primal, "primal", "batch", pd.train.batch, 1, big));
  pd.train.adam.lr = get_double(primal, "primal", "lr", pd.train.adam.lr, 0.0, 1.0);
  pd.warm_start_steps = static_cast<int>(get_int(primal, "primal", "warm_start_steps", pd.warm_start_steps, 0, big));
  if (primal.contains("weighting")) {
    const json& w = primal.at("weighting");
    if (!w.is_string()) fail("primal.weighting", "expected a string");
    const std::string ws = w.get<std::string>();
    if (ws == "uniform") {
      pd.train.weighting = DsmWeighting::uniform;
    } else if (ws == "noise_variance") {
      pd.train.weighting = DsmWeighting::noise_variance;
    } else {
      fail("primal.weighting", "expected uniform or noise_variance");
    }
  }
  pd.mcmc.steps_per_level = static_cast<int>(get_int(mcmc, "mcmc", "steps_per_level", pd.mcmc.steps_per_level, 1, big));
  pd.mcmc.step_scale = get_double(mcmc, "mcmc", "step_scale", pd.mcmc.step_scale, 1e-12, 10.0);
  pd.final_steps = static_cast<int>(get_int(primal, "primal", "final_steps", pd.final_steps, 0, big));
  pd.final_lr = get_double(primal, "primal", "final_lr", pd.final_lr, 0.0, 1.0);
  pd.mcmc.final_steps = static_cast<int>(get_int(mcmc, "mcmc", "final_steps", pd.mcmc.final_steps, 0, big));
  pd.n_mcmc = static_cast<std::size_t>(get_int(mcmc, "mcmc", "n", static_cast<long long>(pd.n_mcmc), 1, big));
  pd.n_kl = static_cast<std::size_t>(get_int(est, "estimation", "n_kl", static_cast<long long>(pd.n_kl), 1, big));
  pd.n_endpoint = static_cast<std::size_t>(get_int(est, "estimation", "n_endpoint", static_cast<long long>(pd.n_endpoint), 1, big));
  pd.freeze_dual = get_bool(dual, "dual", "freeze", false);
  if (dual.contains("lambda_init") && kind != ExperimentKind::align) {
    const json& li = dual.at("lambda_init");
    if (!li.is_array()) fail("dual.lambda_init", "expected an array of weights for composition");
    for (std::size_t i = 0; i < li.size(); ++i) pd.lambda_init.push_back(get_number(li[i], "dual.lambda_init[" + std::to_string(i) + "]"));
    if (pd.lambda_init.size() != c.models.size()) fail("dual.lambda_init", "needs one weight per model");
    try {
      require_simplex(pd.lambda_init);
    } catch (const std::invalid_argument& e) {
      fail("dual.lambda_init", e.what());
    }
  }

  // compose-or
  c.mixture.dual = ds;
  c.mixture.n_samples = static_cast<std::size_t>(get_int(est, "estimation", "n_samples", static_cast<long long>(c.mixture.n_samples), 2, big));

  // kl-check
  if (doc.contains("kl_check")) {
    const json& k = doc.at("kl_check");
    allow_keys(k, "kl_check", {"T_values", "n_samples", "n_trajectories", "pairs"});
    if (k.contains("T_values")) c.kl_check.steps = get_int_list(k.at("T_values"), "kl_check.T_values", 1, 100000);
    c.kl_check.n_samples = static_cast<std::size_t>(get_int(k, "kl_check", "n_samples", static_cast<long long>(c.kl_check.n_samples), 2, big));
    c.kl_check.n_trajectories = static_cast<std::size_t>(get_int(k, "kl_check", "n_trajectories", static_cast<long long>(c.kl_check.n_trajectories), 2, big));
    if (k.contains("pairs")) {
      const json& ps = k.at("pairs");
      if (!ps.is_array()) fail("kl_check.pairs", "expected an array of [p, q] index pairs");
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string p = "kl_check.pairs[" + std::to_string(i) + "]";
        const auto v = get_int_list(ps[i], p, 0, static_cast<int>(c.models.size()) - 1);
        if (v.size() != 2) fail(p, "expected [p, q]");
        c.kl_check.pairs.emplace_back(v[0], v[1]);
      }
    }
  }
  if (c.kl_check.pairs.empty()) c.kl_check.pairs.emplace_back(0, 1);

  c.oracle_grid = static_cast<int>(get_int(oracle, "oracle", "grid", c.oracle_grid, 8, 4096));
  c.oracle.step = get_double(oracle, "oracle", "step", c.oracle.step, 0.0, 0.5);
  c.oracle.refine_to = get_double(oracle, "oracle", "refine_to", c.oracle.refine_to, 0.0, 1.0);
  if (kind == ExperimentKind::oracle || kind == ExperimentKind::compose_and) {
    if (c.models.size() > 4) fail("models", "the grid oracle supports at most four models");
  }

  c.plot.enabled = get_bool(plot, "plot", "enabled", c.plot.enabled);
  c.plot.width = static_cast<int>(get_int(plot, "plot", "width", c.plot.width, 16, 8192));
  c.plot.height = static_cast<int>(get_int(plot, "plot", "height", c.plot.height, 16, 8192));

  apply_seed(c, c.seed);
  return c;
}

ExperimentConfig load_config(const std::string& path, ExperimentKind kind) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), kind);
}

void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.align.seed = derive_seed(seed, 11);
  c.dual_only.seed = derive_seed(seed, 12);
  c.primal_dual.seed = derive_seed(seed, 13);
  c.mixture.seed = derive_seed(seed, 14);
}

std::string config_hash(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cdlab
