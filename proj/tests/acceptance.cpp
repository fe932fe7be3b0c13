// End-to-end acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>

#include "cdlab/compose.hpp"
#include "cdlab/config.hpp"
#include "cdlab/divergence.hpp"
#include "cdlab/experiment.hpp"
#include "cdlab/log.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/score_model.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cdlab;

namespace {

const fs::path kRunRoot = fs::temp_directory_path() / "cdlab_acceptance";

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [FAIL]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string vec(const json& a) {
  std::string s = "(";
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? ", " : "") + fmt("%.4f", a[i].get<double>());
  return s + ")";
}

ExperimentConfig load(const std::string& file, ExperimentKind kind) {
  return load_config(std::string(CDLAB_CONFIGS) + "/" + file, kind);
}

json read_summary(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  return json::parse(in);
}

// Runs a bundled config into kRunRoot/<tag>/<rep> and returns the summary as written to disk.
json run_bundled(const std::string& file, ExperimentKind kind, bool dual_only, const std::string& tag, int rep) {
  RunOptions opt;
  opt.out_dir = kRunRoot / tag / std::to_string(rep);
  opt.dual_only = dual_only;
  fs::remove_all(opt.out_dir);
  run_experiment(load(file, kind), opt);
  return read_summary(opt.out_dir);
}

double linf(const json& a, const json& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i].get<double>() - b[i].get<double>()));
  return d;
}

double dist(const json& a, const json& b) {
  return std::hypot(a[0].get<double>() - b[0].get<double>(), a[1].get<double>() - b[1].get<double>());
}

// Closed-form Gaussian quantities, written out independently of the library.
double gaussian_entropy(const Sym2& c) { return 1.0 + std::log(2.0 * M_PI) + 0.5 * std::log(c.xx * c.yy - c.xy * c.xy); }

double gaussian_kl_closed(const Gaussian& p, const Gaussian& q) {
  const Sym2 a = p.cov(), b = q.cov();
  const double bdet = b.xx * b.yy - b.xy * b.xy, adet = a.xx * a.yy - a.xy * a.xy;
  const double ixx = b.yy / bdet, iyy = b.xx / bdet, ixy = -b.xy / bdet;
  const double tr = ixx * a.xx + iyy * a.yy + 2 * ixy * a.xy;
  const double dx = q.mean().x - p.mean().x, dy = q.mean().y - p.mean().y;
  return 0.5 * (tr + ixx * dx * dx + iyy * dy * dy + 2 * ixy * dx * dy - 2 + std::log(bdet / adet));
}

std::vector<double> sort_threshold_projection(const std::vector<double>& v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double t = (cumulative - 1.0) / double(j + 1);
    if (u[j] - t > 0) theta = t;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

Gaussian random_gaussian(RngStream& r) {
  const Vec2 mean{r.uniform() * 4 - 2, r.uniform() * 4 - 2};
  const double l1 = 0.3 + 1.7 * r.uniform(), l2 = 0.3 + 1.7 * r.uniform(), th = M_PI * r.uniform();
  const double c = std::cos(th), s = std::sin(th);
  return Gaussian(mean, Sym2{l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c});
}

// Summaries cached across criteria; the reproducibility check reruns them.
std::map<std::string, json> g_first;

struct Bundled {
  std::string tag, file;
  ExperimentKind kind;
  bool dual_only;
};

const std::vector<Bundled> kBundled = {
    {"figure1_dual", "figure1.json", ExperimentKind::compose_and, true},
    {"figure1_primal", "figure1.json", ExperimentKind::compose_and, false},
    {"figure2", "figure2.json", ExperimentKind::compose_or, false},
    {"disjoint", "disjoint.json", ExperimentKind::compose_or, false},
    {"align", "align.json", ExperimentKind::align, false},
    {"kl_check", "kl_check.json", ExperimentKind::kl_check, false},
    {"oracle", "oracle.json", ExperimentKind::oracle, false},
};

const json& first(const std::string& tag) {
  auto it = g_first.find(tag);
  if (it == g_first.end()) {
    const auto& b = *std::find_if(kBundled.begin(), kBundled.end(), [&](const Bundled& x) { return x.tag == tag; });
    it = g_first.emplace(tag, run_bundled(b.file, b.kind, b.dual_only, b.tag, 1)).first;
  }
  return it->second;
}

Verdict criterion1() {
  Verdict v;
  const json& s = first("figure1_dual");
  v.require(s["converged"].get<bool>() && s["rounds"].get<int>() <= 200, "rounds " + std::to_string(s["rounds"].get<int>()));
  const double d = linf(s["lambda"], s["oracle"]["lambda"]);
  v.require(d <= 0.05, "lambda " + vec(s["lambda"]) + " vs grid " + vec(s["oracle"]["lambda"]) + " linf " + fmt("%.4f", d));
  const double sp = s["kl_spread"], usp = s["uniform_kl_spread"];
  v.require(sp <= 0.10, "spread " + fmt("%.4f", sp));
  v.require(usp >= 2 * sp, "uniform spread " + fmt("%.3f", usp));
  const double t = s["wall_clock_s"];
  v.require(t <= 120.0, "runtime " + fmt("%.1f", t) + " s");
  return v;
}

Verdict criterion2() {
  Verdict v;
  const Schedule sched = Schedule::geometric(100);
  const std::vector<ScoreField> mirrored{
      ScoreField::analytic(GaussianMixture(Gaussian({-1.5, 0.5}, Sym2{1.0, 0.3, 0.6})), sched.noise()),
      ScoreField::analytic(GaussianMixture(Gaussian({1.5, 0.5}, Sym2{1.0, -0.3, 0.6})), sched.noise())};
  DualOnlyConfig c;
  c.n_samples = 4096;
  c.seed = 21;
  const auto r = dual_only_and(mirrored, sched, c);
  const double d = std::max(std::abs(r.lambda[0] - 0.5), std::abs(r.lambda[1] - 0.5));
  v.require(d <= 0.02, "mirrored lambda (" + fmt("%.4f", r.lambda[0]) + ", " + fmt("%.4f", r.lambda[1]) + ")");

  const ScoreField same = ScoreField::analytic(GaussianMixture(Gaussian({0.5, 1}, Sym2{1.2, 0.4, 0.8})), sched.noise());
  double worst = 0.0;
  for (int m : {2, 3, 4, 6}) {
    DualOnlyConfig ci;
    ci.n_samples = 1024;
    ci.seed = 30 + m;
    ci.dual.max_rounds = 25;
    ci.dual.tol = 0.0;  // run every round
    const auto ri = dual_only_and(std::vector<ScoreField>(static_cast<std::size_t>(m), same), sched, ci);
    for (const auto& h : ri.history)
      for (double l : h.lambda) worst = std::max(worst, std::abs(l - 1.0 / m));
    for (double l : ri.lambda) worst = std::max(worst, std::abs(l - 1.0 / m));
  }
  v.require(worst <= 1e-6, "identical models max deviation " + fmt("%.1e", worst));
  return v;
}

Verdict criterion3() {
  Verdict v;
  const json& d = first("disjoint");
  const auto cfg = load("disjoint.json", ExperimentKind::compose_or);
  std::vector<double> h;
  for (const auto& m : cfg.models) h.push_back(gaussian_entropy(m.components()[0].cov()));
  const double z = std::exp(h[0]) + std::exp(h[1]);
  const json want = {std::exp(h[0]) / z, std::exp(h[1]) / z};
  const double e = linf(d["lambda"], want);
  v.require(e <= 0.03, "disjoint lambda " + vec(d["lambda"]) + " vs softmax " + vec(want));

  const json& f = first("figure2");
  const double lb = f["lambda"][0], lu = f["lambda"][1];
  v.require(lb > lu, "figure2 lambda bimodal " + fmt("%.4f", lb) + " > unimodal " + fmt("%.4f", lu));
  const double H = f["entropy"]["value"], Hu = f["uniform_entropy"]["value"];
  const double se = std::hypot(f["entropy"]["stderr"].get<double>(), f["uniform_entropy"]["stderr"].get<double>());
  v.require(H >= Hu - 3 * se, "H " + fmt("%.4f", H) + " vs uniform " + fmt("%.4f", Hu) + " (se " + fmt("%.4f", se) + ")");
  return v;
}

Verdict criterion4() {
  Verdict v;
  const json& s = first("align");
  const double got = s["lambda_raw"][0], want = s["oracle"]["lambda_raw"];
  // Independent check of the analytic multiplier: N(0, I), r = a^T x, threshold b sd.
  const auto cfg = load("align.json", ExperimentKind::align);
  const Vec2 a = cfg.rewards[0].direction();
  const double sd = std::sqrt(dot(a, cfg.pretrained.components()[0].cov() * a));
  const double analytic = cfg.thresholds[0] / sd;
  v.require(std::abs(want - analytic) < 1e-12, "analytic multiplier " + fmt("%.4f", analytic));
  v.require(std::abs(got - analytic) <= 0.10 * analytic, "learned " + fmt("%.4f", got) + " (" +
                                                                 fmt("%+.1f", 100 * (got / analytic - 1)) + "%)");
  const Vec2 mu = cfg.pretrained.components()[0].mean();
  const Vec2 tilted = mu + analytic * (cfg.pretrained.components()[0].cov() * a);
  const json tj = {tilted.x, tilted.y};
  const double md = dist(s["samples"]["mean"], tj);
  v.require(md <= 0.1, "mean " + vec(s["samples"]["mean"]) + " vs tilted " + vec(tj));
  double cs = 0.0;
  for (const auto& x : s["complementary_slackness"]) cs = std::max(cs, std::abs(x.get<double>()));
  v.require(cs < 0.05, "|lambda*slack| " + fmt("%.4f", cs));
  const double t = s["wall_clock_s"];
  v.require(t <= 300.0, "runtime " + fmt("%.1f", t) + " s");
  return v;
}

Verdict criterion5() {
  Verdict v;
  const json& s = first("kl_check");
  const auto cfg = load("kl_check.json", ExperimentKind::kl_check);
  v.require(cfg.kl_check.n_samples >= 65536, "n " + std::to_string(cfg.kl_check.n_samples));
  for (const auto& pair : s["pairs"]) {
    const auto& p = cfg.models[pair["p"].get<std::size_t>()].components()[0];
    const auto& q = cfg.models[pair["q"].get<std::size_t>()].components()[0];
    const double exact = gaussian_kl_closed(p, q);
    double prev = INFINITY, last = 0.0;
    bool monotone = true;
    std::string trail;
    for (const auto& e : pair["estimates"]) {
      const double rel = std::abs(e["pointwise"]["value"].get<double>() - exact) / exact;
      monotone = monotone && rel <= prev;
      prev = last = rel;
      trail += (trail.empty() ? "" : " -> ") + fmt("%.4f", rel);
    }
    v.require(monotone && last <= 0.15, "pair " + pair["p"].dump() + "," + pair["q"].dump() + " rel err " + trail);
  }
  return v;
}

Verdict criterion6() {
  Verdict v;
  const Schedule sched = Schedule::geometric(100);
  RngStream r(606, 0);
  int ok = 0;
  double worst = INFINITY;
  for (int k = 0; k < 10; ++k) {
    const Gaussian gp = random_gaussian(r), gq = random_gaussian(r);
    const ScoreField sp = ScoreField::analytic(GaussianMixture(gp), sched.noise());
    const ScoreField sq = ScoreField::analytic(GaussianMixture(gq), sched.noise());
    const auto x0 = GaussianMixture(gp).sample(16384, derive_seed(606, 10 + k));
    const KlEstimate point = pointwise_kl(sp, sq, x0, sched, derive_seed(606, 20 + k));
    const KlEstimate path = pathwise_kl(sp, sq, 16384, sched, derive_seed(606, 30 + k));
    const double se = std::hypot(point.standard_error, path.standard_error);
    const double margin = (path.value - point.value) / se;
    worst = std::min(worst, margin);
    if (margin >= -3.0) ++ok;
  }
  v.require(ok == 10, std::to_string(ok) + "/10 pairs, min (path - point)/se " + fmt("%.2f", worst));
  const GaussianMixture g(Gaussian({0.3, -0.4}, Sym2{1.0, 0.2, 0.5}));
  const ScoreField a = ScoreField::analytic(g, sched.noise()), b = ScoreField::analytic(g, sched.noise());
  const double zp = pointwise_kl(a, b, g.sample(4096, 1), sched, 2).value;
  const double zq = pathwise_kl(a, b, 4096, sched, 3).value;
  v.require(zp == 0.0 && zq == 0.0, "identical fields " + fmt("%g", zp) + " / " + fmt("%g", zq));
  return v;
}

Verdict criterion7() {
  Verdict v;
  // Gradient check at the primal-dual network size.
  MlpScoreNet net({{64, 64}, 8, false}, 100, 77);
  RngStream r(7, 0);
  std::vector<Vec2> xs, up;
  std::vector<int> ts;
  for (int i = 0; i < 16; ++i) {
    xs.push_back(2.0 * r.normal2());
    ts.push_back(r.uniform_int(0, 100));
    up.push_back(r.normal2());
  }
  std::vector<double> g(net.parameter_count(), 0.0);
  net.accumulate_gradient(xs, ts, up, g);
  auto f = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += dot(up[i], net.forward(xs[i], ts[i]));
    return s;
  };
  auto p = net.parameters();
  double worst_rel = 0.0;
  std::size_t bad = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double keep = p[k], h = 1e-5;
    p[k] = keep + h;
    const double fp = f();
    p[k] = keep - h;
    const double fm = f();
    p[k] = keep;
    const double fd = (fp - fm) / (2 * h);
    const double scale = std::max(std::abs(fd), std::abs(g[k]));
    // Components below 1e-6 are dominated by finite-difference round-off; they
    // are held to an absolute 1e-10 instead.
    if (scale > 1e-6) {
      worst_rel = std::max(worst_rel, std::abs(fd - g[k]) / scale);
      if (std::abs(fd - g[k]) > 1e-4 * scale) ++bad;
    } else if (std::abs(fd - g[k]) > 1e-10) {
      ++bad;
    }
  }
  v.require(bad == 0, std::to_string(p.size()) + " params, max rel " + fmt("%.1e", worst_rel));

  // DSM on N(0, I): the noised law is N(0, I) at every level, score -x.
  const Schedule sched = Schedule::geometric(100);
  MlpScoreNet dsm({{32, 32}, 8, false}, 100, 21);
  const GaussianMixture q(Gaussian::standard());
  TrainOptions opt;
  opt.steps = 2000;
  opt.seed = 4;
  train(dsm, [&q](std::size_t n, std::uint64_t s) { return q.sample(n, s); }, sched, opt);
  double num = 0.0, den = 0.0;
  for (int t = 3; t <= 100; t += 7)
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        const Vec2 x{-2.25 + 0.45 * i, -2.25 + 0.45 * j};
        num += squared_norm(dsm.forward(x, t) + x);
        den += squared_norm(x);
      }
  const double err = std::sqrt(num / den);
  v.require(err <= 0.10, "DSM relative L2 " + fmt("%.4f", err) + " after 2000 steps");
  return v;
}

Verdict criterion8() {
  Verdict v;
  const json& pd = first("figure1_primal");
  const json& du = first("figure1_dual");
  const double d = linf(pd["lambda"], du["lambda"]);
  v.require(d <= 0.07, "primal-dual " + vec(pd["lambda"]) + " vs dual-only " + vec(du["lambda"]) + " linf " +
                           fmt("%.4f", d));
  const double md = dist(pd["samples"]["mean"], pd["oracle"]["product_mean_at_lambda"]);
  v.require(md <= 0.1, "mean " + vec(pd["samples"]["mean"]) + " vs grid product " +
                           vec(pd["oracle"]["product_mean_at_lambda"]) + " dist " + fmt("%.4f", md));
  return v;
}

Verdict criterion9() {
  Verdict v;
  RngStream r(909, 0);
  double worst = 0.0, worst_idem = 0.0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> x(static_cast<std::size_t>(r.uniform_int(1, 16)));
    const double scale = std::pow(10.0, r.uniform_int(-3, 3));
    for (double& e : x) e = scale * r.normal();
    const auto p = simplex_project(x);
    const auto o = sort_threshold_projection(x);
    const auto pp = simplex_project(p);
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst = std::max(worst, std::abs(p[i] - o[i]));
      worst_idem = std::max(worst_idem, std::abs(pp[i] - p[i]));
    }
  }
  v.require(worst <= 1e-12, "max |proj - oracle| " + fmt("%.1e", worst));
  v.require(worst_idem <= 1e-12, "max |proj(proj) - proj| " + fmt("%.1e", worst_idem));
  return v;
}

Verdict criterion10() {
  Verdict v;
  for (const auto& b : kBundled) {
    json a = first(b.tag);
    json c = run_bundled(b.file, b.kind, b.dual_only, b.tag, 2);
    a.erase("wall_clock_s");
    c.erase("wall_clock_s");
    v.require(a == c, b.tag);
  }
  return v;
}

}  // namespace

int main() {
  try {
    set_log_level(LogLevel::error);
  } catch (...) {
  }
  set_thread_cap(1);
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("error: ") + e.what();
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %s  %s  [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str(), dt);
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
