#include <cmath>

#include "cdlab/distributions.hpp"
#include "cdlab/error.hpp"
#include "cdlab/score_model.hpp"
#include "doctest.h"

using namespace cdlab;

namespace {

struct Batch {
  std::vector<Vec2> xs;
  std::vector<int> ts;
  std::vector<Vec2> up;
};

Batch random_batch(std::size_t n, int T, std::uint64_t seed) {
  Batch b;
  RngStream r(seed, 0);
  for (std::size_t i = 0; i < n; ++i) {
    b.xs.push_back(2.0 * r.normal2());
    b.ts.push_back(r.uniform_int(0, T));
    b.up.push_back(r.normal2());
  }
  return b;
}

double objective(const MlpScoreNet& net, const Batch& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < b.xs.size(); ++i) s += dot(b.up[i], net.forward(b.xs[i], b.ts[i]));
  return s;
}

// Largest violation of |analytic - fd| <= rel * max(|analytic|, |fd|) + floor.
double worst_gradient_error(MlpScoreNet& net, const std::function<double()>& f, const std::vector<double>& grad,
                            double rel, double floor) {
  double worst = 0.0;
  auto p = net.parameters();
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double h = 1e-5 * std::max(1.0, std::abs(p[k]));
    const double keep = p[k];
    p[k] = keep + h;
    const double fp = f();
    p[k] = keep - h;
    const double fm = f();
    p[k] = keep;
    const double fd = (fp - fm) / (2 * h);
    const double allowed = rel * std::max(std::abs(fd), std::abs(grad[k])) + floor;
    worst = std::max(worst, std::abs(fd - grad[k]) / allowed);
  }
  return worst;
}

double relative_score_error(const MlpScoreNet& net, int T) {
  // N(0, I) keeps its law under noising, so the exact score is -x at every level.
  double num = 0.0, den = 0.0;
  for (int t = 1; t <= T; t += std::max(1, T / 10)) {
    for (int i = 0; i < 9; ++i) {
      for (int j = 0; j < 9; ++j) {
        const Vec2 x{-2.0 + 0.5 * i, -2.0 + 0.5 * j};
        num += squared_norm(net.forward(x, t) + x);
        den += squared_norm(x);
      }
    }
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("parameter gradients match central differences") {
  MlpScoreNet net({{16, 12}, 6, false}, 50, 3);
  const Batch b = random_batch(40, 50, 8);
  std::vector<double> g(net.parameter_count(), 0.0);
  net.accumulate_gradient(b.xs, b.ts, b.up, g);
  CHECK(worst_gradient_error(net, [&] { return objective(net, b); }, g, 1e-4, 1e-8) <= 1.0);
}

TEST_CASE("DSM loss gradient matches central differences") {
  const Schedule sched = Schedule::geometric(30);
  MlpScoreNet net({{8, 8}, 4, false}, 30, 5);
  const auto x0 = GaussianMixture(Gaussian::standard()).sample(64, 2);
  for (DsmWeighting w : {DsmWeighting::uniform, DsmWeighting::noise_variance}) {
    const DsmResult r = dsm_loss(net, x0, sched, 77, w, Exec::serial);
    CHECK(r.loss > 0.0);
    CHECK(worst_gradient_error(net, [&] { return dsm_loss(net, x0, sched, 77, w, Exec::serial).loss; }, r.gradient,
                               1e-4, 1e-8) <= 1.0);
  }
}

TEST_CASE("DSM samples follow the forward process") {
  const Schedule sched = Schedule::geometric(20);
  const DsmSample s = dsm_sample({1.0, -1.0}, 4, sched, 9, DsmWeighting::noise_variance);
  CHECK(s.t >= 1);
  CHECK(s.t <= 20);
  const Vec2 eps = -std::sqrt(1 - sched.alpha(s.t)) * s.target;
  const Vec2 x = sched.sqrt_alpha(s.t) * Vec2{1.0, -1.0} + sched.sqrt_one_minus_alpha(s.t) * eps;
  CHECK(x.x == doctest::Approx(s.x_t.x));
  CHECK(s.weight == doctest::Approx(1 - sched.alpha(s.t)));
}

TEST_CASE("batched evaluation equals the pointwise forward, serial equals parallel") {
  MlpScoreNet net({{32, 32}, 8, false}, 100, 1);
  const Batch b = random_batch(700, 100, 4);
  std::vector<Vec2> out(b.xs.size()), out_s(b.xs.size()), out_p(b.xs.size());
  net.forward_batch(b.xs, b.ts, out);
  for (std::size_t i = 0; i < b.xs.size(); ++i) {
    const Vec2 y = net.forward(b.xs[i], b.ts[i]);
    CHECK(y.x == doctest::Approx(out[i].x).epsilon(1e-12));
    CHECK(y.y == doctest::Approx(out[i].y).epsilon(1e-12));
  }
  batch_forward(net, b.xs, 37, out_s, Exec::serial);
  batch_forward(net, b.xs, 37, out_p, Exec::parallel);
  for (std::size_t i = 0; i < b.xs.size(); ++i) CHECK(out_s[i].x == out_p[i].x);
  const auto gs = batch_gradient(net, b.xs, b.ts, b.up, Exec::serial);
  const auto gp = batch_gradient(net, b.xs, b.ts, b.up, Exec::parallel);
  CHECK(gs == gp);
}

TEST_CASE("zero-initialised output layer predicts zero") {
  MlpScoreNet net({{8}, 2, true}, 10, 1);
  const Vec2 y = net.forward({1, 2}, 3);
  CHECK(y.x == 0.0);
  CHECK(y.y == 0.0);
}

TEST_CASE("checkpoint round trip") {
  MlpScoreNet net({{10, 6}, 4, false}, 25, 12);
  const MlpScoreNet copy = MlpScoreNet::from_json(net.to_json());
  CHECK(copy.parameter_count() == net.parameter_count());
  CHECK(copy.total_steps() == 25);
  const Vec2 a = net.forward({0.3, -0.2}, 7);
  const Vec2 b = copy.forward({0.3, -0.2}, 7);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK_THROWS(MlpScoreNet::from_json("{\"format\": \"other\"}"));
  CHECK_THROWS(MlpScoreNet::from_json("not json"));
}

TEST_CASE("Adam minimises a quadratic") {
  std::vector<double> p{3.0, -2.0};
  Adam adam(2, {0.05});
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> g{2 * (p[0] - 1), 2 * (p[1] + 1)};
    adam.step(p, g);
  }
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(adam.steps() == 2000);
}

TEST_CASE("DSM training learns the N(0, I) score") {
  const Schedule sched = Schedule::geometric(100);
  MlpScoreNet net({{32, 32}, 8, false}, 100, 21);
  const double before = relative_score_error(net, 100);
  const GaussianMixture q(Gaussian::standard());
  TrainOptions opt;
  opt.steps = 2000;
  opt.seed = 4;
  const auto r = train(net, [&q](std::size_t n, std::uint64_t s) { return q.sample(n, s); }, sched, opt);
  CHECK(r.loss_curve.size() == 2000);
  const double after = relative_score_error(net, 100);
  CHECK(after < before);
  CHECK(after <= 0.10);
}

TEST_CASE("training aborts on a diverging loss") {
  const Schedule sched = Schedule::geometric(20);
  MlpScoreNet net({{16}, 4, false}, 20, 2);
  const GaussianMixture q(Gaussian({0, 0}, Sym2::identity(1e-3)));
  TrainOptions opt;
  opt.steps = 200;
  opt.adam.lr = 50.0;
  opt.divergence_factor = 10.0;
  CHECK_THROWS_AS(train(net, [&q](std::size_t n, std::uint64_t s) { return q.sample(n, s); }, sched, opt),
                  DivergenceError);
}

TEST_CASE("invalid shapes are rejected") {
  CHECK_THROWS_AS(MlpScoreNet({{8}, 3, false}, 10, 1), std::invalid_argument);
  MlpScoreNet net({{8}, 2, false}, 10, 1);
  const Schedule other = Schedule::geometric(11);
  const std::vector<Vec2> x0{{0, 0}};
  CHECK_THROWS_AS(dsm_loss(net, x0, other, 1), std::invalid_argument);
}
