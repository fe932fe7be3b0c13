#include "cdlab/score_model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include "json.hpp"
#include <numbers>
#include <stdexcept>

#include "cdlab/error.hpp"
#include "cdlab/rng.hpp"

namespace cdlab {

namespace {

using Matrix = Eigen::MatrixXd;
using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using Map = Eigen::Map<Eigen::MatrixXd>;

// Logistic function, vectorised through Eigen's array exp.
Matrix sigmoid(const Matrix& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

}  // namespace

MlpScoreNet::MlpScoreNet(MlpOptions options, int total_steps, std::uint64_t seed)
    : options_(std::move(options)), total_steps_(total_steps) {
  if (total_steps_ < 1) throw std::invalid_argument("total_steps must be >= 1");
  if (options_.time_features < 0 || options_.time_features % 2 != 0) {
    throw std::invalid_argument("time_features must be a nonnegative even number");
  }
  for (int h : options_.hidden) {
    if (h < 1) throw std::invalid_argument("hidden widths must be positive");
  }
  build_layout();

  // Glorot-uniform weights, zero biases.
  RngStream rng(seed, 0);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const bool last = l + 1 == layers_.size();
    const double limit = std::sqrt(6.0 / (L.in + L.out));
    for (int k = 0; k < L.in * L.out; ++k) {
      const double u = rng.uniform();
      params_[L.offset + static_cast<std::size_t>(k)] =
          (last && options_.zero_init_output) ? 0.0 : (2.0 * u - 1.0) * limit;
    }
  }
}

void MlpScoreNet::build_layout() {
  layers_.clear();
  int in = input_dim();
  std::size_t offset = 0;
  auto add = [&](int out) {
    layers_.push_back({in, out, offset});
    offset += static_cast<std::size_t>(in) * out + static_cast<std::size_t>(out);
    in = out;
  };
  for (int h : options_.hidden) add(h);
  add(2);
  params_.assign(offset, 0.0);

  const auto f = static_cast<std::size_t>(options_.time_features);
  embedding_.assign(static_cast<std::size_t>(total_steps_ + 1) * f, 0.0);
  for (int t = 0; t <= total_steps_; ++t) {
    time_embedding(t, std::span<double>(embedding_).subspan(static_cast<std::size_t>(t) * f, f));
  }
}

void MlpScoreNet::time_embedding(int t, std::span<double> out) const {
  const double tau = double(t) / total_steps_;
  const int pairs = options_.time_features / 2;
  for (int k = 0; k < pairs; ++k) {
    const double freq = 0.5 * std::numbers::pi * double(1 << k);
    out[static_cast<std::size_t>(2 * k)] = std::sin(freq * tau);
    out[static_cast<std::size_t>(2 * k + 1)] = std::cos(freq * tau);
  }
}

namespace {

// Forward pass storing pre-activations for the backward pass.
struct ForwardCache {
  std::vector<Matrix> pre;   // Z_l
  std::vector<Matrix> post;  // A_l (A_0 = input)
};

}  // namespace

Vec2 MlpScoreNet::forward(const Vec2& x, int t) const {
  Vec2 out;
  const int ts[1] = {t};
  forward_batch(std::span<const Vec2>(&x, 1), std::span<const int>(ts, 1), std::span<Vec2>(&out, 1));
  return out;
}

void MlpScoreNet::forward_batch(std::span<const Vec2> xs, int t, std::span<Vec2> out) const {
  std::vector<int> ts(xs.size(), t);
  forward_batch(xs, ts, out);
}

namespace {

Matrix build_input(const MlpScoreNet& net, std::span<const Vec2> xs, std::span<const int> ts,
                   const std::vector<double>& table) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  const int f = net.options().time_features;
  std::vector<double> scratch;
  Matrix input(net.input_dim(), n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto i = static_cast<std::size_t>(b);
    input(0, b) = xs[i].x;
    input(1, b) = xs[i].y;
    const double* emb = nullptr;
    if (ts[i] >= 0 && ts[i] <= net.total_steps()) {
      emb = table.data() + static_cast<std::size_t>(ts[i]) * static_cast<std::size_t>(f);
    } else {
      scratch.resize(static_cast<std::size_t>(f));
      net.time_embedding(ts[i], scratch);
      emb = scratch.data();
    }
    for (int k = 0; k < f; ++k) input(2 + k, b) = emb[k];
  }
  return input;
}

}  // namespace

void MlpScoreNet::forward_batch(std::span<const Vec2> xs, std::span<const int> ts, std::span<Vec2> out) const {
  if (xs.size() != ts.size() || xs.size() != out.size()) throw std::invalid_argument("batch size mismatch");
  if (xs.empty()) return;
  Matrix a = build_input(*this, xs, ts, embedding_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    ConstMap w(params_.data() + L.offset, L.out, L.in);
    Eigen::Map<const Eigen::VectorXd> bias(params_.data() + L.offset + static_cast<std::size_t>(L.in) * L.out, L.out);
    Matrix z = w * a;
    z.colwise() += bias;
    if (l + 1 < layers_.size()) {
      a = (z.array() * sigmoid(z).array()).matrix();
    } else {
      a = std::move(z);
    }
  }
  for (std::size_t b = 0; b < xs.size(); ++b) out[b] = {a(0, static_cast<Eigen::Index>(b)), a(1, static_cast<Eigen::Index>(b))};
}

void MlpScoreNet::accumulate_gradient(std::span<const Vec2> xs, std::span<const int> ts,
                                      std::span<const Vec2> upstream, std::span<double> grad) const {
  if (xs.size() != ts.size() || xs.size() != upstream.size()) throw std::invalid_argument("batch size mismatch");
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
  if (xs.empty()) return;
  const auto n = static_cast<Eigen::Index>(xs.size());

  std::vector<Matrix> pre;  // z_l of hidden layers
  std::vector<Matrix> sig;  // sigmoid(z_l)
  std::vector<Matrix> post;
  post.push_back(build_input(*this, xs, ts, embedding_));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    ConstMap w(params_.data() + L.offset, L.out, L.in);
    Eigen::Map<const Eigen::VectorXd> bias(params_.data() + L.offset + static_cast<std::size_t>(L.in) * L.out, L.out);
    Matrix z = w * post.back();
    z.colwise() += bias;
    if (l + 1 < layers_.size()) {
      sig.push_back(sigmoid(z));
      post.push_back((z.array() * sig.back().array()).matrix());
      pre.push_back(std::move(z));
    }
  }

  Matrix delta(2, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    delta(0, b) = upstream[static_cast<std::size_t>(b)].x;
    delta(1, b) = upstream[static_cast<std::size_t>(b)].y;
  }
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& L = layers_[li];
    Map gw(grad.data() + L.offset, L.out, L.in);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + L.offset + static_cast<std::size_t>(L.in) * L.out, L.out);
    // Products land in aligned temporaries first: Eigen peels unaligned
    // leading coefficients onto a different summation path, which would make
    // the result depend on where the caller's buffer happens to sit.
    const Matrix dw = delta * post[li].transpose();
    const Eigen::VectorXd db = delta.rowwise().sum();
    gw += dw;
    gb += db;
    if (li == 0) break;
    ConstMap w(params_.data() + L.offset, L.out, L.in);
    Matrix back = w.transpose() * delta;
    // d/dz [z sigmoid(z)] = s (1 + z (1 - s)).
    const auto z = pre[li - 1].array();
    const auto sg = sig[li - 1].array();
    delta = (back.array() * sg * (1.0 + z * (1.0 - sg))).matrix();
  }
}

std::string MlpScoreNet::to_json() const {
  nlohmann::json j;
  j["format"] = "cdlab-mlp-v1";
  j["hidden"] = options_.hidden;
  j["time_features"] = options_.time_features;
  j["total_steps"] = total_steps_;
  j["parameter_count"] = params_.size();
  j["parameters"] = params_;
  return j.dump();
}

MlpScoreNet MlpScoreNet::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("format", "") != "cdlab-mlp-v1") throw std::invalid_argument("unknown checkpoint format");
  MlpScoreNet net;
  net.options_.hidden = j.at("hidden").get<std::vector<int>>();
  net.options_.time_features = j.at("time_features").get<int>();
  net.total_steps_ = j.at("total_steps").get<int>();
  net.build_layout();
  auto p = j.at("parameters").get<std::vector<double>>();
  if (p.size() != net.params_.size() || j.at("parameter_count").get<std::size_t>() != p.size()) {
    throw std::invalid_argument("checkpoint parameter count does not match its shape header");
  }
  net.params_ = std::move(p);
  return net;
}

std::vector<double> batch_gradient(const MlpScoreNet& net, std::span<const Vec2> xs, std::span<const int> ts,
                                   std::span<const Vec2> upstream, Exec exec) {
  const std::size_t chunks = chunk_count(xs.size());
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(net.parameter_count(), 0.0));
  for_each_index(chunks, exec, [&](std::size_t c) {
    const std::size_t lo = c * kReductionChunk;
    const std::size_t len = std::min(kReductionChunk, xs.size() - lo);
    net.accumulate_gradient(xs.subspan(lo, len), ts.subspan(lo, len), upstream.subspan(lo, len), partial[c]);
  });
  std::vector<double> grad(net.parameter_count(), 0.0);
  for (const auto& p : partial) {
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += p[k];
  }
  return grad;
}

void batch_forward(const MlpScoreNet& net, std::span<const Vec2> xs, int t, std::span<Vec2> out, Exec exec) {
  const std::size_t chunks = chunk_count(xs.size());
  for_each_index(chunks, exec, [&](std::size_t c) {
    const std::size_t lo = c * kReductionChunk;
    const std::size_t len = std::min(kReductionChunk, xs.size() - lo);
    net.forward_batch(xs.subspan(lo, len), t, out.subspan(lo, len));
  });
}

Adam::Adam(std::size_t n, AdamOptions options) : options_(options), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("Adam size mismatch");
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(steps_));
  const double c2 = 1.0 - std::pow(b2, double(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    m_[k] = b1 * m_[k] + (1.0 - b1) * grad[k];
    v_[k] = b2 * v_[k] + (1.0 - b2) * grad[k] * grad[k];
    params[k] -= options_.lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + options_.eps);
  }
}

DsmSample dsm_sample(const Vec2& x0, std::size_t b, const Schedule& sched, std::uint64_t seed,
                     DsmWeighting weighting) {
  RngStream rng(seed, b);
  const int t = rng.uniform_int(1, sched.steps());
  const Vec2 eps = rng.normal2();
  const double s1a = sched.sqrt_one_minus_alpha(t);
  const double w = weighting == DsmWeighting::uniform ? 1.0 : 1.0 - sched.alpha(t);
  return {t, sched.sqrt_alpha(t) * x0 + s1a * eps, (-1.0 / s1a) * eps, w};
}

DsmResult dsm_loss(const MlpScoreNet& net, std::span<const Vec2> x0, const Schedule& sched, std::uint64_t seed,
                   DsmWeighting weighting, Exec exec) {
  if (x0.empty()) throw std::invalid_argument("dsm_loss needs a nonempty batch");
  if (net.total_steps() != sched.steps()) throw std::invalid_argument("network and schedule disagree on T");
  const std::size_t n = x0.size();
  std::vector<Vec2> xt(n);
  std::vector<Vec2> target(n);
  std::vector<double> weight(n);
  std::vector<int> ts(n);
  for (std::size_t b = 0; b < n; ++b) {
    const DsmSample s = dsm_sample(x0[b], b, sched, seed, weighting);
    ts[b] = s.t;
    xt[b] = s.x_t;
    target[b] = s.target;
    weight[b] = s.weight;
  }
  std::vector<Vec2> pred(n);
  const std::size_t chunks = chunk_count(n);
  for_each_index(chunks, exec, [&](std::size_t c) {
    const std::size_t lo = c * kReductionChunk;
    const std::size_t len = std::min(kReductionChunk, n - lo);
    net.forward_batch(std::span<const Vec2>(xt).subspan(lo, len), std::span<const int>(ts).subspan(lo, len),
                      std::span<Vec2>(pred).subspan(lo, len));
  });
  DsmResult result;
  std::vector<Vec2> upstream(n);
  const double inv_n = 1.0 / double(n);
  for (std::size_t b = 0; b < n; ++b) {
    const Vec2 r = pred[b] - target[b];
    result.loss += weight[b] * squared_norm(r) * inv_n;
    upstream[b] = (2.0 * weight[b] * inv_n) * r;
  }
  result.gradient = batch_gradient(net, xt, ts, upstream, exec);
  return result;
}

TrainResult train(MlpScoreNet& net, const Sampler& sampler, const Schedule& sched, const TrainOptions& options,
                  Adam* optimizer, Exec exec) {
  TrainResult result;
  if (options.steps <= 0) return result;
  if (options.batch < 1) throw std::invalid_argument("batch must be >= 1");
  Adam local(net.parameter_count(), options.adam);
  Adam& opt = optimizer ? *optimizer : local;
  result.loss_curve.reserve(static_cast<std::size_t>(options.steps));
  for (int step = 0; step < options.steps; ++step) {
    const std::uint64_t step_seed = derive_seed(options.seed, static_cast<std::uint64_t>(step));
    const auto batch = sampler(static_cast<std::size_t>(options.batch), derive_seed(step_seed, 1));
    const DsmResult r = dsm_loss(net, batch, sched, derive_seed(step_seed, 2), options.weighting, exec);
    if (!std::isfinite(r.loss) ||
        (!result.loss_curve.empty() && r.loss > options.divergence_factor * result.loss_curve.front())) {
      throw DivergenceError("primal step diverged at step " + std::to_string(step) + " (loss " +
                            std::to_string(r.loss) + ")");
    }
    result.loss_curve.push_back(r.loss);
    opt.step(net.parameters(), r.gradient);
  }
  return result;
}

}  // namespace cdlab
