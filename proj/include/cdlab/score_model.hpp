#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cdlab/linalg.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/schedules.hpp"

namespace cdlab {

struct MlpOptions {
  std::vector<int> hidden{128, 128};
  /// Number of sinusoidal features of t/T appended to the 2-d input (even).
  int time_features = 8;
  bool zero_init_output = false;
};

/// Fully connected score network s(x, t) : R^2 x {0..T} -> R^2 with SiLU
/// activations and a sinusoidal time embedding. Parameters live in one flat
/// buffer (per layer: column-major weights, then bias) so optimisers and
/// finite-difference checks can address them uniformly.
class MlpScoreNet {
 public:
  MlpScoreNet(MlpOptions options, int total_steps, std::uint64_t seed);

  const MlpOptions& options() const { return options_; }
  int total_steps() const { return total_steps_; }
  int input_dim() const { return 2 + options_.time_features; }

  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  Vec2 forward(const Vec2& x, int t) const;
  void forward_batch(std::span<const Vec2> xs, int t, std::span<Vec2> out) const;
  void forward_batch(std::span<const Vec2> xs, std::span<const int> ts, std::span<Vec2> out) const;

  /// grad += d/dtheta sum_b <upstream_b, s(x_b, t_b)>.
  void accumulate_gradient(std::span<const Vec2> xs, std::span<const int> ts, std::span<const Vec2> upstream,
                           std::span<double> grad) const;

  /// Sinusoidal features of t / T written to `out` (length time_features).
  void time_embedding(int t, std::span<double> out) const;

  std::string to_json() const;
  static MlpScoreNet from_json(const std::string& text);

 private:
  struct LayerShape {
    int in;
    int out;
    std::size_t offset;  // weights; bias follows at offset + in * out
  };

  MlpScoreNet() = default;
  void build_layout();

  MlpOptions options_;
  int total_steps_ = 1;
  std::vector<LayerShape> layers_;
  std::vector<double> params_;
  std::vector<double> embedding_;  // (T + 1) x time_features, row per t
};

/// Chunked, order-deterministic batch gradient. Chunks of kReductionChunk
/// samples are processed independently (in parallel under Exec::parallel) and
/// summed in chunk order.
std::vector<double> batch_gradient(const MlpScoreNet& net, std::span<const Vec2> xs, std::span<const int> ts,
                                   std::span<const Vec2> upstream, Exec exec);

/// Batched forward pass over fixed-size chunks.
void batch_forward(const MlpScoreNet& net, std::span<const Vec2> xs, int t, std::span<Vec2> out, Exec exec);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimiser state.
class Adam {
 public:
  Adam(std::size_t n, AdamOptions options = {});
  void step(std::span<double> params, std::span<const double> grad);
  long steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  AdamOptions options_;
  std::vector<double> m_;
  std::vector<double> v_;
  long steps_ = 0;
};

/// Per-time weighting of the denoising score-matching regression.
enum class DsmWeighting {
  uniform,         // omega_t = 1
  noise_variance,  // omega_t = 1 - alpha_t
};

/// One DSM regression sample: time index, noised point and conditional-score target.
struct DsmSample {
  int t;
  Vec2 x_t;
  Vec2 target;
  double weight;
};

/// Draws t ~ U{1..T}, eps ~ N(0, I) for element b from stream (seed, b):
/// x_t = sqrt(a_t) x0 + sqrt(1 - a_t) eps, target = -eps / sqrt(1 - a_t).
DsmSample dsm_sample(const Vec2& x0, std::size_t b, const Schedule& sched, std::uint64_t seed,
                     DsmWeighting weighting);

struct DsmResult {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Mean over the batch of omega_t |s(x_t, t) - grad log q(x_t | x0)|^2 and its parameter gradient.
DsmResult dsm_loss(const MlpScoreNet& net, std::span<const Vec2> x0, const Schedule& sched, std::uint64_t seed,
                   DsmWeighting weighting = DsmWeighting::uniform, Exec exec = Exec::parallel);

using Sampler = std::function<std::vector<Vec2>(std::size_t n, std::uint64_t seed)>;

struct TrainOptions {
  int steps = 2000;
  int batch = 256;
  AdamOptions adam;
  DsmWeighting weighting = DsmWeighting::uniform;
  std::uint64_t seed = 0;
  /// Abort when a batch loss exceeds this multiple of the first batch loss.
  double divergence_factor = 1e3;
};

struct TrainResult {
  std::vector<double> loss_curve;
};

/// DSM training; draws a fresh batch from `sampler` at every step. If `optimizer`
/// is given it is reused (warm-started across calls).
TrainResult train(MlpScoreNet& net, const Sampler& sampler, const Schedule& sched, const TrainOptions& options,
                  Adam* optimizer = nullptr, Exec exec = Exec::parallel);

}  // namespace cdlab
