#pragma once

#include <memory>
#include <span>
#include <vector>

#include "cdlab/distributions.hpp"
#include "cdlab/linalg.hpp"
#include "cdlab/schedules.hpp"
#include "cdlab/score_model.hpp"

namespace cdlab {

/// A score predictor s(x, t) for t in 0..T. Value type; copies share the
/// underlying (immutable) data and are safe to use from parallel workers.
class ScoreField {
 public:
  enum class Kind { analytic, learned, combo, terminal };

  /// Exact noised score of `gm`: component k becomes
  /// N(sqrt(a_t) mu_k, a_t Sigma_k + (1 - a_t) I).
  static ScoreField analytic(const GaussianMixture& gm, const NoiseSchedule& noise);
  static ScoreField learned(std::shared_ptr<const MlpScoreNet> net);
  /// sum_i w_i s_i with w on the simplex.
  static ScoreField combo(std::vector<ScoreField> fields, std::vector<double> weights);
  /// `body` for t >= 2 and `terminal` for t <= 1.
  static ScoreField with_terminal(ScoreField body, ScoreField terminal);

  Kind kind() const { return kind_; }
  int steps() const { return steps_; }

  Vec2 operator()(const Vec2& x, int t) const;
  /// Evaluates the field on a batch at one time index.
  void eval_batch(std::span<const Vec2> xs, int t, std::span<Vec2> out) const;

  /// Noised mixture at level t (analytic fields only).
  const GaussianMixture& noised(int t) const;
  const MlpScoreNet& net() const;
  const std::vector<ScoreField>& parts() const;
  const std::vector<double>& weights() const { return weights_; }

 private:
  ScoreField() = default;

  Kind kind_ = Kind::analytic;
  int steps_ = 0;
  std::shared_ptr<const std::vector<GaussianMixture>> levels_;
  std::shared_ptr<const MlpScoreNet> net_;
  std::shared_ptr<const std::vector<ScoreField>> parts_;
  std::vector<double> weights_;
};

}  // namespace cdlab
