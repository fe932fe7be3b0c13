#include "cdlab/score_field.hpp"

#include <stdexcept>
#include <string>

namespace cdlab {

ScoreField ScoreField::analytic(const GaussianMixture& gm, const NoiseSchedule& noise) {
  ScoreField f;
  f.kind_ = Kind::analytic;
  f.steps_ = noise.steps();
  auto levels = std::make_shared<std::vector<GaussianMixture>>();
  levels->reserve(static_cast<std::size_t>(f.steps_) + 1);
  levels->push_back(gm);
  for (int t = 1; t <= f.steps_; ++t) levels->push_back(gm.noised(noise.alpha(t)));
  f.levels_ = std::move(levels);
  return f;
}

ScoreField ScoreField::learned(std::shared_ptr<const MlpScoreNet> net) {
  if (!net) throw std::invalid_argument("learned score field needs a network");
  ScoreField f;
  f.kind_ = Kind::learned;
  f.steps_ = net->total_steps();
  f.net_ = std::move(net);
  return f;
}

ScoreField ScoreField::combo(std::vector<ScoreField> fields, std::vector<double> weights) {
  if (fields.empty() || fields.size() != weights.size()) {
    throw std::invalid_argument("combo needs one weight per field");
  }
  require_simplex(weights);
  for (const auto& f : fields) {
    if (f.steps() != fields.front().steps()) throw std::invalid_argument("combo fields disagree on T");
  }
  ScoreField f;
  f.kind_ = Kind::combo;
  f.steps_ = fields.front().steps();
  f.parts_ = std::make_shared<const std::vector<ScoreField>>(std::move(fields));
  f.weights_ = std::move(weights);
  return f;
}

ScoreField ScoreField::with_terminal(ScoreField body, ScoreField terminal) {
  if (body.steps() != terminal.steps()) throw std::invalid_argument("terminal field disagrees on T");
  ScoreField f;
  f.kind_ = Kind::terminal;
  f.steps_ = body.steps();
  f.parts_ = std::make_shared<const std::vector<ScoreField>>(std::vector<ScoreField>{std::move(body), std::move(terminal)});
  return f;
}

Vec2 ScoreField::operator()(const Vec2& x, int t) const {
  if (t < 0 || t > steps_) throw std::out_of_range("time index " + std::to_string(t) + " outside 0.." + std::to_string(steps_));
  switch (kind_) {
    case Kind::analytic:
      return (*levels_)[static_cast<std::size_t>(t)].score(x);
    case Kind::learned:
      return net_->forward(x, t);
    case Kind::combo: {
      Vec2 s;
      for (std::size_t i = 0; i < weights_.size(); ++i) {
        if (weights_[i] != 0.0) s += weights_[i] * (*parts_)[i](x, t);
      }
      return s;
    }
    case Kind::terminal:
      return (*parts_)[t <= 1 ? 1 : 0](x, t);
  }
  return {};
}

void ScoreField::eval_batch(std::span<const Vec2> xs, int t, std::span<Vec2> out) const {
  if (xs.size() != out.size()) throw std::invalid_argument("batch size mismatch");
  if (t < 0 || t > steps_) throw std::out_of_range("time index " + std::to_string(t) + " outside 0.." + std::to_string(steps_));
  switch (kind_) {
    case Kind::analytic: {
      const auto& gm = (*levels_)[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = gm.score(xs[i]);
      return;
    }
    case Kind::learned:
      net_->forward_batch(xs, t, out);
      return;
    case Kind::combo: {
      std::fill(out.begin(), out.end(), Vec2{});
      std::vector<Vec2> part(xs.size());
      for (std::size_t k = 0; k < weights_.size(); ++k) {
        if (weights_[k] == 0.0) continue;
        (*parts_)[k].eval_batch(xs, t, part);
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] += weights_[k] * part[i];
      }
      return;
    }
    case Kind::terminal:
      (*parts_)[t <= 1 ? 1 : 0].eval_batch(xs, t, out);
      return;
  }
}

const GaussianMixture& ScoreField::noised(int t) const {
  if (kind_ != Kind::analytic) throw std::logic_error("noised() needs an analytic field");
  return levels_->at(static_cast<std::size_t>(t));
}

const MlpScoreNet& ScoreField::net() const {
  if (kind_ != Kind::learned) throw std::logic_error("net() needs a learned field");
  return *net_;
}

const std::vector<ScoreField>& ScoreField::parts() const {
  if (!parts_) throw std::logic_error("parts() needs a combo or terminal field");
  return *parts_;
}

}  // namespace cdlab
