#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdlab/align.hpp"
#include "cdlab/compose.hpp"
#include "cdlab/distributions.hpp"
#include "cdlab/grid.hpp"
#include "cdlab/schedules.hpp"

namespace cdlab {

enum class ExperimentKind { align, compose_and, compose_or, kl_check, oracle };

/// Parses "align", "compose-and", ...; throws ConfigError otherwise.
ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);

struct ScheduleConfig {
  int steps = 200;
  std::string alpha = "geometric";  // geometric | linear | explicit
  std::vector<double> alphas;       // explicit alpha_0..alpha_T
  double eta_ddim = 1.0;

  Schedule build() const;
};

struct KlCheckConfig {
  std::vector<int> steps{50, 200, 800};
  std::size_t n_samples = 65536;
  std::size_t n_trajectories = 16384;
  std::vector<std::pair<int, int>> pairs;  // (p, q) model indices; empty: (0, 1)
};

struct PlotConfig {
  bool enabled = false;
  int width = 512;
  int height = 512;
};

/// A validated experiment description. Every section has defaults; unknown
/// keys anywhere are rejected.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::oracle;
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  std::vector<GaussianMixture> models;
  std::vector<std::string> model_names;
  GaussianMixture pretrained = GaussianMixture(Gaussian::standard());
  std::vector<Reward> rewards;
  std::vector<double> thresholds;

  AlignConfig align;
  DualOnlyConfig dual_only;
  PrimalDualConfig primal_dual;
  MixtureConfig mixture;
  KlCheckConfig kl_check;
  MinimaxOptions oracle;
  int oracle_grid = 256;
  PlotConfig plot;

  /// Canonical (key-sorted, compact) JSON of the input document.
  std::string canonical;
};

/// Parses and validates a config document for the given experiment kind.
/// Throws ConfigError with a path-qualified message on any schema problem.
ExperimentConfig parse_config(const std::string& text, ExperimentKind kind);
ExperimentConfig load_config(const std::string& path, ExperimentKind kind);

/// Applies a seed to every solver section (used for --seed and the config seed).
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

/// FNV-1a 64-bit hash of the canonical config text, as 16 hex digits.
std::string config_hash(const std::string& canonical);

}  // namespace cdlab
