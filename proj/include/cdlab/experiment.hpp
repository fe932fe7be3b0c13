#pragma once

#include <filesystem>
#include <string>

#include "cdlab/config.hpp"
#include "json.hpp"

namespace cdlab {

struct RunOptions {
  std::filesystem::path out_dir = ".";
  /// compose-and: dual-only solver instead of primal-dual.
  bool dual_only = false;
  bool write_files = true;
};

/// Runs one experiment and returns its summary. With write_files, the CSV
/// artifacts are written first and summary.json last (via rename), so a
/// summary.json only exists for a completed run. All numbers are a function of
/// the config and seed; `wall_clock_s` is the only non-reproducible field.
nlohmann::json run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Process exit code for an exception escaping run_experiment:
/// 2 config, 3 infeasible, 4 divergence, 1 anything else.
int exit_code_for(const std::exception& e);

/// Writes `text` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace cdlab
