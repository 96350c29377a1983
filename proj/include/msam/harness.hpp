#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msam/config.hpp"
#include "msam/metrics.hpp"
#include "msam/optim.hpp"

namespace msam {

/// Per-iteration trace of an optimizer step.
struct StepTrace {
  std::size_t epoch = 0;  // 1-based
  std::size_t t = 0;      // 1-based iteration
  double loss = 0.0;
  double grad_norm = 0.0;
  double perturbation_norm = 0.0;
  double lr = 0.0;
  double rho = 0.0;
  std::optional<std::size_t> dominant;  // 0-based
  std::vector<double> nu;
};

/// Metrics of one evaluated epoch.
struct MetricRecord {
  std::size_t epoch = 0;
  LossAccuracy train, val, test;
  std::optional<double> tau;  // from train and test accuracy
  /// Mono-modal accuracy per modality, per split.
  std::vector<double> mono_train, mono_val, mono_test;
  /// Mean ν over the epoch's iterations (empty for optimizers without ν).
  std::vector<double> mean_nu;
  /// Fraction of iterations each modality was dominant.
  std::vector<double> dominant_share;
  /// Share of the most frequently dominant modality.
  std::optional<double> dom_freq;
  double grad_sq_norm = 0.0;  // mean ‖∇L(θ_t)‖² over the epoch
  double lr = 0.0;
  double rho = 0.0;
};

struct RunRecord {
  std::string config_hash;
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::vector<MetricRecord> metrics;
  std::vector<StepTrace> steps;
  ParameterVector final_params;
  std::optional<ConvergenceReport> convergence;
  double wall_clock_seconds = 0.0;
  std::size_t epochs_completed = 0;
  bool early_stopped = false;
  bool failed = false;
  std::optional<std::size_t> failed_iteration;
  std::string error;
};

struct RunOptions {
  bool write_artifacts = true;
  /// Check every step's forward/backward counts against expected_passes.
  bool check_passes = true;
};

MultimodalModel build_model(const ExperimentConfig& config);
Splits build_data(const ExperimentConfig& config);
std::uint64_t shuffle_seed(const ExperimentConfig& config);

/// Trains config.optimizer. Writes metrics.csv, steps.csv, summary.json and
/// checkpoint.json into config.output_dir when artifacts are enabled. A
/// numeric failure stops training and is reported in the record.
RunRecord run(const ExperimentConfig& config, const RunOptions& options = {});

/// Runs every optimizer of config.compare (or config.optimizer when empty)
/// from the same data and initial parameters, each into output_dir/<name>.
std::vector<RunRecord> run_comparison(const ExperimentConfig& config,
                                      const RunOptions& options = {});

std::string metrics_csv_header(std::size_t modalities);
std::string metrics_csv(const std::vector<MetricRecord>& records, std::size_t modalities);

struct Checkpoint {
  ExperimentConfig config;
  ParameterVector params;
};

void write_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config,
                      const ParameterVector& params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Model of the checkpoint's config with the checkpoint's parameters.
MultimodalModel restore_model(const Checkpoint& checkpoint);

/// Reads the grad_norm column of a run's steps.csv.
std::vector<double> read_grad_norms(const std::filesystem::path& steps_csv);

/// Formats a double with 17 significant digits; empty for nullopt.
std::string format_number(std::optional<double> v);

}  // namespace msam
