#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "msam/data.hpp"
#include "msam/model.hpp"
#include "msam/optim.hpp"

namespace msam {

enum class PeriodUnit { steps, epochs };

/// One experiment. The JSON schema is documented in docs/config.md; unknown
/// keys are rejected.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::filesystem::path output_dir = "runs/experiment";
  std::size_t eval_every = 1;
  /// Stop after this many evaluations without a validation-loss improvement;
  /// 0 disables early stopping.
  std::size_t early_stop_patience = 0;

  SyntheticSpec data;
  ModelSpec model;
  OptimConfig optimizer;
  PeriodUnit decay_unit = PeriodUnit::steps;
  /// Optimizers run under identical seeds by `train`; empty runs `optimizer`.
  std::vector<OptimizerKind> compare;

  void validate() const;

  std::size_t steps_per_epoch() const;
  /// Optimizer settings with the step-decay period expressed in iterations.
  OptimConfig resolved_optimizer() const;
  /// Copy running a different optimizer.
  ExperimentConfig with_optimizer(OptimizerKind kind) const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Reads a stand-alone data block (the "data" object of a config).
SyntheticSpec parse_data_spec(const nlohmann::json& j, std::uint64_t default_seed = 1);
SyntheticSpec load_data_spec(const std::filesystem::path& path);

/// Fully resolved config with every default spelled out.
nlohmann::json to_json(const ExperimentConfig& config);

/// FNV-1a digest (16 hex digits) of the semantic fields. Independent of key
/// order, name, output_dir and the comparison set.
std::string config_hash(const ExperimentConfig& config);

/// Built-in defaults used when no config is given.
ExperimentConfig default_config();

}  // namespace msam
