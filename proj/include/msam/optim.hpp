#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msam/model.hpp"
#include "msam/shapley.hpp"

namespace msam {

enum class ScheduleKind { constant, step_decay, inverse_sqrt };
enum class OptimizerKind { sgd, sam, msam, msam_branch };

std::string to_string(ScheduleKind k);
std::string to_string(OptimizerKind k);
ScheduleKind parse_schedule_kind(const std::string& s);
OptimizerKind parse_optimizer_kind(const std::string& s);

struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double factor = 0.1;     // step_decay multiplier
  std::size_t period = 70; // step_decay period, in iterations
};

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double rho = 0.0;
  Schedule schedule;
  /// Recompute the Shapley attribution every this many iterations.
  std::size_t shapley_every = 1;
  ShapleyVariant shapley_variant = ShapleyVariant::standard;
  ShapleyTarget shapley_target = ShapleyTarget::loss;

  void validate() const;
};

struct Rates {
  double lr = 0.0;
  double rho = 0.0;
};

/// Learning rate and perturbation radius at iteration t >= 1.
///   constant:     (η₀, ρ₀)
///   inverse_sqrt: (η₀/√t, ρ₀/√t)
///   step_decay:   (η₀·factor^⌊t/period⌋, ρ₀)
Rates schedule(const OptimConfig& config, std::size_t t);

/// Gradient norms below this use a zero perturbation.
inline constexpr double kGradNormFloor = 1e-12;

struct PassCounts {
  std::size_t forward_backward = 0;
  std::size_t masked_forward = 0;

  friend bool operator==(const PassCounts&, const PassCounts&) = default;
};

/// A differentiable training objective over a flat parameter vector.
/// Every call counts toward `passes`.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::size_t modalities() const = 0;
  /// Mean loss at theta; the gradient is written to `grad`.
  virtual double loss_and_grad(std::span<const double> theta, std::span<double> grad) = 0;
  /// Loss without a gradient. BatchObjective counts it as a masked forward
  /// over the full coalition.
  virtual double loss(std::span<const double> theta);
  /// Shapley attribution at theta. `full_loss` is the already computed
  /// unmasked loss, when available. The default handles M = 1 only.
  virtual ShapleyAttribution attribute(std::span<const double> theta,
                                       std::optional<double> full_loss);
  /// Loss of the forward pass restricted to one modality (others zeroed).
  virtual double masked_loss_and_grad(std::span<const double> theta, std::size_t modality,
                                      std::span<double> grad);

  PassCounts passes;
};

/// Objective of a MultimodalModel on one mini-batch. The model supplies the
/// architecture and parameter layout; theta is passed per call.
class BatchObjective final : public Objective {
 public:
  BatchObjective(const MultimodalModel& model, AttributionOptions attribution = {});

  void set_batch(std::span<const Tensor> batch, std::span<const int> labels);

  std::size_t modalities() const override { return model_->modalities(); }
  double loss_and_grad(std::span<const double> theta, std::span<double> grad) override;
  double loss(std::span<const double> theta) override;
  ShapleyAttribution attribute(std::span<const double> theta,
                               std::optional<double> full_loss) override;
  double masked_loss_and_grad(std::span<const double> theta, std::size_t modality,
                              std::span<double> grad) override;

 private:
  const MultimodalModel* model_;
  AttributionOptions attribution_;
  ParameterVector scratch_;
  std::span<const Tensor> batch_;
  std::span<const int> labels_;
};

struct OptimState {
  std::size_t t = 0;
  std::vector<double> momentum;
  std::vector<double> perturbation;  // ε of the last step
  std::optional<ShapleyAttribution> attribution;
  std::size_t attribution_step = 0;  // t at which `attribution` was computed

  explicit OptimState(std::size_t parameters = 0)
      : momentum(parameters, 0.0), perturbation(parameters, 0.0) {}
};

struct StepReport {
  std::size_t t = 0;
  double loss = 0.0;                    // L(θ)
  std::optional<double> perturbed_loss; // L(θ+ε)
  double grad_norm = 0.0;               // ‖∇L(θ)‖
  double perturbation_norm = 0.0;       // ‖ε‖
  std::vector<double> nu;
  std::optional<std::size_t> dominant;
  bool attribution_degenerate = false;
  bool attribution_refreshed = false;
  /// Σ_m of the single-modality masked losses (per-branch mode only).
  std::optional<double> masked_loss_sum;
  double lr = 0.0;
  double rho = 0.0;
  PassCounts passes;
};

/// Heavy-ball update with coupled weight decay:
///   buf ← μ·buf + (direction + λθ);  θ ← θ − η·buf.
void momentum_update(std::span<double> params, std::span<const double> direction,
                     OptimState& state, const OptimConfig& config, double lr);

/// One SGD step given a precomputed gradient; advances state.t.
StepReport sgd_step(std::span<double> params, std::span<const double> grad, OptimState& state,
                    const OptimConfig& config);

StepReport sgd_step(Objective& objective, std::span<double> params, OptimState& state,
                    const OptimConfig& config);

/// ε = ρ_t·∇L/‖∇L‖, descend along ∇L(θ+ε).
StepReport sam_step(Objective& objective, std::span<double> params, OptimState& state,
                    const OptimConfig& config);

/// Modality-aware SAM. With ν from the Shapley attribution and d the dominant
/// modality, the shared forward loss is split into L_d = ν_d·L and
/// L_s = (1-ν_d)·L; only L_d is evaluated at the perturbed point:
///   ε = ρ_t·∇L_d/‖∇L_d‖,  direction = ν_d·∇L(θ+ε) + (1-ν_d)·∇L(θ).
StepReport msam_step(Objective& objective, std::span<double> params, OptimState& state,
                     const OptimConfig& config);

/// Variant where L_m is the loss with only modality m present, weighted by
/// ν_m:  direction = ν_d·∇L_d(θ+ε) + Σ_{m≠d} ν_m·∇L_m(θ).
StepReport per_branch_msam_step(Objective& objective, std::span<double> params,
                                OptimState& state, const OptimConfig& config);

/// Dispatches on config.kind.
StepReport optimizer_step(Objective& objective, std::span<double> params, OptimState& state,
                          const OptimConfig& config);

/// Passes a step of `kind` must perform: 2 forward/backward for a perturbed
/// SAM/M-SAM step (1 when ε = 0), plus 2^M - 1 masked forwards when M-SAM
/// refreshes a loss attribution (2^M for an accuracy attribution, which
/// cannot reuse the unmasked loss). Per-branch mode runs M + 1 (or M)
/// gradient passes and 2^M masked forwards.
PassCounts expected_passes(OptimizerKind kind, std::size_t modalities, bool perturbed,
                           bool attribution_refreshed,
                           ShapleyTarget target = ShapleyTarget::loss);

}  // namespace msam
