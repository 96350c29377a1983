#include "msam/optim.hpp"

#include <cmath>

#include "msam/errors.hpp"

namespace msam {

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::step_decay: return "step_decay";
    case ScheduleKind::inverse_sqrt: return "inverse_sqrt";
  }
  return "?";
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sam: return "sam";
    case OptimizerKind::msam: return "msam";
    case OptimizerKind::msam_branch: return "msam_branch";
  }
  return "?";
}

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "step_decay") return ScheduleKind::step_decay;
  if (s == "inverse_sqrt") return ScheduleKind::inverse_sqrt;
  throw SpecError("unknown schedule '" + s + "' (constant|step_decay|inverse_sqrt)");
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sam") return OptimizerKind::sam;
  if (s == "msam") return OptimizerKind::msam;
  if (s == "msam_branch") return OptimizerKind::msam_branch;
  throw SpecError("unknown optimizer '" + s + "' (sgd|sam|msam|msam_branch)");
}

void OptimConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw SpecError("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw SpecError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw SpecError("weight_decay must be non-negative");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw SpecError("rho must be non-negative");
  if (shapley_every == 0) throw SpecError("shapley_every must be at least 1");
  if (schedule.kind == ScheduleKind::step_decay) {
    if (schedule.period == 0) throw SpecError("step_decay period must be positive");
    if (!(schedule.factor > 0.0)) throw SpecError("step_decay factor must be positive");
  }
}

Rates schedule(const OptimConfig& config, std::size_t t) {
  if (t == 0) throw UsageError("schedule is defined for t >= 1");
  switch (config.schedule.kind) {
    case ScheduleKind::constant: return {config.lr, config.rho};
    case ScheduleKind::inverse_sqrt: {
      const double root = std::sqrt(static_cast<double>(t));
      return {config.lr / root, config.rho / root};
    }
    case ScheduleKind::step_decay: {
      const auto k = static_cast<double>(t / config.schedule.period);
      return {config.lr * std::pow(config.schedule.factor, k), config.rho};
    }
  }
  throw UsageError("unknown schedule");
}

// ---------------------------------------------------------------------------
// Objectives

ShapleyAttribution Objective::attribute(std::span<const double>, std::optional<double> full_loss) {
  if (modalities() != 1) throw UsageError("this objective provides no Shapley attribution");
  ShapleyAttribution a;
  a.phi = {0.0};
  a.nu = {1.0};
  a.dominant = 0;
  a.coalition_values = {0.0, full_loss ? -*full_loss : 0.0};
  a.full_value = a.coalition_values[1];
  return a;
}

double Objective::loss(std::span<const double> theta) {
  std::vector<double> unused(theta.size());
  return loss_and_grad(theta, unused);
}

double Objective::masked_loss_and_grad(std::span<const double> theta, std::size_t modality,
                                       std::span<double> grad) {
  if (modalities() != 1 || modality != 0) {
    throw UsageError("this objective provides no per-modality losses");
  }
  return loss_and_grad(theta, grad);
}

BatchObjective::BatchObjective(const MultimodalModel& model, AttributionOptions attribution)
    : model_(&model), attribution_(attribution), scratch_(model.params()) {
  attribution_.full_loss.reset();
}

void BatchObjective::set_batch(std::span<const Tensor> batch, std::span<const int> labels) {
  model_->check_batch(batch);
  if (labels.size() != batch.front().rows()) throw DimensionError("labels do not match batch size");
  batch_ = batch;
  labels_ = labels;
}

namespace {

void copy_gradient(const std::vector<double>& g, std::span<double> out) {
  if (out.size() != g.size()) throw DimensionError("gradient buffer has the wrong length");
  std::copy(g.begin(), g.end(), out.begin());
}

}  // namespace

double BatchObjective::loss_and_grad(std::span<const double> theta, std::span<double> grad) {
  if (batch_.empty()) throw UsageError("BatchObjective used before set_batch");
  scratch_.assign(theta);
  auto rec = forward(model_->loss_fn(batch_, labels_), scratch_);
  copy_gradient(backward(rec), grad);
  ++passes.forward_backward;
  return rec.loss;
}

double BatchObjective::masked_loss_and_grad(std::span<const double> theta, std::size_t modality,
                                            std::span<double> grad) {
  if (batch_.empty()) throw UsageError("BatchObjective used before set_batch");
  if (modality >= modalities()) throw UsageError("modality index out of range");
  scratch_.assign(theta);
  auto rec = forward(model_->loss_fn(batch_, labels_, ModalityMask{1} << modality), scratch_);
  copy_gradient(backward(rec), grad);
  ++passes.forward_backward;
  return rec.loss;
}

double BatchObjective::loss(std::span<const double> theta) {
  if (batch_.empty()) throw UsageError("BatchObjective used before set_batch");
  scratch_.assign(theta);
  const double value = evaluate(model_->loss_fn(batch_, labels_), scratch_);
  ++passes.masked_forward;
  return value;
}

ShapleyAttribution BatchObjective::attribute(std::span<const double> theta,
                                             std::optional<double> full_loss) {
  if (batch_.empty()) throw UsageError("BatchObjective used before set_batch");
  scratch_.assign(theta);
  AttributionOptions options = attribution_;
  options.full_loss = full_loss;
  return attribute_batch(*model_, scratch_, batch_, labels_, options, &passes.masked_forward);
}

// ---------------------------------------------------------------------------
// Steps

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(what) + " is non-finite");
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// ε = ρ·direction/‖direction‖, or zero below the norm floor. Returns true
/// when the perturbation is non-zero.
bool fill_perturbation(std::span<const double> direction, double rho, std::span<double> eps) {
  const double n = norm(direction);
  if (!(rho > 0.0) || n < kGradNormFloor) {
    std::fill(eps.begin(), eps.end(), 0.0);
    return false;
  }
  const double factor = rho / n;
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = factor * direction[i];
  return true;
}

std::vector<double> shifted(std::span<const double> theta, std::span<const double> eps) {
  std::vector<double> out(theta.begin(), theta.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += eps[i];
  return out;
}

void prepare(OptimState& state, std::size_t p) {
  if (state.momentum.size() != p) {
    if (state.t != 0 || !state.momentum.empty()) {
      throw DimensionError("optimizer state does not match the parameter count");
    }
    state.momentum.assign(p, 0.0);
  }
  state.perturbation.resize(p, 0.0);
}

StepReport begin_step(OptimState& state, const OptimConfig& config, std::size_t p,
                      const Objective* objective) {
  prepare(state, p);
  StepReport r;
  r.t = ++state.t;
  const Rates rates = schedule(config, r.t);
  r.lr = rates.lr;
  r.rho = rates.rho;
  if (objective) r.passes = objective->passes;
  return r;
}

void finish_passes(StepReport& r, const Objective& objective) {
  r.passes.forward_backward = objective.passes.forward_backward - r.passes.forward_backward;
  r.passes.masked_forward = objective.passes.masked_forward - r.passes.masked_forward;
}

/// Cached or fresh attribution according to shapley_every.
const ShapleyAttribution& current_attribution(Objective& objective, std::span<const double> theta,
                                              std::optional<double> full_loss, OptimState& state,
                                              const OptimConfig& config, StepReport& report) {
  const bool stale = !state.attribution || state.attribution->modalities() != objective.modalities() ||
                     (state.t - state.attribution_step) >= config.shapley_every;
  if (stale) {
    state.attribution = objective.attribute(theta, full_loss);
    state.attribution_step = state.t;
    report.attribution_refreshed = true;
  }
  report.nu = state.attribution->nu;
  report.dominant = state.attribution->dominant;
  report.attribution_degenerate = state.attribution->degenerate;
  return *state.attribution;
}

}  // namespace

void momentum_update(std::span<double> params, std::span<const double> direction,
                     OptimState& state, const OptimConfig& config, double lr) {
  if (direction.size() != params.size()) throw DimensionError("gradient length differs from parameters");
  require_finite(direction, "update direction");
  prepare(state, params.size());
  const double mu = config.momentum;
  const double lambda = config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& buf = state.momentum[i];
    buf = mu * buf + (direction[i] + lambda * params[i]);
    params[i] -= lr * buf;
  }
}

StepReport sgd_step(std::span<double> params, std::span<const double> grad, OptimState& state,
                    const OptimConfig& config) {
  StepReport r = begin_step(state, config, params.size(), nullptr);
  require_finite(grad, "gradient");
  r.grad_norm = norm(grad);
  std::fill(state.perturbation.begin(), state.perturbation.end(), 0.0);
  momentum_update(params, grad, state, config, r.lr);
  return r;
}

StepReport sgd_step(Objective& objective, std::span<double> params, OptimState& state,
                    const OptimConfig& config) {
  StepReport r = begin_step(state, config, params.size(), &objective);
  std::vector<double> g(params.size());
  r.loss = objective.loss_and_grad(params, g);
  require_finite(g, "gradient");
  r.grad_norm = norm(g);
  std::fill(state.perturbation.begin(), state.perturbation.end(), 0.0);
  momentum_update(params, g, state, config, r.lr);
  finish_passes(r, objective);
  return r;
}

StepReport sam_step(Objective& objective, std::span<double> params, OptimState& state,
                    const OptimConfig& config) {
  StepReport r = begin_step(state, config, params.size(), &objective);
  std::vector<double> g(params.size());
  r.loss = objective.loss_and_grad(params, g);
  require_finite(g, "gradient");
  r.grad_norm = norm(g);

  std::span<double> eps = state.perturbation;
  std::vector<double> direction = g;
  if (fill_perturbation(g, r.rho, eps)) {
    const auto probe = shifted(params, eps);
    r.perturbed_loss = objective.loss_and_grad(probe, direction);
    r.perturbation_norm = norm(eps);
  }
  momentum_update(params, direction, state, config, r.lr);
  finish_passes(r, objective);
  return r;
}

StepReport msam_step(Objective& objective, std::span<double> params, OptimState& state,
                     const OptimConfig& config) {
  if (objective.modalities() == 0) throw UsageError("msam_step needs at least one modality");
  StepReport r = begin_step(state, config, params.size(), &objective);
  const std::size_t p = params.size();

  std::vector<double> g(p);
  r.loss = objective.loss_and_grad(params, g);
  require_finite(g, "gradient");
  r.grad_norm = norm(g);

  const auto& attribution = current_attribution(objective, params, r.loss, state, config, r);
  const double nu_d = attribution.nu[attribution.dominant];

  // ∇L_d(θ) = ν_d·∇L(θ)
  std::vector<double> g_dom(p);
  for (std::size_t i = 0; i < p; ++i) g_dom[i] = nu_d * g[i];

  std::span<double> eps = state.perturbation;
  std::vector<double> direction = g;
  if (fill_perturbation(g_dom, r.rho, eps)) {
    const auto probe = shifted(params, eps);
    std::vector<double> g_probe(p);
    r.perturbed_loss = objective.loss_and_grad(probe, g_probe);
    r.perturbation_norm = norm(eps);
    for (std::size_t i = 0; i < p; ++i) direction[i] = nu_d * g_probe[i];
    if (nu_d < 1.0) {
      const double shared = 1.0 - nu_d;
      for (std::size_t i = 0; i < p; ++i) direction[i] += shared * g[i];
    }
  }
  momentum_update(params, direction, state, config, r.lr);
  finish_passes(r, objective);
  return r;
}

StepReport per_branch_msam_step(Objective& objective, std::span<double> params,
                                OptimState& state, const OptimConfig& config) {
  const std::size_t modalities = objective.modalities();
  if (modalities == 0) throw UsageError("per_branch_msam_step needs at least one modality");
  StepReport r = begin_step(state, config, params.size(), &objective);
  const std::size_t p = params.size();

  const auto& attribution = current_attribution(objective, params, std::nullopt, state, config, r);
  const std::vector<double> nu = attribution.nu;
  const std::size_t dom = attribution.dominant;
  if (r.attribution_refreshed && attribution.target == ShapleyTarget::loss) {
    r.loss = -attribution.full_value;
  } else {
    // The unmasked loss is reported but takes no part in the update.
    r.loss = objective.loss(params);
  }

  std::vector<std::vector<double>> grads(modalities, std::vector<double>(p));
  double masked_sum = 0.0;
  for (std::size_t m = 0; m < modalities; ++m) {
    masked_sum += objective.masked_loss_and_grad(params, m, grads[m]);
    require_finite(grads[m], "gradient");
  }
  r.masked_loss_sum = masked_sum;

  std::vector<double> unperturbed(p, 0.0);
  for (std::size_t m = 0; m < modalities; ++m)
    for (std::size_t i = 0; i < p; ++i) unperturbed[i] += nu[m] * grads[m][i];
  r.grad_norm = norm(unperturbed);

  std::vector<double> g_dom(p);
  for (std::size_t i = 0; i < p; ++i) g_dom[i] = nu[dom] * grads[dom][i];

  std::span<double> eps = state.perturbation;
  std::vector<double> direction = unperturbed;
  if (fill_perturbation(g_dom, r.rho, eps)) {
    const auto probe = shifted(params, eps);
    std::vector<double> g_probe(p);
    r.perturbed_loss = objective.masked_loss_and_grad(probe, dom, g_probe);
    r.perturbation_norm = norm(eps);
    for (std::size_t i = 0; i < p; ++i) direction[i] = nu[dom] * g_probe[i];
    for (std::size_t m = 0; m < modalities; ++m) {
      if (m == dom) continue;
      for (std::size_t i = 0; i < p; ++i) direction[i] += nu[m] * grads[m][i];
    }
  }
  momentum_update(params, direction, state, config, r.lr);
  finish_passes(r, objective);
  return r;
}

StepReport optimizer_step(Objective& objective, std::span<double> params, OptimState& state,
                          const OptimConfig& config) {
  switch (config.kind) {
    case OptimizerKind::sgd: return sgd_step(objective, params, state, config);
    case OptimizerKind::sam: return sam_step(objective, params, state, config);
    case OptimizerKind::msam: return msam_step(objective, params, state, config);
    case OptimizerKind::msam_branch: return per_branch_msam_step(objective, params, state, config);
  }
  throw UsageError("unknown optimizer kind");
}

PassCounts expected_passes(OptimizerKind kind, std::size_t modalities, bool perturbed,
                           bool attribution_refreshed, ShapleyTarget target) {
  const std::size_t coalitions = std::size_t{1} << modalities;
  switch (kind) {
    case OptimizerKind::sgd: return {1, 0};
    case OptimizerKind::sam: return {perturbed ? 2U : 1U, 0};
    case OptimizerKind::msam: {
      std::size_t masked = 0;
      if (attribution_refreshed) masked = target == ShapleyTarget::loss ? coalitions - 1 : coalitions;
      return {perturbed ? 2U : 1U, masked};
    }
    case OptimizerKind::msam_branch: {
      const bool reuse = attribution_refreshed && target == ShapleyTarget::loss;
      const std::size_t masked = (attribution_refreshed ? coalitions : 0) + (reuse ? 0 : 1);
      return {modalities + (perturbed ? 1 : 0), masked};
    }
  }
  return {};
}

}  // namespace msam
