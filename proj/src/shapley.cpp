#include "msam/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "msam/errors.hpp"

namespace msam {

std::string to_string(ShapleyVariant v) { return v == ShapleyVariant::standard ? "standard" : "paper"; }
std::string to_string(ShapleyTarget t) { return t == ShapleyTarget::loss ? "loss" : "accuracy"; }

ShapleyVariant parse_shapley_variant(const std::string& s) {
  if (s == "standard") return ShapleyVariant::standard;
  if (s == "paper") return ShapleyVariant::paper;
  throw SpecError("shapley variant must be 'standard' or 'paper', got '" + s + "'");
}

ShapleyTarget parse_shapley_target(const std::string& s) {
  if (s == "loss") return ShapleyTarget::loss;
  if (s == "accuracy") return ShapleyTarget::accuracy;
  throw SpecError("shapley target must be 'loss' or 'accuracy', got '" + s + "'");
}

double ShapleyAttribution::efficiency_residual() const {
  double s = 0.0;
  for (double p : phi) s += p;
  return s - (full_value - baseline);
}

namespace {

double factorial(std::size_t n) {
  double f = 1.0;
  for (std::size_t i = 2; i <= n; ++i) f *= static_cast<double>(i);
  return f;
}

}  // namespace

ShapleyAttribution shapley_exact(const ValueFn& value, std::size_t modalities,
                                 ShapleyVariant variant, std::span<const double> known) {
  if (modalities == 0 || modalities > kMaxModalities) {
    throw UsageError("shapley_exact supports 1.." + std::to_string(kMaxModalities) +
                     " modalities, got " + std::to_string(modalities));
  }
  const std::size_t coalitions = std::size_t{1} << modalities;
  if (!known.empty() && known.size() != coalitions) {
    throw DimensionError("known coalition values must have 2^M entries");
  }

  ShapleyAttribution out;
  out.variant = variant;
  out.coalition_values.resize(coalitions);
  for (std::size_t s = 0; s < coalitions; ++s) {
    double v = !known.empty() && !std::isnan(known[s]) ? known[s]
                                                       : value(static_cast<ModalityMask>(s));
    if (!std::isfinite(v)) {
      throw NumericError("value function is non-finite on coalition " + std::to_string(s));
    }
    out.coalition_values[s] = v;
  }
  out.baseline = out.coalition_values.front();
  out.full_value = out.coalition_values.back();

  const double m_fact = factorial(modalities);
  std::vector<double> weight(modalities);
  for (std::size_t size = 0; size < modalities; ++size) {
    weight[size] = factorial(size) * factorial(modalities - size - 1) / m_fact;
  }

  out.phi.assign(modalities, 0.0);
  for (std::size_t m = 0; m < modalities; ++m) {
    const std::size_t bit = std::size_t{1} << m;
    for (std::size_t s = 0; s < coalitions; ++s) {
      if (s & bit) continue;
      if (s == 0 && variant == ShapleyVariant::paper) continue;
      const auto size = static_cast<std::size_t>(std::popcount(s));
      out.phi[m] += weight[size] * (out.coalition_values[s | bit] - out.coalition_values[s]);
    }
  }

  auto w = normalize_weights(out.phi);
  out.nu = std::move(w.nu);
  out.degenerate = w.degenerate;
  out.dominant = dominant_modality(out.nu);
  return out;
}

NormalizedWeights normalize_weights(std::span<const double> phi) {
  if (phi.empty()) throw UsageError("normalize_weights needs at least one value");
  NormalizedWeights out;
  const std::size_t m = phi.size();
  double max_abs = 0.0;
  bool any_positive = false;
  for (double p : phi) {
    if (!std::isfinite(p)) throw NumericError("non-finite Shapley value");
    max_abs = std::max(max_abs, std::abs(p));
    any_positive = any_positive || p > 0.0;
  }
  if (!any_positive) {
    out.nu.assign(m, 1.0 / static_cast<double>(m));
    out.degenerate = true;
    return out;
  }
  const double delta = 1e-6 * std::max(1.0, max_abs);
  out.nu.resize(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    out.nu[i] = std::max(phi[i], 0.0) + delta;
    total += out.nu[i];
  }
  for (auto& v : out.nu) v /= total;
  return out;
}

std::size_t dominant_modality(std::span<const double> nu) {
  if (nu.empty()) throw UsageError("dominant_modality needs at least one weight");
  std::size_t best = 0;
  for (std::size_t i = 1; i < nu.size(); ++i)
    if (nu[i] > nu[best]) best = i;
  return best;
}

ShapleyAttribution attribute_batch(const MultimodalModel& model, const ParameterVector& params,
                                   std::span<const Tensor> batch, std::span<const int> labels,
                                   const AttributionOptions& options, std::size_t* forward_count) {
  const std::size_t modalities = model.modalities();
  model.check_batch(batch);
  const bool loss_target = options.target == ShapleyTarget::loss;

  std::vector<double> known;
  const ModalityMask full = full_mask(modalities);
  if (loss_target && options.full_loss) {
    known.assign(std::size_t{1} << modalities, std::numeric_limits<double>::quiet_NaN());
    known[full] = -*options.full_loss;
  }

  auto value = [&](ModalityMask mask) {
    Tape tape(params);
    auto vars = model.record(tape, batch, mask);
    if (forward_count) ++*forward_count;
    auto la = loss_and_accuracy(tape.value(vars.logits), labels);
    return loss_target ? -la.loss : la.accuracy;
  };

  auto out = shapley_exact(value, modalities, options.variant, known);
  out.target = options.target;
  return out;
}

}  // namespace msam
