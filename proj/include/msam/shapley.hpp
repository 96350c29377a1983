#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msam/model.hpp"

namespace msam {

/// `standard` is the textbook Shapley value including the empty coalition.
/// `paper` drops the S = ∅ term from the sum, which breaks efficiency.
enum class ShapleyVariant { standard, paper };
/// Value function attributed: negated mean loss, or accuracy.
enum class ShapleyTarget { loss, accuracy };

std::string to_string(ShapleyVariant v);
std::string to_string(ShapleyTarget t);
ShapleyVariant parse_shapley_variant(const std::string& s);
ShapleyTarget parse_shapley_target(const std::string& s);

constexpr std::size_t kMaxModalities = 8;

struct ShapleyAttribution {
  std::vector<double> phi;
  std::vector<double> nu;
  std::size_t dominant = 0;  // 0-based modality index
  double baseline = 0.0;     // v(∅)
  double full_value = 0.0;   // v(all modalities)
  /// v(S) indexed by coalition bitmask, 2^M entries.
  std::vector<double> coalition_values;
  /// All Φ non-positive, so ν fell back to uniform.
  bool degenerate = false;
  ShapleyVariant variant = ShapleyVariant::standard;
  ShapleyTarget target = ShapleyTarget::loss;

  std::size_t modalities() const noexcept { return phi.size(); }
  /// Σ Φ_m - (v(full) - v(∅)); zero up to rounding for the standard variant.
  double efficiency_residual() const;
};

using ValueFn = std::function<double(ModalityMask)>;

/// Exact Shapley values by enumerating all 2^M coalitions, each evaluated
/// once. `known` may carry precomputed coalition values (NaN = unknown), which
/// lets a caller reuse the full-coalition loss it already has.
ShapleyAttribution shapley_exact(const ValueFn& value, std::size_t modalities,
                                 ShapleyVariant variant = ShapleyVariant::standard,
                                 std::span<const double> known = {});

struct NormalizedWeights {
  std::vector<double> nu;
  bool degenerate = false;
};

/// ν_m = p_m / Σp with p_m = max(Φ_m, 0) + δ, δ = 1e-6·max(1, max|Φ|).
/// Falls back to uniform weights when no Φ_m is positive.
NormalizedWeights normalize_weights(std::span<const double> phi);

/// argmax with ties resolved toward the lowest index.
std::size_t dominant_modality(std::span<const double> nu);

struct AttributionOptions {
  ShapleyTarget target = ShapleyTarget::loss;
  ShapleyVariant variant = ShapleyVariant::standard;
  /// Mean loss of the unmasked batch, if the caller already has it.
  std::optional<double> full_loss;
};

/// Attribution of one mini-batch: v(S) is the mean loss (negated) or the
/// accuracy of the model with modalities outside S zero-padded.
/// `forward_count`, when given, is incremented per masked forward run.
ShapleyAttribution attribute_batch(const MultimodalModel& model, const ParameterVector& params,
                                   std::span<const Tensor> batch, std::span<const int> labels,
                                   const AttributionOptions& options = {},
                                   std::size_t* forward_count = nullptr);

inline ShapleyAttribution attribute_batch(const MultimodalModel& model,
                                          std::span<const Tensor> batch,
                                          std::span<const int> labels,
                                          const AttributionOptions& options = {}) {
  return attribute_batch(model, model.params(), batch, labels, options);
}

}  // namespace msam
