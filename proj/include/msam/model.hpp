#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msam/autodiff.hpp"
#include "msam/rng.hpp"
#include "msam/tensor.hpp"

namespace msam {

enum class Activation { relu, tanh };
enum class FusionMode { early, late };

std::string to_string(Activation a);
std::string to_string(FusionMode f);

/// Modality-specific MLP encoder. An empty `hidden` list makes the encoder
/// the identity, so the features are the raw inputs.
struct EncoderSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;

  std::size_t feature_dim() const { return hidden.empty() ? input_dim : hidden.back(); }
};

struct FusionSpec {
  FusionMode mode = FusionMode::late;
  // early: maxout trunk
  std::size_t maxout_pieces = 2;
  std::size_t fused_width = 16;
  // late: optional hidden layer in each modality head (0 = linear head)
  std::size_t head_width = 0;
};

struct ModelSpec {
  std::vector<EncoderSpec> encoders;
  FusionSpec fusion;
  std::size_t classes = 2;
  bool bias = true;

  std::size_t modalities() const noexcept { return encoders.size(); }
  /// Throws SpecError when dimensions are inconsistent.
  void validate() const;
};

/// Bit m set means modality m (0-based) is present in the coalition.
using ModalityMask = std::uint32_t;

constexpr ModalityMask full_mask(std::size_t modalities) {
  return modalities >= 32 ? ~ModalityMask{0} : (ModalityMask{1} << modalities) - 1;
}

/// One n×d_m matrix per modality.
using Batch = std::vector<Tensor>;

struct ForwardTrace {
  std::vector<Tensor> features;  // φ_m
  Tensor fused;                  // ψ: maxout output (early) or summed branch logits (late)
  Tensor logits;
};

/// Per-modality encoders followed by early (maxout) or late (summed logits)
/// fusion. Parameters are stored in a ParameterVector tagged by role:
///
///   encoder m : enc{m}.* and, under late fusion, head{m}.*
///   fusion    : fuse.m{m}.k{k}.w, the cross-modality maxout weights
///   shared    : maxout biases, out.w and out.b
class MultimodalModel {
 public:
  /// Scaled-normal init (std = 1/sqrt(fan_in)) for weights, zero biases.
  static MultimodalModel build(ModelSpec spec, Rng& rng);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t modalities() const noexcept { return spec_.modalities(); }
  std::size_t classes() const noexcept { return spec_.classes; }

  ParameterVector& params() noexcept { return params_; }
  const ParameterVector& params() const noexcept { return params_; }

  struct TraceVars {
    std::vector<Var> features;
    Var fused;
    Var logits;
  };

  /// Records the forward pass. Modalities outside `mask` are fed all-zero
  /// inputs of the same shape.
  TraceVars record(Tape& tape, std::span<const Tensor> batch, ModalityMask mask) const;

  ForwardTrace forward(std::span<const Tensor> batch) const;
  ForwardTrace forward_masked(std::span<const Tensor> batch, ModalityMask mask) const;

  /// Mean softmax-CE of the (masked) forward pass. The returned function
  /// refers to `batch` and `labels`; they must outlive it.
  LossFn loss_fn(std::span<const Tensor> batch, std::span<const int> labels,
                 ModalityMask mask) const;
  LossFn loss_fn(std::span<const Tensor> batch, std::span<const int> labels) const;

  /// Number of samples in a batch after validating it against the ModelSpec.
  std::size_t check_batch(std::span<const Tensor> batch) const;

 private:
  MultimodalModel(ModelSpec spec, ParameterVector params)
      : spec_(std::move(spec)), params_(std::move(params)) {}

  ModelSpec spec_;
  ParameterVector params_;
};

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean softmax-CE and argmax accuracy (ties go to the lowest class index).
LossAccuracy loss_and_accuracy(const Tensor& logits, std::span<const int> labels);
inline LossAccuracy loss_and_accuracy(const ForwardTrace& trace, std::span<const int> labels) {
  return loss_and_accuracy(trace.logits, labels);
}

/// Index of the largest entry in each row, lowest index on ties.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace msam
