#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "msam/autodiff.hpp"
#include "msam/data.hpp"
#include "msam/model.hpp"

namespace msam {

/// τ = |acc_train - acc_test| / acc_test; empty when acc_test is 0.
std::optional<double> overfitting_gap(double acc_train, double acc_test);

/// Percentage change of acc_method relative to acc_baseline.
double relative_gain(double acc_method, double acc_baseline);

/// Loss and accuracy over a whole dataset with modalities outside `mask`
/// zero-padded, evaluated in chunks of `chunk` samples.
LossAccuracy evaluate_dataset(const MultimodalModel& model, const Dataset& dataset,
                              ModalityMask mask, std::size_t chunk = 1024);
LossAccuracy evaluate_dataset(const MultimodalModel& model, const Dataset& dataset);

/// Accuracy with only modality m (0-based) present.
double mono_modal_accuracy(const MultimodalModel& model, const Dataset& dataset, std::size_t m);

/// Loss as a function of a flat parameter vector.
using FlatLoss = std::function<double(std::span<const double>)>;

FlatLoss flat_loss(const MultimodalModel& model, std::span<const Tensor> batch,
                   std::span<const int> labels);

struct LandscapeGrid {
  std::vector<double> d1;
  std::vector<double> d2;
  std::vector<double> alphas;  // coefficient of d1, one per row
  std::vector<double> betas;   // coefficient of d2, one per column
  Tensor values;               // resolution × resolution
  double radius = 0.0;
  std::size_t resolution = 0;
  std::uint64_t seed = 0;
  std::size_t attempts = 0;    // direction draws used

  double center() const { return values.at(resolution / 2, resolution / 2); }
};

/// Random Gaussian directions, filter-normalised per parameter tensor (each
/// tensor's slice rescaled to that tensor's norm in theta), then d2 is
/// orthogonalised against d1 and restored to its previous norm. Redraws up
/// to 5 times when the orthogonal part vanishes.
std::pair<std::vector<double>, std::vector<double>> landscape_directions(
    std::span<const double> theta, std::span<const ParamInfo> layout, std::uint64_t seed,
    std::size_t* attempts = nullptr);

/// Loss at theta + α·d1 + β·d2 on a symmetric grid α, β ∈ [-radius, radius].
LandscapeGrid evaluate_landscape(const FlatLoss& loss, std::span<const double> theta,
                                 std::vector<double> d1, std::vector<double> d2,
                                 std::size_t resolution, double radius);

LandscapeGrid landscape_grid(const FlatLoss& loss, std::span<const double> theta,
                             std::span<const ParamInfo> layout, std::size_t resolution,
                             double radius, std::uint64_t seed);
LandscapeGrid landscape_grid(const MultimodalModel& model, std::span<const Tensor> batch,
                             std::span<const int> labels, std::size_t resolution, double radius,
                             std::uint64_t seed);

/// Mean of L(θ + ρu) - L(θ) over `samples` directions u drawn uniformly from
/// the unit sphere.
double sharpness_proxy(const FlatLoss& loss, std::span<const double> theta, double rho,
                       std::size_t samples, std::uint64_t seed);
double sharpness_proxy(const MultimodalModel& model, std::span<const Tensor> batch,
                       std::span<const int> labels, double rho, std::size_t samples,
                       std::uint64_t seed);

struct ConvergenceReport {
  std::vector<double> squared_norms;   // ‖∇L(θ_t)‖², t = 1..T
  std::vector<double> running_average; // (1/T)·Σ_{t≤T} ‖∇L(θ_t)‖²
  std::vector<double> bound;           // C·log T/√T
  double constant = 0.0;               // C
  std::size_t calibration = 0;         // T at which the bound meets the average
  double g_max = 0.0;                  // largest observed ‖∇L‖
};

/// `grad_norms` holds ‖∇L(θ_t)‖. The bound is calibrated at T = calibration
/// (1-based, >= 2); by default a quarter of the trace length.
ConvergenceReport convergence_report(std::span<const double> grad_norms,
                                     std::optional<std::size_t> calibration = std::nullopt);

}  // namespace msam
