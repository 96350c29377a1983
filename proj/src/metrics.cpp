#include "msam/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "msam/errors.hpp"
#include "msam/rng.hpp"

namespace msam {

std::optional<double> overfitting_gap(double acc_train, double acc_test) {
  if (!(acc_test > 0.0)) return std::nullopt;
  return std::abs(acc_train - acc_test) / acc_test;
}

double relative_gain(double acc_method, double acc_baseline) {
  if (!(acc_baseline > 0.0)) throw UsageError("relative_gain needs a positive baseline accuracy");
  return (acc_method - acc_baseline) / acc_baseline * 100.0;
}

LossAccuracy evaluate_dataset(const MultimodalModel& model, const Dataset& dataset,
                              ModalityMask mask, std::size_t chunk) {
  if (dataset.size() == 0) throw UsageError("cannot evaluate an empty dataset");
  if (chunk == 0) throw UsageError("chunk must be positive");
  const std::size_t n = dataset.size();
  double loss = 0.0;
  double hits = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    idx.resize(len);
    for (std::size_t i = 0; i < len; ++i) idx[i] = start + i;
    const MiniBatch b = gather(dataset, idx);
    const auto trace = model.forward_masked(b.inputs, mask);
    const auto la = loss_and_accuracy(trace.logits, b.labels);
    loss += la.loss * static_cast<double>(len);
    hits += la.accuracy * static_cast<double>(len);
  }
  return {loss / static_cast<double>(n), hits / static_cast<double>(n)};
}

LossAccuracy evaluate_dataset(const MultimodalModel& model, const Dataset& dataset) {
  return evaluate_dataset(model, dataset, full_mask(model.modalities()));
}

double mono_modal_accuracy(const MultimodalModel& model, const Dataset& dataset, std::size_t m) {
  if (m >= model.modalities()) throw UsageError("modality index out of range");
  return evaluate_dataset(model, dataset, ModalityMask{1} << m).accuracy;
}

FlatLoss flat_loss(const MultimodalModel& model, std::span<const Tensor> batch,
                   std::span<const int> labels) {
  auto fn = model.loss_fn(batch, labels);
  return [fn, scratch = model.params()](std::span<const double> theta) mutable {
    scratch.assign(theta);
    return evaluate(fn, scratch);
  };
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void filter_normalize(std::vector<double>& d, std::span<const double> theta,
                      std::span<const ParamInfo> layout) {
  for (const auto& info : layout) {
    const std::size_t n = shape_size(info.shape);
    auto dir = std::span<double>(d).subspan(info.offset, n);
    const auto ref = theta.subspan(info.offset, n);
    const double dn = std::sqrt(dot(dir, dir));
    const double tn = std::sqrt(dot(ref, ref));
    const double factor = dn > 0.0 ? tn / dn : 0.0;
    for (auto& v : dir) v *= factor;
  }
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> landscape_directions(
    std::span<const double> theta, std::span<const ParamInfo> layout, std::uint64_t seed,
    std::size_t* attempts) {
  const std::size_t p = theta.size();
  Rng rng(seed);
  for (std::size_t attempt = 1; attempt <= 5; ++attempt) {
    std::vector<double> d1(p), d2(p);
    for (auto& v : d1) v = rng.normal();
    for (auto& v : d2) v = rng.normal();
    filter_normalize(d1, theta, layout);
    filter_normalize(d2, theta, layout);
    const double n1 = std::sqrt(dot(d1, d1));
    const double n2 = std::sqrt(dot(d2, d2));
    if (n1 < 1e-12 || n2 < 1e-12) continue;
    const double proj = dot(d2, d1) / (n1 * n1);
    for (std::size_t i = 0; i < p; ++i) d2[i] -= proj * d1[i];
    const double n_perp = std::sqrt(dot(d2, d2));
    if (n_perp < 1e-10 * n2) continue;
    for (auto& v : d2) v *= n2 / n_perp;
    if (attempts) *attempts = attempt;
    return {std::move(d1), std::move(d2)};
  }
  throw NumericError("landscape directions degenerate after 5 draws");
}

LandscapeGrid evaluate_landscape(const FlatLoss& loss, std::span<const double> theta,
                                 std::vector<double> d1, std::vector<double> d2,
                                 std::size_t resolution, double radius) {
  if (resolution < 3 || resolution % 2 == 0) throw UsageError("resolution must be odd and >= 3");
  if (!(radius >= 0.0)) throw UsageError("radius must be non-negative");
  if (d1.size() != theta.size() || d2.size() != theta.size()) {
    throw DimensionError("direction length differs from parameters");
  }
  LandscapeGrid g;
  g.radius = radius;
  g.resolution = resolution;
  const double half = static_cast<double>(resolution / 2);
  for (std::size_t i = 0; i < resolution; ++i) {
    // Symmetric about the centre so the middle coefficient is exactly zero.
    const double c = radius * (static_cast<double>(i) - half) / half;
    g.alphas.push_back(c);
    g.betas.push_back(c);
  }
  g.values = Tensor({resolution, resolution});
  std::vector<double> probe(theta.size());
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      for (std::size_t k = 0; k < probe.size(); ++k)
        probe[k] = theta[k] + g.alphas[i] * d1[k] + g.betas[j] * d2[k];
      g.values.at(i, j) = loss(probe);
    }
  }
  g.d1 = std::move(d1);
  g.d2 = std::move(d2);
  return g;
}

LandscapeGrid landscape_grid(const FlatLoss& loss, std::span<const double> theta,
                             std::span<const ParamInfo> layout, std::size_t resolution,
                             double radius, std::uint64_t seed) {
  if (resolution < 3 || resolution % 2 == 0) throw UsageError("resolution must be odd and >= 3");
  if (!(radius > 0.0)) throw UsageError("radius must be positive");
  std::size_t attempts = 0;
  auto [d1, d2] = landscape_directions(theta, layout, seed, &attempts);
  auto g = evaluate_landscape(loss, theta, std::move(d1), std::move(d2), resolution, radius);
  g.seed = seed;
  g.attempts = attempts;
  return g;
}

LandscapeGrid landscape_grid(const MultimodalModel& model, std::span<const Tensor> batch,
                             std::span<const int> labels, std::size_t resolution, double radius,
                             std::uint64_t seed) {
  return landscape_grid(flat_loss(model, batch, labels), model.params().values(),
                        model.params().infos(), resolution, radius, seed);
}

double sharpness_proxy(const FlatLoss& loss, std::span<const double> theta, double rho,
                       std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw UsageError("sharpness_proxy needs at least one sample");
  if (!(rho >= 0.0)) throw UsageError("rho must be non-negative");
  if (rho == 0.0) return 0.0;
  const std::size_t p = theta.size();
  const double base = loss(theta);
  Rng rng(seed);
  std::vector<double> u(p), probe(p);
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double nrm = 0.0;
    do {
      for (auto& v : u) v = rng.normal();
      nrm = std::sqrt(dot(u, u));
    } while (nrm < 1e-12);
    for (std::size_t k = 0; k < p; ++k) probe[k] = theta[k] + rho * u[k] / nrm;
    total += loss(probe) - base;
  }
  return total / static_cast<double>(samples);
}

double sharpness_proxy(const MultimodalModel& model, std::span<const Tensor> batch,
                       std::span<const int> labels, double rho, std::size_t samples,
                       std::uint64_t seed) {
  return sharpness_proxy(flat_loss(model, batch, labels), model.params().values(), rho, samples,
                         seed);
}

ConvergenceReport convergence_report(std::span<const double> grad_norms,
                                     std::optional<std::size_t> calibration) {
  const std::size_t n = grad_norms.size();
  if (n < 2) throw UsageError("convergence_report needs at least two iterations");
  ConvergenceReport r;
  r.calibration = calibration.value_or(std::max<std::size_t>(2, n / 4));
  if (r.calibration < 2 || r.calibration > n) {
    throw UsageError("calibration index must lie in [2, " + std::to_string(n) + "]");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double g = grad_norms[t];
    if (!std::isfinite(g) || g < 0.0) throw NumericError("gradient norms must be finite and >= 0");
    r.g_max = std::max(r.g_max, g);
    r.squared_norms.push_back(g * g);
    sum += g * g;
    r.running_average.push_back(sum / static_cast<double>(t + 1));
  }
  auto rate = [](std::size_t t) {
    const auto x = static_cast<double>(t);
    return std::log(x) / std::sqrt(x);
  };
  r.constant = r.running_average[r.calibration - 1] / rate(r.calibration);
  for (std::size_t t = 1; t <= n; ++t) r.bound.push_back(r.constant * rate(t));
  return r;
}

}  // namespace msam
