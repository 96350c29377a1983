#pragma once

// Independent reference implementations used as test oracles. None of them
// goes through the Tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "msam/model.hpp"
#include "msam/rng.hpp"
#include "msam/shapley.hpp"

namespace msam::testing {

// Average marginal contribution over all M! player orders.
inline std::vector<double> permutation_shapley(const std::function<double(ModalityMask)>& v,
                                               std::size_t players) {
  std::vector<std::size_t> order(players);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(players, 0.0);
  double count = 0.0;
  do {
    ModalityMask s = 0;
    for (auto p : order) {
      const double before = v(s);
      s |= ModalityMask{1} << p;
      phi[p] += v(s) - before;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto& x : phi) x /= count;
  return phi;
}

inline std::vector<double> random_game(Rng& rng, std::size_t players) {
  std::vector<double> table(std::size_t{1} << players);
  for (auto& x : table) x = rng.normal();
  return table;
}

// Plain-loop dense layer y = x·W (+ b).
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor* b) {
  Tensor y({x.rows(), w.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b ? (*b)[j] : 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) s += x.at(i, k) * w.at(k, j);
      y.at(i, j) = s;
    }
  return y;
}

inline Tensor activate(const Tensor& x, Activation a) {
  Tensor y = x;
  for (auto& v : y.storage()) v = a == Activation::relu ? std::max(v, 0.0) : std::tanh(v);
  return y;
}

// Logits of `model` recomputed from its named parameters.
inline Tensor reference_logits(const MultimodalModel& model, std::span<const Tensor> batch,
                               ModalityMask mask) {
  const auto& spec = model.spec();
  const auto& p = model.params();
  auto get = [&](const std::string& name) { return p.tensor(*p.find(name)); };
  std::vector<Tensor> feats;
  for (std::size_t m = 0; m < spec.modalities(); ++m) {
    Tensor h = ((mask >> m) & 1U) ? batch[m] : Tensor(batch[m].shape());
    for (std::size_t i = 0; i < spec.encoders[m].hidden.size(); ++i) {
      const std::string pre = "enc" + std::to_string(m) + ".l" + std::to_string(i);
      Tensor b = spec.bias ? get(pre + ".b") : Tensor();
      h = activate(dense(h, get(pre + ".w"), spec.bias ? &b : nullptr), spec.encoders[m].activation);
    }
    feats.push_back(h);
  }
  const std::size_t n = batch[0].rows();
  Tensor logits({n, spec.classes});
  if (spec.fusion.mode == FusionMode::late) {
    for (std::size_t m = 0; m < spec.modalities(); ++m) {
      const std::string pre = "head" + std::to_string(m);
      Tensor h = feats[m];
      if (spec.fusion.head_width > 0) {
        Tensor b = spec.bias ? get(pre + ".h.b") : Tensor();
        h = activate(dense(h, get(pre + ".h.w"), spec.bias ? &b : nullptr),
                     spec.encoders[m].activation);
      }
      logits = add(logits, dense(h, get(pre + ".out.w"), nullptr));
    }
    if (spec.bias) {
      const Tensor b = get("out.b");
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < spec.classes; ++j) logits.at(i, j) += b[j];
    }
    return logits;
  }
  const std::size_t width = spec.fusion.fused_width;
  Tensor fused({n, width}, -INFINITY);
  for (std::size_t k = 0; k < spec.fusion.maxout_pieces; ++k) {
    Tensor z({n, width});
    for (std::size_t m = 0; m < spec.modalities(); ++m)
      z = add(z, dense(feats[m], get("fuse.m" + std::to_string(m) + ".k" + std::to_string(k) + ".w"),
                       nullptr));
    if (spec.bias) {
      const Tensor b = get("fuse.k" + std::to_string(k) + ".b");
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) z.at(i, j) += b[j];
    }
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = std::max(fused[i], z[i]);
  }
  Tensor b = spec.bias ? get("out.b") : Tensor();
  return dense(fused, get("out.w"), spec.bias ? &b : nullptr);
}

// Mean softmax cross-entropy computed with long double accumulation.
inline double reference_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  long double total = 0.0L;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    long double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max<long double>(mx, logits.at(i, j));
    long double s = 0.0L;
    for (std::size_t j = 0; j < logits.cols(); ++j) s += std::exp(logits.at(i, j) - mx);
    total += mx + std::log(s) - logits.at(i, static_cast<std::size_t>(labels[i]));
  }
  return static_cast<double>(total / static_cast<long double>(logits.rows()));
}

inline ModelSpec small_spec(FusionMode mode, std::vector<std::size_t> dims, std::size_t classes,
                            std::vector<std::size_t> hidden, Activation act, bool bias = true) {
  ModelSpec s;
  for (auto d : dims) s.encoders.push_back({d, hidden, act});
  s.fusion.mode = mode;
  s.fusion.fused_width = 5;
  s.fusion.maxout_pieces = 3;
  s.classes = classes;
  s.bias = bias;
  return s;
}

inline Batch random_batch(Rng& rng, const ModelSpec& spec, std::size_t n) {
  Batch b;
  for (const auto& e : spec.encoders) b.push_back(randn(rng, {n, e.input_dim}));
  return b;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

}  // namespace msam::testing
