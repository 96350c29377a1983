#include "msam/model.hpp"

#include <cmath>

#include "msam/errors.hpp"

namespace msam {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
std::string to_string(FusionMode f) { return f == FusionMode::early ? "early" : "late"; }

void ModelSpec::validate() const {
  if (encoders.empty()) throw SpecError("model needs at least one modality");
  if (encoders.size() > 8) throw SpecError("at most 8 modalities are supported");
  if (classes < 2) throw SpecError("model needs at least two classes");
  for (std::size_t m = 0; m < encoders.size(); ++m) {
    const auto& e = encoders[m];
    if (e.input_dim == 0) throw SpecError("encoder " + std::to_string(m) + ": input_dim must be positive");
    for (auto w : e.hidden)
      if (w == 0) throw SpecError("encoder " + std::to_string(m) + ": hidden widths must be positive");
  }
  if (fusion.mode == FusionMode::early) {
    if (fusion.maxout_pieces < 2) throw SpecError("maxout fusion needs at least 2 pieces");
    if (fusion.fused_width == 0) throw SpecError("fused_width must be positive");
  }
}

namespace {

std::string layer_name(const std::string& prefix, std::size_t i, const char* what) {
  return prefix + ".l" + std::to_string(i) + "." + what;
}

Tensor init_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  return scale(randn(rng, {fan_in, fan_out}), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

Var activate(Tape& tape, Var x, Activation a) {
  return a == Activation::relu ? tape.relu(x) : tape.tanh(x);
}

Var affine(Tape& tape, Var x, const std::string& w, const std::string& b, bool bias) {
  Var y = tape.matmul(x, tape.param(w));
  return bias ? tape.add_row(y, tape.param(b)) : y;
}

}  // namespace

MultimodalModel MultimodalModel::build(ModelSpec spec, Rng& rng) {
  spec.validate();
  ParameterVector params;
  const std::size_t classes = spec.classes;

  for (std::size_t m = 0; m < spec.modalities(); ++m) {
    const auto& enc = spec.encoders[m];
    const int mi = static_cast<int>(m);
    const std::string prefix = "enc" + std::to_string(m);
    std::size_t in = enc.input_dim;
    for (std::size_t i = 0; i < enc.hidden.size(); ++i) {
      const std::size_t out = enc.hidden[i];
      params.add(layer_name(prefix, i, "w"), init_weight(rng, in, out), ParamRole::encoder, mi);
      if (spec.bias) params.add(layer_name(prefix, i, "b"), Tensor({out}), ParamRole::encoder, mi);
      in = out;
    }
  }

  if (spec.fusion.mode == FusionMode::late) {
    for (std::size_t m = 0; m < spec.modalities(); ++m) {
      const int mi = static_cast<int>(m);
      const std::string prefix = "head" + std::to_string(m);
      std::size_t in = spec.encoders[m].feature_dim();
      if (spec.fusion.head_width > 0) {
        const std::size_t hw = spec.fusion.head_width;
        params.add(prefix + ".h.w", init_weight(rng, in, hw), ParamRole::encoder, mi);
        if (spec.bias) params.add(prefix + ".h.b", Tensor({hw}), ParamRole::encoder, mi);
        in = hw;
      }
      params.add(prefix + ".out.w", init_weight(rng, in, classes), ParamRole::encoder, mi);
    }
    if (spec.bias) params.add("out.b", Tensor({classes}), ParamRole::shared);
  } else {
    std::size_t total_in = 0;
    for (const auto& e : spec.encoders) total_in += e.feature_dim();
    const std::size_t width = spec.fusion.fused_width;
    for (std::size_t k = 0; k < spec.fusion.maxout_pieces; ++k) {
      for (std::size_t m = 0; m < spec.modalities(); ++m) {
        // fan_in is the concatenated feature width: the pieces act on [φ_1 .. φ_M].
        Tensor w = scale(randn(rng, {spec.encoders[m].feature_dim(), width}),
                           1.0 / std::sqrt(static_cast<double>(total_in)));
        params.add("fuse.m" + std::to_string(m) + ".k" + std::to_string(k) + ".w", w,
                   ParamRole::fusion, static_cast<int>(m), static_cast<int>(k));
      }
      if (spec.bias) {
        params.add("fuse.k" + std::to_string(k) + ".b", Tensor({width}), ParamRole::shared, -1,
                   static_cast<int>(k));
      }
    }
    params.add("out.w", init_weight(rng, width, classes), ParamRole::shared);
    if (spec.bias) params.add("out.b", Tensor({classes}), ParamRole::shared);
  }
  return MultimodalModel(std::move(spec), std::move(params));
}

std::size_t MultimodalModel::check_batch(std::span<const Tensor> batch) const {
  if (batch.size() != modalities()) {
    throw UsageError("batch has " + std::to_string(batch.size()) + " modalities, model expects " +
                     std::to_string(modalities()));
  }
  std::size_t n = 0;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    const Tensor& x = batch[m];
    if (x.size() == 0) throw UsageError("empty batch for modality " + std::to_string(m));
    if (x.cols() != spec_.encoders[m].input_dim) {
      throw DimensionError("modality " + std::to_string(m) + " expects " +
                           std::to_string(spec_.encoders[m].input_dim) + " features, got " +
                           std::to_string(x.cols()));
    }
    if (m == 0) n = x.rows();
    else if (x.rows() != n) throw DimensionError("modalities disagree on batch size");
  }
  return n;
}

MultimodalModel::TraceVars MultimodalModel::record(Tape& tape, std::span<const Tensor> batch,
                                                   ModalityMask mask) const {
  check_batch(batch);
  const bool bias = spec_.bias;
  TraceVars out;

  for (std::size_t m = 0; m < modalities(); ++m) {
    const bool present = (mask >> m) & 1U;
    Var h = tape.constant(present ? batch[m] : Tensor(batch[m].shape()));
    const auto& enc = spec_.encoders[m];
    const std::string prefix = "enc" + std::to_string(m);
    for (std::size_t i = 0; i < enc.hidden.size(); ++i) {
      h = activate(tape, affine(tape, h, layer_name(prefix, i, "w"), layer_name(prefix, i, "b"), bias),
                   enc.activation);
    }
    out.features.push_back(h);
  }

  if (spec_.fusion.mode == FusionMode::late) {
    Var summed{};
    for (std::size_t m = 0; m < modalities(); ++m) {
      const std::string prefix = "head" + std::to_string(m);
      Var h = out.features[m];
      if (spec_.fusion.head_width > 0) {
        h = activate(tape, affine(tape, h, prefix + ".h.w", prefix + ".h.b", bias),
                     spec_.encoders[m].activation);
      }
      Var branch = tape.matmul(h, tape.param(prefix + ".out.w"));
      summed = m == 0 ? branch : tape.add(summed, branch);
    }
    out.fused = summed;
    out.logits = bias ? tape.add_row(summed, tape.param("out.b")) : summed;
  } else {
    std::vector<Var> pieces;
    for (std::size_t k = 0; k < spec_.fusion.maxout_pieces; ++k) {
      Var z{};
      for (std::size_t m = 0; m < modalities(); ++m) {
        Var w = tape.param("fuse.m" + std::to_string(m) + ".k" + std::to_string(k) + ".w");
        Var term = tape.matmul(out.features[m], w);
        z = m == 0 ? term : tape.add(z, term);
      }
      if (bias) z = tape.add_row(z, tape.param("fuse.k" + std::to_string(k) + ".b"));
      pieces.push_back(z);
    }
    out.fused = tape.maxout(pieces);
    out.logits = affine(tape, out.fused, "out.w", "out.b", bias);
  }
  return out;
}

ForwardTrace MultimodalModel::forward_masked(std::span<const Tensor> batch, ModalityMask mask) const {
  Tape tape(params_);
  auto vars = record(tape, batch, mask);
  ForwardTrace trace;
  for (Var f : vars.features) trace.features.push_back(tape.value(f));
  trace.fused = tape.value(vars.fused);
  trace.logits = tape.value(vars.logits);
  return trace;
}

ForwardTrace MultimodalModel::forward(std::span<const Tensor> batch) const {
  return forward_masked(batch, full_mask(modalities()));
}

LossFn MultimodalModel::loss_fn(std::span<const Tensor> batch, std::span<const int> labels,
                                ModalityMask mask) const {
  return [this, batch, labels, mask](Tape& tape) {
    auto vars = record(tape, batch, mask);
    return tape.softmax_cross_entropy(vars.logits, labels);
  };
}

LossFn MultimodalModel::loss_fn(std::span<const Tensor> batch, std::span<const int> labels) const {
  return loss_fn(batch, labels, full_mask(modalities()));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t r = logits.rows();
  const std::size_t c = logits.cols();
  std::vector<int> out(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

LossAccuracy loss_and_accuracy(const Tensor& logits, std::span<const int> labels) {
  ParameterVector none;
  Tape tape(none);
  const double loss = tape.scalar(tape.softmax_cross_entropy(tape.constant(logits), labels));
  const auto pred = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return {loss, static_cast<double>(hits) / static_cast<double>(pred.size())};
}

}  // namespace msam
