#include "msam/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "msam/errors.hpp"
#include "msam/rng.hpp"

namespace msam {

// ---------------------------------------------------------------------------
// ParameterVector

std::size_t ParameterVector::add(std::string name, const Tensor& init, ParamRole role,
                                 int modality, int piece) {
  if (find(name)) throw SpecError("duplicate parameter name '" + name + "'");
  ParamInfo info{std::move(name), init.shape(), values_.size(), role, modality, piece};
  values_.insert(values_.end(), init.data().begin(), init.data().end());
  grad_.resize(values_.size(), 0.0);
  infos_.push_back(std::move(info));
  return infos_.size() - 1;
}

std::optional<std::size_t> ParameterVector::find(const std::string& name) const {
  for (std::size_t i = 0; i < infos_.size(); ++i)
    if (infos_[i].name == name) return i;
  return std::nullopt;
}

void ParameterVector::assign(std::span<const double> flat) {
  if (flat.size() != values_.size()) {
    throw DimensionError("parameter vector has " + std::to_string(values_.size()) +
                         " entries, got " + std::to_string(flat.size()));
  }
  std::copy(flat.begin(), flat.end(), values_.begin());
}

Tensor ParameterVector::tensor(std::size_t index) const {
  const auto& inf = infos_.at(index);
  const auto n = shape_size(inf.shape);
  auto first = values_.begin() + static_cast<std::ptrdiff_t>(inf.offset);
  return Tensor(inf.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

void ParameterVector::set_tensor(std::size_t index, const Tensor& value) {
  const auto& inf = infos_.at(index);
  if (value.shape() != inf.shape) {
    throw DimensionError("parameter '" + inf.name + "' has shape " + to_string(inf.shape) +
                         ", got " + to_string(value.shape()));
  }
  std::copy(value.data().begin(), value.data().end(),
            values_.begin() + static_cast<std::ptrdiff_t>(inf.offset));
}

void ParameterVector::zero_gradient() noexcept { std::fill(grad_.begin(), grad_.end(), 0.0); }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(const ParameterVector& params)
    : params_(&params), param_nodes_(params.tensor_count(), -1) {}

template <typename F>
Tensor Tape::compute(const char* op, F&& f) const {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError("node " + std::to_string(nodes_.size()) + " (" + op + "): " + e.what());
  }
}

Var Tape::record(std::string op, Tensor value, std::vector<std::size_t> inputs, Backprop backprop) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite()) {
    throw NumericError("node " + std::to_string(id) + " (" + op + ") produced a non-finite value");
  }
  nodes_.push_back(Node{std::move(op), std::move(value), Tensor{}, std::move(inputs),
                        std::move(backprop), -1});
  return Var{id};
}

Tensor& Tape::grad_of(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.size() == 0) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  auto& dst = grad_of(id);
  auto out = dst.data();
  auto in = g.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
}

Var Tape::param(std::size_t index) {
  if (index >= param_nodes_.size()) throw UsageError("parameter index out of range");
  if (param_nodes_[index] >= 0) return Var{static_cast<std::size_t>(param_nodes_[index])};
  Var v = record("param:" + params_->info(index).name, params_->tensor(index), {}, nullptr);
  nodes_[v.id].param_index = static_cast<std::ptrdiff_t>(index);
  param_nodes_[index] = static_cast<std::ptrdiff_t>(v.id);
  return v;
}

Var Tape::param(const std::string& name) {
  auto index = params_->find(name);
  if (!index) throw UsageError("unknown parameter '" + name + "'");
  return param(*index);
}

Var Tape::constant(Tensor value) { return record("constant", std::move(value), {}, nullptr); }

Var Tape::matmul(Var a, Var b) {
  Tensor out = compute("matmul", [&] { return msam::matmul(value(a), value(b)); });
  return record("matmul", std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto& node = t.nodes_[self];
    const std::size_t ia = node.inputs[0];
    const std::size_t ib = node.inputs[1];
    const Tensor& gz = node.grad;
    const Tensor& av = t.nodes_[ia].value;
    const Tensor& bv = t.nodes_[ib].value;
    const std::size_t r = av.rows(), k = av.cols(), c = bv.cols();
    if (t.nodes_[ia].backprop || t.nodes_[ia].param_index >= 0) {
      Tensor& ga = t.grad_of(ia);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += gz.at(i, j) * bv.at(p, j);
          ga.at(i, p) += s;
        }
    }
    if (t.nodes_[ib].backprop || t.nodes_[ib].param_index >= 0) {
      Tensor& gb = t.grad_of(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double a_ip = av.at(i, p);
          if (a_ip == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) gb.at(p, j) += a_ip * gz.at(i, j);
        }
    }
  });
}

Var Tape::add(Var a, Var b) {
  Tensor out = compute("add", [&] { return msam::add(value(a), value(b)); });
  return record("add", std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const Tensor g = t.nodes_[self].grad;
    t.accumulate(t.nodes_[self].inputs[0], g);
    t.accumulate(t.nodes_[self].inputs[1], g);
  });
}

Var Tape::sub(Var a, Var b) {
  Tensor out = compute("sub", [&] { return msam::sub(value(a), value(b)); });
  return record("sub", std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const Tensor g = t.nodes_[self].grad;
    t.accumulate(t.nodes_[self].inputs[0], g);
    t.accumulate(t.nodes_[self].inputs[1], msam::scale(g, -1.0));
  });
}

Var Tape::mul(Var a, Var b) {
  Tensor out = compute("mul", [&] { return msam::mul(value(a), value(b)); });
  return record("mul", std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const Tensor g = t.nodes_[self].grad;
    const std::size_t ia = t.nodes_[self].inputs[0];
    const std::size_t ib = t.nodes_[self].inputs[1];
    const Tensor ga = msam::mul(g, t.nodes_[ib].value);
    const Tensor gb = msam::mul(g, t.nodes_[ia].value);
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var Tape::scale(Var a, double factor) {
  Tensor out = compute("scale", [&] { return msam::scale(value(a), factor); });
  return record("scale", std::move(out), {a.id},
                [factor](Tape& t, std::size_t self) {
                  t.accumulate(t.nodes_[self].inputs[0], msam::scale(t.nodes_[self].grad, factor));
                });
}

Var Tape::add_row(Var a, Var row) {
  Tensor out = compute("add_row", [&] { return msam::add_row(value(a), value(row)); });
  return record("add_row", std::move(out), {a.id, row.id},
                [](Tape& t, std::size_t self) {
                  const Tensor g = t.nodes_[self].grad;
                  t.accumulate(t.nodes_[self].inputs[0], g);
                  Tensor& gr = t.grad_of(t.nodes_[self].inputs[1]);
                  const std::size_t r = g.rows(), c = g.cols();
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gr[j] += g.at(i, j);
                });
}

Var Tape::relu(Var a) {
  Tensor out = compute("relu", [&] { return msam::relu(value(a)); });
  return record("relu", std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const auto& node = t.nodes_[self];
    Tensor g = node.grad;
    const Tensor& x = t.nodes_[node.inputs[0]].value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(x[i] > 0.0)) g[i] = 0.0;
    t.accumulate(node.inputs[0], g);
  });
}

Var Tape::tanh(Var a) {
  Tensor out = compute("tanh", [&] { return msam::tanh(value(a)); });
  return record("tanh", std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const auto& node = t.nodes_[self];
    Tensor g = node.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - node.value[i] * node.value[i];
    t.accumulate(node.inputs[0], g);
  });
}

Var Tape::maxout(std::span<const Var> pieces) {
  if (pieces.size() < 2) throw UsageError("maxout needs at least two pieces");
  const Shape& shape = value(pieces[0]).shape();
  Tensor out = value(pieces[0]);
  std::vector<std::size_t> winner(out.size(), 0);
  std::vector<std::size_t> inputs{pieces[0].id};
  for (std::size_t k = 1; k < pieces.size(); ++k) {
    const Tensor& p = value(pieces[k]);
    if (p.shape() != shape) throw DimensionError("maxout: pieces differ in shape");
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (p[i] > out[i]) {
        out[i] = p[i];
        winner[i] = k;
      }
    }
    inputs.push_back(pieces[k].id);
  }
  return record("maxout", std::move(out), std::move(inputs),
                [winner = std::move(winner)](Tape& t, std::size_t self) {
                  const auto& node = t.nodes_[self];
                  const Tensor g = node.grad;
                  const auto inputs = node.inputs;
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    t.grad_of(inputs[winner[i]])[i] += g[i];
                  }
                });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return record("sum", Tensor({1}, {s}), {a.id}, [](Tape& t, std::size_t self) {
    const double g = t.nodes_[self].grad[0];
    const std::size_t in = t.nodes_[self].inputs[0];
    Tensor& gi = t.grad_of(in);
    for (auto& v : gi.data()) v += g;
  });
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = value(logits);
  const std::size_t r = z.rows();
  const std::size_t c = z.cols();
  if (labels.size() != r) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(r) + " rows");
  }
  Tensor prob({r, c});
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw UsageError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    double m = z.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, z.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z.at(i, j) - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) prob.at(i, j) = std::exp(z.at(i, j) - lse);
    total += lse - z.at(i, static_cast<std::size_t>(y));
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return record("softmax_ce", Tensor({1}, {total / static_cast<double>(r)}), {logits.id},
                [prob = std::move(prob), ys = std::move(ys)](Tape& t, std::size_t self) {
                  const double g = t.nodes_[self].grad[0];
                  Tensor& gz = t.grad_of(t.nodes_[self].inputs[0]);
                  const std::size_t rows = prob.rows(), cols = prob.cols();
                  const double w = g / static_cast<double>(rows);
                  for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) gz.at(i, j) += w * prob.at(i, j);
                    gz.at(i, static_cast<std::size_t>(ys[i])) -= w;
                  }
                });
}

double Tape::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw DimensionError("expected a scalar node, got " + to_string(t.shape()));
  return t[0];
}

std::vector<double> Tape::backward(Var root) {
  if (consumed_) throw UsageError("tape already differentiated");
  consumed_ = true;
  if (root.id >= nodes_.size()) throw UsageError("root is not on this tape");
  if (nodes_[root.id].value.size() != 1) throw DimensionError("backward needs a scalar root");

  grad_of(root.id)[0] = 1.0;
  std::vector<double> out(params_->size(), 0.0);
  for (std::size_t id = root.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (node.grad.size() == 0) continue;
    if (node.param_index >= 0) {
      const auto& info = params_->info(static_cast<std::size_t>(node.param_index));
      for (std::size_t i = 0; i < node.grad.size(); ++i) out[info.offset + i] += node.grad[i];
    } else if (node.backprop) {
      node.backprop(*this, id);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) {
      throw NumericError("backward: non-finite gradient at parameter index " + std::to_string(i));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Recording forward(const LossFn& fn, const ParameterVector& params) {
  Tape tape(params);
  Var root = fn(tape);
  const double loss = tape.scalar(root);
  return Recording{loss, std::move(tape), root};
}

std::vector<double> backward(Recording& recording) { return recording.tape.backward(recording.root); }

double backward_into(Recording& recording, ParameterVector& params, Accumulate mode) {
  auto g = backward(recording);
  if (g.size() != params.size()) throw DimensionError("gradient length differs from parameters");
  auto dst = params.gradient();
  if (mode == Accumulate::no) params.zero_gradient();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  return recording.loss;
}

double evaluate(const LossFn& fn, const ParameterVector& params) {
  Tape tape(params);
  return tape.scalar(fn(tape));
}

GradCheckReport grad_check(const LossFn& fn, const ParameterVector& params,
                           std::span<const double> analytic, const GradCheckOptions& options) {
  if (!(options.step > 0.0 && options.step <= 1e-2)) {
    throw UsageError("grad_check step must lie in (0, 1e-2]");
  }
  if (analytic.size() != params.size()) throw DimensionError("analytic gradient length mismatch");

  GradCheckReport report;
  const std::size_t p = params.size();
  if (options.sample >= p) {
    report.checked.resize(p);
    for (std::size_t i = 0; i < p; ++i) report.checked[i] = i;
  } else {
    // Partial Fisher-Yates: first `sample` entries of a random permutation.
    std::vector<std::size_t> perm(p);
    for (std::size_t i = 0; i < p; ++i) perm[i] = i;
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.sample; ++i) {
      const std::size_t j = i + rng.below(p - i);
      std::swap(perm[i], perm[j]);
    }
    perm.resize(options.sample);
    std::sort(perm.begin(), perm.end());
    report.checked = std::move(perm);
  }

  if (!report.checked.empty()) report.worst_index = report.checked.front();
  ParameterVector probe = params;
  for (std::size_t idx : report.checked) {
    const double original = probe.values()[idx];
    probe.values()[idx] = original + options.step;
    const double up = evaluate(fn, probe);
    probe.values()[idx] = original - options.step;
    const double down = evaluate(fn, probe);
    probe.values()[idx] = original;
    const double numeric = (up - down) / (2.0 * options.step);
    const double g = analytic[idx];
    const double err = std::abs(g - numeric) / std::max({1.0, std::abs(g), std::abs(numeric)});
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_index = idx;
    }
    if (err > options.tolerance) report.flagged.push_back(idx);
  }
  report.passed = report.flagged.empty();
  return report;
}

GradCheckReport grad_check(const LossFn& fn, const ParameterVector& params,
                           const GradCheckOptions& options) {
  auto rec = forward(fn, params);
  auto g = backward(rec);
  return grad_check(fn, params, g, options);
}

}  // namespace msam
