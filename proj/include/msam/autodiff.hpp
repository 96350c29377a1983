#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msam/tensor.hpp"

namespace msam {

/// Which part of a multimodal network a parameter tensor belongs to.
enum class ParamRole { encoder, fusion, shared };

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  ParamRole role = ParamRole::shared;
  int modality = -1;  // owning modality for encoder/fusion parameters
  int piece = -1;     // maxout piece for fusion parameters
};

/// Named parameter tensors stored contiguously as one flat vector θ, with a
/// companion gradient vector of the same length.
class ParameterVector {
 public:
  std::size_t add(std::string name, const Tensor& init, ParamRole role = ParamRole::shared,
                  int modality = -1, int piece = -1);

  /// Total number of scalars P.
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t tensor_count() const noexcept { return infos_.size(); }
  const ParamInfo& info(std::size_t index) const { return infos_.at(index); }
  const std::vector<ParamInfo>& infos() const noexcept { return infos_; }
  std::optional<std::size_t> find(const std::string& name) const;

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  /// Replaces θ; the length must equal size().
  void assign(std::span<const double> flat);

  Tensor tensor(std::size_t index) const;
  void set_tensor(std::size_t index, const Tensor& value);

  std::span<const double> gradient() const noexcept { return grad_; }
  std::span<double> gradient() noexcept { return grad_; }
  void zero_gradient() noexcept;

  friend bool operator==(const ParameterVector& a, const ParameterVector& b) {
    return a.values_ == b.values_;
  }

 private:
  std::vector<ParamInfo> infos_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so the recording order is a topological order. A tape can be
/// differentiated once.
class Tape {
 public:
  explicit Tape(const ParameterVector& params);

  Var param(std::size_t index);
  Var param(const std::string& name);
  Var constant(Tensor value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  /// r×c matrix plus a length-c bias broadcast over rows.
  Var add_row(Var a, Var row);
  Var relu(Var a);
  Var tanh(Var a);
  /// Elementwise maximum over equally shaped pieces; the gradient flows to
  /// the first maximal piece.
  Var maxout(std::span<const Var> pieces);
  /// Sum of all elements, as a [1] tensor.
  Var sum(Var a);
  /// Mean softmax cross-entropy of r×C logits against r labels, fused and
  /// stabilised with log-sum-exp.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }
  bool consumed() const noexcept { return consumed_; }

  /// Gradient of the scalar `root` with respect to every parameter, laid out
  /// like ParameterVector::values(). Throws UsageError on a second call.
  std::vector<double> backward(Var root);

 private:
  using Backprop = std::function<void(Tape&, std::size_t)>;
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;  // empty until something flows into it
    std::vector<std::size_t> inputs;
    Backprop backprop;
    std::ptrdiff_t param_index = -1;
  };

  template <typename F>
  Tensor compute(const char* op, F&& f) const;
  Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, Backprop backprop);
  Tensor& grad_of(std::size_t id);
  void accumulate(std::size_t id, const Tensor& g);

  const ParameterVector* params_;
  std::vector<Node> nodes_;
  std::vector<std::ptrdiff_t> param_nodes_;
  bool consumed_ = false;
};

/// Records a scalar loss onto a tape.
using LossFn = std::function<Var(Tape&)>;

struct Recording {
  double loss = 0.0;
  Tape tape;
  Var root;
};

Recording forward(const LossFn& fn, const ParameterVector& params);
std::vector<double> backward(Recording& recording);

enum class Accumulate { no, yes };

/// Runs backward and writes the result into params' companion gradient,
/// zeroing it first unless accumulation is requested. Returns the loss.
double backward_into(Recording& recording, ParameterVector& params,
                     Accumulate mode = Accumulate::no);

/// Loss only; the tape is discarded.
double evaluate(const LossFn& fn, const ParameterVector& params);

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Coordinates compared; every coordinate when P is not larger.
  std::size_t sample = 100;
  std::uint64_t seed = 0x5eed;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::vector<std::size_t> checked;
  std::vector<std::size_t> flagged;  // indices whose error exceeds tolerance
  bool passed = true;
};

/// Compares an analytic gradient against central differences using
/// |g - g~| / max(1, |g|, |g~|).
GradCheckReport grad_check(const LossFn& fn, const ParameterVector& params,
                           std::span<const double> analytic, const GradCheckOptions& options = {});
GradCheckReport grad_check(const LossFn& fn, const ParameterVector& params,
                           const GradCheckOptions& options = {});

}  // namespace msam
