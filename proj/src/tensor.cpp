#include "msam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "msam/errors.hpp"

namespace msam {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f, const char* op) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  require_finite(out, op);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f, const char* op) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  require_finite(out, op);
  return out;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor of shape " + to_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw DimensionError("matrix needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for " + to_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + to_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + to_string(shape_));
  return shape_[1];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::squared_norm() const noexcept {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

void require_finite(const Tensor& t, const std::string& context) {
  if (!t.all_finite()) throw NumericError(context + ": non-finite value in result");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t r = a.rows();
  const std::size_t k = a.cols();
  const std::size_t c = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Tensor out({r, c});
  auto x = a.data();
  auto y = b.data();
  auto z = out.data();
  // i-k-j order keeps the inner loop contiguous in both b and out.
  for (std::size_t i = 0; i < r; ++i) {
    double* zi = z.data() + i * c;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = x[i * k + p];
      if (aip == 0.0) continue;
      const double* yp = y.data() + p * c;
      for (std::size_t j = 0; j < c; ++j) zi[j] += aip * yp[j];
    }
  }
  require_finite(out, "matmul");
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, std::plus<>{}, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return zip(a, b, std::minus<>{}, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return zip(a, b, std::multiplies<>{}, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  return map(a, [factor](double v) { return v * factor; }, "scale");
}

Tensor relu(const Tensor& a) {
  return map(a, [](double v) { return v > 0.0 ? v : 0.0; }, "relu");
}

Tensor tanh(const Tensor& a) {
  return map(a, [](double v) { return std::tanh(v); }, "tanh");
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor* b, double scalar) {
  auto rhs = [&]() -> const Tensor& {
    if (!b) throw DimensionError("binary elementwise op needs a second operand");
    return *b;
  };
  switch (op) {
    case Elementwise::add: return add(a, rhs());
    case Elementwise::sub: return sub(a, rhs());
    case Elementwise::mul: return mul(a, rhs());
    case Elementwise::scale: return scale(a, scalar);
    case Elementwise::relu: return relu(a);
    case Elementwise::tanh: return tanh(a);
  }
  throw UsageError("unknown elementwise op");
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  if (row.size() != c) {
    throw DimensionError("add_row: row of size " + std::to_string(row.size()) +
                         " does not match " + to_string(a.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += row[j];
  require_finite(out, "add_row");
  return out;
}

}  // namespace msam
