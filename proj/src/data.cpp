#include "msam/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "msam/errors.hpp"
#include "msam/rng.hpp"

namespace msam {

void SyntheticSpec::validate() const {
  if (classes < 2) throw SpecError("data: classes must be at least 2");
  if (modalities.empty()) throw SpecError("data: at least one modality is required");
  if (modalities.size() > 8) throw SpecError("data: at most 8 modalities are supported");
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    if (modalities[m].dim == 0) throw SpecError("data: modality " + std::to_string(m) + " has dim 0");
    if (!(modalities[m].snr >= 0.0) || !std::isfinite(modalities[m].snr)) {
      throw SpecError("data: snr must be finite and non-negative");
    }
  }
  if (n_train == 0 || n_val == 0 || n_test == 0) throw SpecError("data: sample counts must be >= 1");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

namespace {

Rng prototype_stream(const SyntheticSpec& spec) { return Rng(mix_seed(spec.seed, 0x70)); }
Rng sample_stream(const SyntheticSpec& spec) { return Rng(mix_seed(spec.seed, 0x5a)); }

Dataset draw(const SyntheticSpec& spec, const std::vector<Tensor>& protos, Rng& rng, std::size_t n,
             Split split) {
  Dataset d;
  d.split = split;
  d.classes = spec.classes;
  d.labels.resize(n);
  for (auto& y : d.labels) y = static_cast<int>(rng.below(spec.classes));
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    const std::size_t dim = spec.modalities[m].dim;
    const double s = spec.modalities[m].snr;
    Tensor x({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::size_t>(d.labels[i]);
      for (std::size_t j = 0; j < dim; ++j) x.at(i, j) = s * protos[m].at(y, j) + rng.normal();
    }
    d.inputs.push_back(std::move(x));
  }
  return d;
}

}  // namespace

std::vector<Tensor> prototypes(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = prototype_stream(spec);
  std::vector<Tensor> out;
  for (const auto& mod : spec.modalities) {
    Tensor p({spec.classes, mod.dim});
    for (std::size_t c = 0; c < spec.classes; ++c) {
      double sq = 0.0;
      do {
        sq = 0.0;
        for (std::size_t j = 0; j < mod.dim; ++j) {
          p.at(c, j) = rng.normal();
          sq += p.at(c, j) * p.at(c, j);
        }
      } while (sq < 1e-24);
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t j = 0; j < mod.dim; ++j) p.at(c, j) *= inv;
    }
    out.push_back(std::move(p));
  }
  return out;
}

Splits generate(const SyntheticSpec& spec) {
  const auto protos = prototypes(spec);
  Rng rng = sample_stream(spec);
  Splits s;
  s.train = draw(spec, protos, rng, spec.n_train, Split::train);
  s.val = draw(spec, protos, rng, spec.n_val, Split::val);
  s.test = draw(spec, protos, rng, spec.n_test, Split::test);
  return s;
}

MiniBatch gather(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("cannot gather an empty batch");
  MiniBatch b;
  b.indices.assign(indices.begin(), indices.end());
  b.labels.reserve(indices.size());
  for (auto i : indices) {
    if (i >= dataset.size()) throw UsageError("sample index out of range");
    b.labels.push_back(dataset.labels[i]);
  }
  for (const auto& x : dataset.inputs) {
    const std::size_t dim = x.cols();
    Tensor out({indices.size(), dim});
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto src = x.data().subspan(indices[r] * dim, dim);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
    }
    b.inputs.push_back(std::move(out));
  }
  return b;
}

std::vector<MiniBatch> batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                               std::size_t epoch) {
  if (batch_size == 0) throw UsageError("batch_size must be at least 1");
  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<MiniBatch> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min(batch_size, n - start);
    out.push_back(gather(dataset, std::span<const std::size_t>(order).subspan(start, len)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

constexpr std::array<char, 8> kMagic{'M', 'S', 'A', 'M', 'D', 'S', '1', '\0'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw UsageError("cannot open '" + path.string() + "' for writing");
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  template <typename U>
  void le(U v) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    bytes(buf, sizeof(U));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw UsageError("write to '" + path.string() + "' failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw UsageError("cannot open dataset file '" + path.string() + "'");
  }
  void bytes(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (!in_) throw SpecError("dataset file '" + path_.string() + "' is truncated");
  }
  template <typename U>
  U le() {
    unsigned char buf[sizeof(U)];
    bytes(reinterpret_cast<char*>(buf), sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

void write_split(Writer& w, const Dataset& d) {
  for (const auto& x : d.inputs)
    for (double v : x.data()) w.f64(v);
  for (int y : d.labels) w.le(static_cast<std::uint32_t>(y));
}

Dataset read_split(Reader& r, const std::vector<std::size_t>& dims, std::size_t classes,
                   std::size_t n, Split split) {
  Dataset d;
  d.split = split;
  d.classes = classes;
  for (auto dim : dims) {
    Tensor x({n, dim});
    for (auto& v : x.data()) v = r.f64();
    d.inputs.push_back(std::move(x));
  }
  d.labels.resize(n);
  for (auto& y : d.labels) {
    const auto v = r.le<std::uint32_t>();
    if (v >= classes) throw SpecError("dataset file holds a label outside [0, C)");
    y = static_cast<int>(v);
  }
  return d;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Splits& splits) {
  const Dataset& t = splits.train;
  if (t.modalities() == 0) throw UsageError("cannot write a dataset without modalities");
  Writer w(path);
  w.bytes(kMagic.data(), kMagic.size());
  w.le(static_cast<std::uint32_t>(t.classes));
  w.le(static_cast<std::uint32_t>(t.modalities()));
  for (const auto& x : t.inputs) w.le(static_cast<std::uint32_t>(x.cols()));
  for (const Dataset* d : {&splits.train, &splits.val, &splits.test})
    w.le(static_cast<std::uint64_t>(d->size()));
  for (const Dataset* d : {&splits.train, &splits.val, &splits.test}) write_split(w, *d);
  w.finish(path);
}

Splits read_dataset(const std::filesystem::path& path) {
  Reader r(path);
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw SpecError("'" + path.string() + "' is not an MSAMDS1 dataset file");
  const auto classes = r.le<std::uint32_t>();
  const auto modalities = r.le<std::uint32_t>();
  if (classes < 2 || modalities == 0 || modalities > 8) throw SpecError("dataset header is invalid");
  std::vector<std::size_t> dims(modalities);
  for (auto& d : dims) {
    d = r.le<std::uint32_t>();
    if (d == 0) throw SpecError("dataset header has a zero feature dimension");
  }
  std::array<std::size_t, 3> counts{};
  for (auto& c : counts) c = r.le<std::uint64_t>();
  Splits s;
  s.train = read_split(r, dims, classes, counts[0], Split::train);
  s.val = read_split(r, dims, classes, counts[1], Split::val);
  s.test = read_split(r, dims, classes, counts[2], Split::test);
  if (!r.at_end()) throw SpecError("dataset file has trailing bytes");
  return s;
}

}  // namespace msam
