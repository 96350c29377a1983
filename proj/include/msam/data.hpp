#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "msam/model.hpp"
#include "msam/tensor.hpp"

namespace msam {

struct ModalitySpec {
  std::size_t dim = 8;
  double snr = 1.0;  // s_m
};

/// Gaussian-prototype multimodal task: for label y, modality m is
/// x_m = s_m·μ_{y,m} + ξ with unit-norm prototypes μ and standard normal ξ.
struct SyntheticSpec {
  std::size_t classes = 4;
  std::vector<ModalitySpec> modalities;
  std::size_t n_train = 512;
  std::size_t n_val = 128;
  std::size_t n_test = 512;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class Split { train, val, test };
std::string to_string(Split s);

struct Dataset {
  std::vector<Tensor> inputs;  // one n×d_m matrix per modality
  std::vector<int> labels;
  Split split = Split::train;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t modalities() const noexcept { return inputs.size(); }
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Class prototypes, one C×d_m matrix of unit-norm rows per modality.
std::vector<Tensor> prototypes(const SyntheticSpec& spec);

/// Deterministic per seed. Prototypes come from the first child stream of the
/// seed, then train, val and test samples are drawn in that order from a
/// second stream, so the splits never share a draw.
Splits generate(const SyntheticSpec& spec);

struct MiniBatch {
  Batch inputs;
  std::vector<int> labels;
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Rows of `dataset` at `indices`, in that order.
MiniBatch gather(const Dataset& dataset, std::span<const std::size_t> indices);

/// Shuffled partition into batches of `batch_size` (the last may be short).
/// The order depends only on (seed, epoch).
std::vector<MiniBatch> batches(const Dataset& dataset, std::size_t batch_size,
                               std::uint64_t seed, std::size_t epoch);

/// Flat little-endian dataset file; layout in docs/dataset_format.md.
void write_dataset(const std::filesystem::path& path, const Splits& splits);
Splits read_dataset(const std::filesystem::path& path);

}  // namespace msam
