#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mnf/elbo.hpp"
#include "mnf/rng.hpp"
#include "mnf/tensor.hpp"

namespace mnf {

enum class DatasetKind { idx_images, csv_regression, synthetic_toy };

std::string to_string(DatasetKind kind);

struct DatasetHandle {
  DatasetKind kind = DatasetKind::idx_images;
  Tensor inputs;                    // [N, ...]; images as [N, rows, cols] in [0, 1]
  std::vector<std::size_t> labels;  // images only
  Tensor targets;                   // [N, 1]; regression only
  std::size_t n_classes = 0;
  std::string normalization;        // "x/255" or "none"
  std::uint64_t seed = 0;           // generator seed for synthetic data

  std::size_t size() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }
  Shape example_shape() const;
};

// IDX pair: images magic 0x00000803 (u8, [n, rows, cols]), labels magic
// 0x00000801 (u8, [n]), both big-endian. Pixels scaled by 1/255; n_classes is
// max label + 1, at least 10.
DatasetHandle load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// x ~ U[-4, 4], y = x^3 + eps, eps ~ N(0, 9).
DatasetHandle make_toy_regression(std::uint64_t seed, std::size_t n = 20);

// Two-column CSV with a header line; columns x and y.
DatasetHandle load_csv_regression(const std::filesystem::path& path);

// Rows [offset, offset + count), clipped to the dataset.
DatasetHandle subset(const DatasetHandle& data, std::size_t offset, std::size_t count);

// Minibatch of the given rows with inputs reshaped to [B] + example_shape.
Batch gather(const DatasetHandle& data, std::span<const std::size_t> rows, const Shape& example_shape);
Batch whole(const DatasetHandle& data, const Shape& example_shape);

// Fisher-Yates shuffle of the labels.
void permute_labels(DatasetHandle& data, Rng& rng);

}  // namespace mnf
