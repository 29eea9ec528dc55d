#include "mnf/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mnf/errors.hpp"

namespace mnf {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

std::string hex_bytes(const std::vector<unsigned char>& b, std::size_t n) {
  std::string out;
  char buf[4];
  for (std::size_t i = 0; i < std::min(n, b.size()); ++i) {
    std::snprintf(buf, sizeof buf, "%02x", b[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

void check_header(const std::vector<unsigned char>& b, std::uint32_t magic, std::size_t header,
                  const std::filesystem::path& path) {
  if (b.size() < 4 || be32(b, 0) != magic) {
    char want[16];
    std::snprintf(want, sizeof want, "%08x", magic);
    throw FormatError(path.string() + ": bad IDX magic [" + hex_bytes(b, 4) + "], expected " + want);
  }
  if (b.size() < header) {
    throw FormatError(path.string() + ": truncated IDX header (" + std::to_string(b.size()) + " bytes)");
  }
}

}  // namespace

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::idx_images: return "idx-images";
    case DatasetKind::csv_regression: return "csv-regression";
    case DatasetKind::synthetic_toy: return "synthetic-toy";
  }
  return "unknown";
}

Shape DatasetHandle::example_shape() const {
  const Shape& s = inputs.shape();
  return Shape(s.begin() + 1, s.end());
}

DatasetHandle load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_file(images);
  check_header(ib, 0x00000803, 16, images);
  const std::size_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images.string() + ": zero IDX dimension");
  const std::size_t need = 16 + n * rows * cols;
  if (ib.size() < need) {
    throw FormatError(images.string() + ": truncated, " + std::to_string(ib.size()) + " bytes but header implies " +
                      std::to_string(need));
  }

  const auto lb = read_file(labels);
  check_header(lb, 0x00000801, 8, labels);
  const std::size_t nl = be32(lb, 4);
  if (lb.size() < 8 + nl) {
    throw FormatError(labels.string() + ": truncated, " + std::to_string(lb.size()) + " bytes but header implies " +
                      std::to_string(8 + nl));
  }
  if (nl != n) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images in " + images.string() + " vs " +
                      std::to_string(nl) + " labels in " + labels.string());
  }

  DatasetHandle out;
  out.kind = DatasetKind::idx_images;
  out.normalization = "x/255";
  out.inputs = Tensor(Shape{n, rows, cols});
  auto px = out.inputs.data();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(ib[16 + i]) / 255.0;
  out.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = lb[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.n_classes = std::max<std::size_t>(10, max_label + 1);
  return out;
}

DatasetHandle make_toy_regression(std::uint64_t seed, std::size_t n) {
  if (n == 0) throw ContractViolation("make_toy_regression: n must be positive");
  Rng rng(seed, 0x7e57);
  DatasetHandle out;
  out.kind = DatasetKind::synthetic_toy;
  out.normalization = "none";
  out.seed = seed;
  out.inputs = Tensor(Shape{n, 1});
  out.targets = Tensor(Shape{n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const double x = -4.0 + 8.0 * rng.uniform();
    out.inputs[i] = x;
    out.targets[i] = x * x * x + 3.0 * rng.normal();
  }
  return out;
}

DatasetHandle load_csv_regression(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty CSV");
  std::vector<double> xs, ys;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b;
    if (!std::getline(row, a, ',') || !std::getline(row, b)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected two columns");
    }
    try {
      xs.push_back(std::stod(a));
      ys.push_back(std::stod(b));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not a number");
    }
  }
  if (xs.empty()) throw FormatError(path.string() + ": no data rows");
  DatasetHandle out;
  out.kind = DatasetKind::csv_regression;
  out.normalization = "none";
  const std::size_t n = xs.size();
  out.inputs = Tensor(Shape{n, 1}, std::move(xs));
  out.targets = Tensor(Shape{n, 1}, std::move(ys));
  return out;
}

DatasetHandle subset(const DatasetHandle& data, std::size_t offset, std::size_t count) {
  const std::size_t n = data.size();
  if (offset >= n) throw ContractViolation("subset: offset past end of dataset");
  count = std::min(count, n - offset);
  DatasetHandle out = data;
  Shape shape = data.inputs.shape();
  const std::size_t row = data.inputs.size() / n;
  shape[0] = count;
  auto first = data.inputs.storage().begin() + static_cast<std::ptrdiff_t>(offset * row);
  out.inputs = Tensor(shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * row)));
  if (!data.labels.empty()) {
    out.labels.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(offset),
                      data.labels.begin() + static_cast<std::ptrdiff_t>(offset + count));
  }
  if (data.targets.size() == n) {
    auto t = data.targets.storage().begin() + static_cast<std::ptrdiff_t>(offset);
    out.targets = Tensor(Shape{count, 1}, std::vector<double>(t, t + static_cast<std::ptrdiff_t>(count)));
  }
  return out;
}

Batch gather(const DatasetHandle& data, std::span<const std::size_t> rows, const Shape& example_shape) {
  const std::size_t n = data.size();
  const std::size_t row = n == 0 ? 0 : data.inputs.size() / n;
  if (num_elements(example_shape) != row) {
    throw ContractViolation("gather: example shape " + to_string(example_shape) + " does not hold " +
                            std::to_string(row) + " values");
  }
  if (rows.empty()) throw ContractViolation("gather: empty row set");
  Shape shape{rows.size()};
  shape.insert(shape.end(), example_shape.begin(), example_shape.end());
  Batch batch;
  std::vector<double> x;
  x.reserve(rows.size() * row);
  const bool has_targets = data.targets.size() == n;
  std::vector<double> y;
  for (std::size_t r : rows) {
    if (r >= n) throw ContractViolation("gather: row index out of range");
    auto first = data.inputs.storage().begin() + static_cast<std::ptrdiff_t>(r * row);
    x.insert(x.end(), first, first + static_cast<std::ptrdiff_t>(row));
    if (!data.labels.empty()) batch.labels.push_back(data.labels[r]);
    if (has_targets) y.push_back(data.targets[r]);
  }
  batch.inputs = Tensor(shape, std::move(x));
  if (has_targets) batch.targets = Tensor(Shape{rows.size(), 1}, std::move(y));
  return batch;
}

Batch whole(const DatasetHandle& data, const Shape& example_shape) {
  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return gather(data, rows, example_shape);
}

void permute_labels(DatasetHandle& data, Rng& rng) { shuffle(std::span<std::size_t>(data.labels), rng); }

}  // namespace mnf
