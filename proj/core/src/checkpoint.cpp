#include "mnf/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <nlohmann/json.hpp>

#include "mnf/config.hpp"
#include "mnf/errors.hpp"

namespace mnf {

namespace {

constexpr char kMagic[8] = {'m', 'n', 'f', '-', 'v', '1', '\0', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::vector<unsigned char> serialize(Model& model) {
  nlohmann::json tensors = nlohmann::json::array();
  auto params = model.parameters();
  for (const Parameter* p : params) tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  const std::string header =
      nlohmann::json{{"format", "mnf-v1"}, {"model", to_json(model.spec)}, {"tensors", tensors}}.dump();

  std::vector<unsigned char> out(kMagic, kMagic + 8);
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  for (const Parameter* p : params) {
    const auto* raw = reinterpret_cast<const unsigned char*>(p->value.storage().data());
    out.insert(out.end(), raw, raw + p->value.size() * sizeof(double));
  }
  return out;
}

Model deserialize(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("checkpoint: missing mnf-v1 magic");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "mnf-v1" || !header.contains("model") ||
      !header.contains("tensors") || !header.at("tensors").is_array()) {
    throw FormatError("checkpoint: header is not an mnf-v1 header");
  }
  ModelSpec spec;
  try {
    spec = model_spec_from_json(header.at("model"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  Rng scratch(0);
  Model model = init_model(spec, scratch);
  auto params = model.parameters();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size()) {
    throw FormatError("checkpoint: " + std::to_string(tensors.size()) + " tensors for a model with " +
                      std::to_string(params.size()) + " parameters");
  }
  std::size_t offset = 16 + header_len;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const auto& t = tensors[i];
    Shape shape;
    try {
      shape = t.at("shape").get<Shape>();
      if (t.at("name").get<std::string>() != p.name) throw FormatError("");
    } catch (const std::exception&) {
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " does not match parameter " + p.name);
    }
    if (shape != p.value.shape()) {
      throw FormatError("checkpoint: tensor " + p.name + " has shape " + to_string(shape) + ", expected " +
                        to_string(p.value.shape()));
    }
    const std::size_t n = p.value.size() * sizeof(double);
    if (bytes.size() < offset + n) throw FormatError("checkpoint: truncated payload at " + p.name);
    std::memcpy(p.value.storage().data(), bytes.data() + offset, n);
    offset += n;
  }
  if (offset != bytes.size()) throw FormatError("checkpoint: trailing bytes after payload");
  for (auto& ml : model.layers) {
    if (ml.kind != LayerKind::dropout) continue;
    auto& d = std::get<DropoutLayer>(ml.body);
    if (d.learnable) d.keep_prob = 1.0 / (1.0 + std::exp(-d.logit.value[0]));
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, Model& model) {
  const auto bytes = serialize(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize(bytes);
}

}  // namespace mnf
