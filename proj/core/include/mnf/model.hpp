#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mnf/layers.hpp"

namespace mnf {

enum class LayerKind { mnf_dense, mnf_conv, ffg, fflu, dropout, l2_dense, l2_conv, maxpool, relu, flatten };
enum class Likelihood { categorical, gaussian };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& text);
std::string to_string(Likelihood kind);
Likelihood parse_likelihood(const std::string& text);

// Prior per weight-bearing layer follows from its kind: N(0, I) for mnf_*,
// ffg and l2_*; log-uniform for fflu.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0, out = 0;  // dense kinds
  std::size_t kernel = 5, channels = 1, filters = 0;  // conv kinds
  ops::Padding padding = ops::Padding::valid;
  std::size_t flow_q = 2, flow_r = 2;
  std::size_t hidden_q = 50, hidden_r = 100;
  double keep_prob = 0.5;  // dropout
  bool learnable = false;  // dropout

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  Shape input_shape;  // per example, e.g. {784} or {28, 28, 1}
  std::vector<LayerSpec> layers;
  Likelihood likelihood = Likelihood::categorical;
  double noise_variance = 9.0;  // gaussian likelihood only
  double sigma_cap = std::numeric_limits<double>::infinity();

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Checks conformance of adjacent shapes; throws ConfigError listing every
// offending layer.
void validate(const ModelSpec& spec);
// Per-example output shape of each layer, in order.
std::vector<Shape> layer_shapes(const ModelSpec& spec);

struct NoLayerParams {};
using LayerBody = std::variant<NoLayerParams, MnfDenseLayer, MnfConvLayer, GaussianDenseLayer, DenseLayer, ConvLayer,
                               DropoutLayer>;

struct ModelLayer {
  LayerKind kind;
  std::string name;
  LayerBody body;
};

struct Model {
  ModelSpec spec;
  std::vector<ModelLayer> layers;

  // Declaration order; names are unique.
  std::vector<Parameter*> parameters();
  std::size_t n_outputs() const;
};

Model init_model(const ModelSpec& spec, Rng& rng);

// What a stochastic layer drew during one forward pass.
struct LayerTrace {
  std::size_t layer = 0;
  std::optional<MnfNoiseSample> noise;
  std::optional<DropoutForward> dropout;
};

struct ForwardResult {
  Var output;  // [B, n_outputs]
  std::vector<LayerTrace> traces;
};

// x: [B, input_shape...]. Stochastic layers sample from `rng` in layer order.
// Learnable-rate dropout uses plain scaling, fixed-rate dropout inverted
// scaling. Numeric faults are rethrown with the layer name prefixed.
ForwardResult forward(Tape& tape, Model& model, Var x, Rng& rng, bool stochastic = true);

// Per-example log-likelihood, [B].
Var log_likelihood(Var output, const ModelSpec& spec, std::span<const std::size_t> labels, const Tensor* targets);

}  // namespace mnf
