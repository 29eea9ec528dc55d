#include "mnf/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <utility>

#include "mnf/errors.hpp"

namespace mnf {

namespace {

constexpr std::array<std::pair<LayerKind, const char*>, 10> kKindNames{{
    {LayerKind::mnf_dense, "mnf_dense"},
    {LayerKind::mnf_conv, "mnf_conv"},
    {LayerKind::ffg, "ffg"},
    {LayerKind::fflu, "fflu"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::l2_dense, "l2_dense"},
    {LayerKind::l2_conv, "l2_conv"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::relu, "relu"},
    {LayerKind::flatten, "flatten"},
}};

bool is_dense(LayerKind k) {
  return k == LayerKind::mnf_dense || k == LayerKind::ffg || k == LayerKind::fflu || k == LayerKind::l2_dense;
}
bool is_conv(LayerKind k) { return k == LayerKind::mnf_conv || k == LayerKind::l2_conv; }

// Walks the spec; problems are appended to `errors` and the walk continues
// with a best-effort shape.
std::vector<Shape> walk_shapes(const ModelSpec& spec, std::vector<std::string>& errors) {
  std::vector<Shape> shapes;
  if (spec.input_shape.empty()) errors.push_back("model.input_shape: must be nonempty");
  for (std::size_t e : spec.input_shape) {
    if (e == 0) errors.push_back("model.input_shape: extents must be positive");
  }
  if (spec.layers.empty()) errors.push_back("model.layers: model must have at least one layer");
  if (!(spec.sigma_cap > 0.0)) errors.push_back("model.sigma_cap: must be positive");
  if (!(spec.noise_variance > 0.0 && std::isfinite(spec.noise_variance))) {
    errors.push_back("model.noise_variance: must be positive and finite");
  }

  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "model.layers[" + std::to_string(i) + "] (" + to_string(l.kind) + ")";
    auto fail = [&](const std::string& msg) { errors.push_back(where + ": " + msg); };
    if (is_dense(l.kind)) {
      if (cur.size() != 1 || cur[0] != l.in) {
        fail("input width " + std::to_string(l.in) + " does not match incoming shape " + to_string(cur));
      }
      if (l.in == 0 || l.out == 0) fail("in and out must be positive");
      cur = Shape{l.out};
    } else if (is_conv(l.kind)) {
      if (l.kernel == 0 || l.filters == 0 || l.channels == 0) fail("kernel, channels and filters must be positive");
      if (cur.size() != 3 || cur[2] != l.channels) {
        fail("expects [H, W, " + std::to_string(l.channels) + "] input, got " + to_string(cur));
        cur = Shape{l.kernel, l.kernel, l.channels};
      }
      if (l.padding == ops::Padding::valid) {
        if (cur[0] < l.kernel || cur[1] < l.kernel) fail("input smaller than kernel");
        cur = Shape{cur[0] >= l.kernel ? cur[0] - l.kernel + 1 : 1, cur[1] >= l.kernel ? cur[1] - l.kernel + 1 : 1,
                    l.filters};
      } else {
        cur = Shape{cur[0], cur[1], l.filters};
      }
    } else if (l.kind == LayerKind::maxpool) {
      if (cur.size() != 3 || cur[0] < 2 || cur[1] < 2) {
        fail("expects [H, W, C] input with H, W >= 2, got " + to_string(cur));
      } else {
        cur = Shape{cur[0] / 2, cur[1] / 2, cur[2]};
      }
    } else if (l.kind == LayerKind::flatten) {
      cur = Shape{num_elements(cur)};
    } else if (l.kind == LayerKind::dropout) {
      if (!(l.keep_prob > 0.0 && l.keep_prob <= 1.0)) fail("keep_prob must lie in (0, 1]");
    }
    if (l.kind == LayerKind::mnf_dense || l.kind == LayerKind::mnf_conv) {
      if ((l.flow_q > 0 && l.hidden_q == 0) || (l.flow_r > 0 && l.hidden_r == 0)) {
        fail("flow hidden widths must be positive");
      }
    }
    shapes.push_back(cur);
  }
  if (!shapes.empty()) {
    const Shape& last = shapes.back();
    if (last.size() != 1) {
      errors.push_back("model.layers: final output must be a vector, got " + to_string(last));
    } else if (spec.likelihood == Likelihood::categorical && last[0] < 2) {
      errors.push_back("model.layers: categorical likelihood needs at least 2 outputs");
    } else if (spec.likelihood == Likelihood::gaussian && last[0] != 1) {
      errors.push_back("model.layers: gaussian likelihood needs exactly 1 output");
    }
  }
  return shapes;
}

SigmaCap cap_of(const ModelSpec& spec) {
  return std::isfinite(spec.sigma_cap) ? SigmaCap(spec.sigma_cap) : SigmaCap::none();
}

}  // namespace

std::string to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& text) {
  for (const auto& [k, name] : kKindNames) {
    if (text == name) return k;
  }
  throw ConfigError({"unknown layer kind '" + text + "'"});
}

std::string to_string(Likelihood kind) { return kind == Likelihood::categorical ? "categorical" : "gaussian"; }

Likelihood parse_likelihood(const std::string& text) {
  if (text == "categorical") return Likelihood::categorical;
  if (text == "gaussian") return Likelihood::gaussian;
  throw ConfigError({"unknown likelihood '" + text + "'"});
}

void validate(const ModelSpec& spec) {
  std::vector<std::string> errors;
  walk_shapes(spec, errors);
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

std::vector<Shape> layer_shapes(const ModelSpec& spec) {
  std::vector<std::string> errors;
  auto shapes = walk_shapes(spec, errors);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return shapes;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers) {
    std::visit(
        [&out](auto& body) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(body)>, NoLayerParams>) {
            for (Parameter* p : body.parameters()) out.push_back(p);
          }
        },
        layer.body);
  }
  return out;
}

std::size_t Model::n_outputs() const { return layer_shapes(spec).back()[0]; }

Model init_model(const ModelSpec& spec, Rng& rng) {
  validate(spec);
  Model model{spec, {}};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string name = "layers." + std::to_string(i);
    ModelLayer ml{l.kind, name, NoLayerParams{}};
    switch (l.kind) {
      case LayerKind::mnf_dense:
        ml.body = make_mnf_dense(name, MnfDenseInit{l.in, l.out, l.flow_q, l.flow_r, l.hidden_q, l.hidden_r}, rng);
        break;
      case LayerKind::mnf_conv:
        ml.body = make_mnf_conv(name,
                                MnfConvInit{l.kernel, l.kernel, l.channels, l.filters, l.flow_q, l.flow_r, l.hidden_q,
                                            l.hidden_r, l.padding},
                                rng);
        break;
      case LayerKind::ffg:
      case LayerKind::fflu:
        ml.body = make_gaussian_dense(name, l.in, l.out, rng);
        break;
      case LayerKind::l2_dense:
        ml.body = make_dense(name, l.in, l.out, rng);
        break;
      case LayerKind::l2_conv:
        ml.body = make_conv(name, l.kernel, l.kernel, l.channels, l.filters, l.padding, rng);
        break;
      case LayerKind::dropout:
        ml.body = make_dropout(name, l.keep_prob, l.learnable);
        break;
      default:
        break;
    }
    model.layers.push_back(std::move(ml));
  }
  return model;
}

ForwardResult forward(Tape& tape, Model& model, Var x, Rng& rng, bool stochastic) {
  const Shape& in = x.shape();
  const Shape& expect = model.spec.input_shape;
  if (in.size() != expect.size() + 1 || !std::equal(expect.begin(), expect.end(), in.begin() + 1)) {
    throw ContractViolation("model input " + to_string(in) + " does not match [B] + " + to_string(expect));
  }
  const SigmaCap cap = cap_of(model.spec);
  const std::size_t batch = in[0];
  ForwardResult out{x, {}};
  Var h = x;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    ModelLayer& ml = model.layers[i];
    try {
      switch (ml.kind) {
        case LayerKind::mnf_dense: {
          auto f = mnf_dense_forward(tape, h, std::get<MnfDenseLayer>(ml.body), rng, cap);
          h = f.activations;
          out.traces.push_back(LayerTrace{i, std::move(f.noise), std::nullopt});
          break;
        }
        case LayerKind::mnf_conv: {
          auto f = mnf_conv_forward(tape, h, std::get<MnfConvLayer>(ml.body), rng, cap);
          h = f.activations;
          out.traces.push_back(LayerTrace{i, std::move(f.noise), std::nullopt});
          break;
        }
        case LayerKind::ffg:
          h = ffg_dense_forward(tape, h, std::get<GaussianDenseLayer>(ml.body), rng, cap);
          break;
        case LayerKind::fflu:
          h = fflu_dense_forward(tape, h, std::get<GaussianDenseLayer>(ml.body), rng);
          break;
        case LayerKind::l2_dense:
          h = dense_forward(tape, h, std::get<DenseLayer>(ml.body));
          break;
        case LayerKind::l2_conv:
          h = conv_forward(tape, h, std::get<ConvLayer>(ml.body));
          break;
        case LayerKind::dropout: {
          auto& layer = std::get<DropoutLayer>(ml.body);
          auto scaling = layer.learnable ? DropoutScaling::plain : DropoutScaling::inverted;
          auto f = dropout_forward(tape, h, layer, rng, stochastic, scaling);
          h = f.activations;
          if (stochastic) out.traces.push_back(LayerTrace{i, std::nullopt, std::move(f)});
          break;
        }
        case LayerKind::maxpool:
          h = ops::max_pool2x2(h);
          break;
        case LayerKind::relu:
          h = ops::relu(h);
          break;
        case LayerKind::flatten:
          h = ops::reshape(h, Shape{batch, h.size() / batch});
          break;
      }
    } catch (const NumericFault& e) {
      throw NumericFault(ml.name + "/" + e.op(), e.what());
    }
  }
  out.output = h;
  return out;
}

Var log_likelihood(Var output, const ModelSpec& spec, std::span<const std::size_t> labels, const Tensor* targets) {
  const std::size_t b = output.shape().at(0);
  if (spec.likelihood == Likelihood::categorical) {
    if (labels.size() != b) {
      throw ContractViolation("log_likelihood: " + std::to_string(labels.size()) + " labels for batch of " +
                              std::to_string(b));
    }
    return ops::pick(ops::log_softmax(output), labels);
  }
  if (targets == nullptr || targets->size() != b) throw ContractViolation("log_likelihood: targets must be [B, 1]");
  Var y = output.tape().constant(targets->reshaped(Shape{b, 1}));
  const double var = spec.noise_variance;
  Var ll = -0.5 * ops::square(y - output) / var - 0.5 * std::log(2.0 * std::numbers::pi * var);
  return ops::reshape(ll, Shape{b});
}

}  // namespace mnf
