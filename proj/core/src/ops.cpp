#include "mnf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "mnf/errors.hpp"

namespace mnf::kernels {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t k,
               std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.data() + p * m;
    const double* bp = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = bt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, ops::Padding padding) {
  if (input.size() != 4 || kernel.size() != 4 || input[3] != kernel[2]) {
    throw ContractViolation("conv2d: input " + to_string(input) + " incompatible with kernel " + to_string(kernel));
  }
  ConvGeometry g{};
  g.batch = input[0];
  g.height = input[1];
  g.width = input[2];
  g.channels = input[3];
  g.kernel_h = kernel[0];
  g.kernel_w = kernel[1];
  g.filters = kernel[3];
  if (padding == ops::Padding::same) {
    g.out_h = g.height;
    g.out_w = g.width;
    g.pad_top = (g.kernel_h - 1) / 2;
    g.pad_left = (g.kernel_w - 1) / 2;
  } else {
    if (g.kernel_h > g.height || g.kernel_w > g.width) {
      throw ContractViolation("conv2d: kernel " + to_string(kernel) + " larger than input " + to_string(input));
    }
    g.out_h = g.height - g.kernel_h + 1;
    g.out_w = g.width - g.kernel_w + 1;
  }
  return g;
}

std::vector<double> im2col(std::span<const double> x, const ConvGeometry& g) {
  std::vector<double> cols(g.rows() * g.patch(), 0.0);
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox, ++row) {
        double* dst = cols.data() + row * g.patch();
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
            double* cell = dst + (ky * g.kernel_w + kx) * g.channels;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) ||
                ix >= static_cast<std::ptrdiff_t>(g.width)) {
              continue;
            }
            const double* src = x.data() + ((b * g.height + static_cast<std::size_t>(iy)) * g.width +
                                             static_cast<std::size_t>(ix)) * g.channels;
            std::copy(src, src + g.channels, cell);
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(std::span<const double> cols, std::span<double> dx, const ConvGeometry& g) {
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox, ++row) {
        const double* src = cols.data() + row * g.patch();
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            const double* cell = src + (ky * g.kernel_w + kx) * g.channels;
            double* dst = dx.data() + ((b * g.height + static_cast<std::size_t>(iy)) * g.width +
                                       static_cast<std::size_t>(ix)) * g.channels;
            for (std::size_t c = 0; c < g.channels; ++c) dst[c] += cell[c];
          }
        }
      }
    }
  }
}

}  // namespace mnf::kernels

namespace mnf::ops {

namespace {

Tape& tape_of(Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) throw ContractViolation("operands must share one tape");
  return a.tape();
}

// Per-output-axis strides into a right-aligned operand; 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;) {
    if (in[i] != 1) strides[offset + i] = stride;
    stride *= in[i];
  }
  return strides;
}

bool is_suffix(const Shape& in, const Shape& out) {
  return in.size() <= out.size() && std::equal(in.rbegin(), in.rend(), out.rbegin());
}

// Calls f(out_index, a_index, b_index) for every output element.
struct BroadcastPlan {
  Shape out;
  std::size_t na = 0, nb = 0;
  enum class Kind { same, a_suffix, b_suffix, general } kind = Kind::same;
  std::vector<std::size_t> sa, sb;

  BroadcastPlan(const Shape& a, const Shape& b) : out(broadcast_shape(a, b)) {
    na = num_elements(a);
    nb = num_elements(b);
    if (a == b) {
      kind = Kind::same;
    } else if (a == out && is_suffix(b, out)) {
      kind = Kind::b_suffix;
    } else if (b == out && is_suffix(a, out)) {
      kind = Kind::a_suffix;
    } else {
      kind = Kind::general;
      sa = broadcast_strides(a, out);
      sb = broadcast_strides(b, out);
    }
  }

  template <typename F>
  void each(F&& f) const {
    const std::size_t n = num_elements(out);
    switch (kind) {
      case Kind::same:
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
      case Kind::b_suffix:
        for (std::size_t i = 0; i < n; ++i) f(i, i, i % nb);
        return;
      case Kind::a_suffix:
        for (std::size_t i = 0; i < n; ++i) f(i, i % na, i);
        return;
      case Kind::general:
        break;
    }
    const std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f(i, ia, ib);
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        ia += sa[ax];
        ib += sb[ax];
        if (idx[ax] < out[ax]) break;
        ia -= sa[ax] * out[ax];
        ib -= sb[ax] * out[ax];
        idx[ax] = 0;
      }
    }
  }
};

template <typename Fwd, typename Da, typename Db>
Var binary(std::string_view op, Var a, Var b, Fwd fwd, Da da, Db db) {
  Tape& tape = tape_of(a, b);
  auto plan = std::make_shared<BroadcastPlan>(a.shape(), b.shape());
  Tensor out(plan->out);
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  auto& o = out.storage();
  plan->each([&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = fwd(av[ia], bv[ib]); });
  return tape.record(op, std::move(out), {a, b}, [a, b, plan, da, db](const Tensor&, const Tensor& g, GradSink& sink) {
    const auto& av = a.value().storage();
    const auto& bv = b.value().storage();
    const auto& gv = g.storage();
    if (sink.wants(a)) {
      auto& ga = sink.at(a).storage();
      plan->each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += da(gv[i], av[ia], bv[ib]); });
    }
    if (sink.wants(b)) {
      auto& gb = sink.at(b).storage();
      plan->each([&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += db(gv[i], av[ia], bv[ib]); });
    }
  });
}

// `deriv(x, y)` is dy/dx given input x and output y.
template <typename Fwd, typename Deriv>
Var unary(std::string_view op, Var x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  const auto& xv = x.value().storage();
  auto& o = out.storage();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(xv[i]);
  return x.tape().record(op, std::move(out), {x}, [x, deriv](const Tensor& y, const Tensor& g, GradSink& sink) {
    auto& gx = sink.at(x).storage();
    const auto& xv = x.value().storage();
    const auto& yv = y.storage();
    const auto& gv = g.storage();
    for (std::size_t i = 0; i < gv.size(); ++i) gx[i] += gv[i] * deriv(xv[i], yv[i]);
  });
}

void require_rank(Var x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                            to_string(x.shape()));
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ContractViolation("shape mismatch: " + to_string(a) + " vs " + to_string(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Var neg(Var x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(Var x, double factor) {
  return unary("scale", x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw NumericFault("log", "non-positive argument " + std::to_string(v));
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (!(v >= 0.0)) throw NumericFault("sqrt", "negative argument " + std::to_string(v));
  }
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var clamp(Var x, double lo, double hi) {
  if (lo > hi) throw ContractViolation("clamp: lo > hi");
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record("sum", Tensor::scalar(total), {x}, [x](const Tensor&, const Tensor& g, GradSink& sink) {
    const double gv = g[0];
    for (auto& v : sink.at(x).data()) v += gv;
  });
}

Var sum(Var x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ContractViolation("sum: axis out of range for shape " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  Tensor out(out_shape);
  const auto& xv = x.value().storage();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = xv.data() + (o * n + k) * inner;
      double* dst = out.storage().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return x.tape().record("sum_axis", std::move(out), {x}, [x, outer, inner, n](const Tensor&, const Tensor& g, GradSink& sink) {
    auto& gx = sink.at(x).storage();
    const auto& gv = g.storage();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += gv[o * inner + i];
      }
    }
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var mean(Var x, std::size_t axis) {
  const double n = static_cast<double>(x.shape().at(axis));
  return scale(sum(x, axis), 1.0 / n);
}

Var broadcast_to(Var x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape) != shape) {
    throw ContractViolation("broadcast_to: cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  Var zero = x.tape().constant(Tensor(shape));
  return add(zero, x);
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ContractViolation("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  kernels::matmul(a.value().data(), b.value().data(), out.data(), m, k, n);
  return tape.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](const Tensor&, const Tensor& g, GradSink& sink) {
    if (sink.wants(a)) {
      std::vector<double> tmp(m * k, 0.0);
      kernels::matmul_nt(g.data(), b.value().data(), tmp, m, n, k);
      auto& ga = sink.at(a).storage();
      for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
    }
    if (sink.wants(b)) {
      std::vector<double> tmp(k * n, 0.0);
      kernels::matmul_tn(a.value().data(), g.data(), tmp, m, k, n);
      auto& gb = sink.at(b).storage();
      for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
    }
  });
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.value().at(i, j);
  }
  return a.tape().record("transpose", std::move(out), {a}, [a, r, c](const Tensor&, const Tensor& g, GradSink& sink) {
    auto& ga = sink.at(a);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g.at(j, i);
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [x](const Tensor&, const Tensor& g, GradSink& sink) {
    auto& gx = sink.at(x).storage();
    const auto& gv = g.storage();
    for (std::size_t i = 0; i < gv.size(); ++i) gx[i] += gv[i];
  });
}

Var conv2d(Var x, Var kernel, Padding padding) {
  Tape& tape = tape_of(x, kernel);
  const auto geo = kernels::conv_geometry(x.shape(), kernel.shape(), padding);
  auto cols = std::make_shared<std::vector<double>>(kernels::im2col(x.value().data(), geo));
  Tensor out(Shape{geo.batch, geo.out_h, geo.out_w, geo.filters});
  kernels::matmul(*cols, kernel.value().data(), out.data(), geo.rows(), geo.patch(), geo.filters);
  return tape.record("conv2d", std::move(out), {x, kernel}, [x, kernel, geo, cols](const Tensor&, const Tensor& g, GradSink& sink) {
    if (sink.wants(kernel)) {
      std::vector<double> tmp(geo.patch() * geo.filters, 0.0);
      kernels::matmul_tn(*cols, g.data(), tmp, geo.rows(), geo.patch(), geo.filters);
      auto& gk = sink.at(kernel).storage();
      for (std::size_t i = 0; i < tmp.size(); ++i) gk[i] += tmp[i];
    }
    if (sink.wants(x)) {
      std::vector<double> dcols(geo.rows() * geo.patch(), 0.0);
      kernels::matmul_nt(g.data(), kernel.value().data(), dcols, geo.rows(), geo.filters, geo.patch());
      kernels::col2im_add(dcols, sink.at(x).data(), geo);
    }
  });
}

Var max_pool2x2(Var x) {
  require_rank(x, 4, "max_pool2x2");
  const auto& s = x.shape();
  const std::size_t B = s[0], H = s[1], W = s[2], C = s[3];
  const std::size_t Ho = H / 2, Wo = W / 2;
  if (Ho == 0 || Wo == 0) throw ContractViolation("max_pool2x2: input too small " + to_string(s));
  Tensor out(Shape{B, Ho, Wo, C});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& xv = x.value().storage();
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        for (std::size_t c = 0; c < C; ++c, ++o) {
          std::size_t best = ((b * H + 2 * y) * W + 2 * xx) * C + c;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((b * H + 2 * y + dy) * W + 2 * xx + dx) * C + c;
              if (xv[idx] > xv[best]) best = idx;
            }
          }
          out[o] = xv[best];
          (*argmax)[o] = best;
        }
      }
    }
  }
  return x.tape().record("max_pool2x2", std::move(out), {x}, [x, argmax](const Tensor&, const Tensor& g, GradSink& sink) {
    auto& gx = sink.at(x).storage();
    for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

Var log_softmax(Var x) {
  require_rank(x, 2, "log_softmax");
  const std::size_t B = x.shape()[0], K = x.shape()[1];
  Tensor out(x.shape());
  const auto& xv = x.value().storage();
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = xv.data() + b * K;
    const double mx = *std::max_element(row, row + K);
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) acc += std::exp(row[k] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t k = 0; k < K; ++k) out[b * K + k] = row[k] - lse;
  }
  return x.tape().record("log_softmax", std::move(out), {x}, [x, B, K](const Tensor& y, const Tensor& g, GradSink& sink) {
    auto& gx = sink.at(x).storage();
    for (std::size_t b = 0; b < B; ++b) {
      double gsum = 0.0;
      for (std::size_t k = 0; k < K; ++k) gsum += g[b * K + k];
      for (std::size_t k = 0; k < K; ++k) gx[b * K + k] += g[b * K + k] - std::exp(y[b * K + k]) * gsum;
    }
  });
}

Var pick(Var x, std::span<const std::size_t> index) {
  require_rank(x, 2, "pick");
  const std::size_t B = x.shape()[0], K = x.shape()[1];
  if (index.size() != B) {
    throw ContractViolation("pick: " + std::to_string(index.size()) + " indices for " + std::to_string(B) + " rows");
  }
  Tensor out(Shape{B});
  for (std::size_t b = 0; b < B; ++b) {
    if (index[b] >= K) throw ContractViolation("pick: index " + std::to_string(index[b]) + " out of range");
    out[b] = x.value()[b * K + index[b]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape().record("pick", std::move(out), {x}, [x, idx = std::move(idx), K](const Tensor&, const Tensor& g, GradSink& sink) {
    auto& gx = sink.at(x).storage();
    for (std::size_t b = 0; b < idx.size(); ++b) gx[b * K + idx[b]] += g[b];
  });
}

}  // namespace mnf::ops
