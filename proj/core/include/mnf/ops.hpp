#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mnf/autodiff.hpp"

// Differentiable primitives. Every function records one node on the tape of
// its operand(s). Binary elementwise ops broadcast with trailing-dimension
// alignment: shapes are right-aligned and each pair of extents must be equal
// or contain a 1 (a missing leading axis counts as 1).
namespace mnf::ops {

Shape broadcast_shape(const Shape& a, const Shape& b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var neg(Var x);
Var scale(Var x, double factor);
Var add_scalar(Var x, double c);
Var exp(Var x);
// Strictly positive argument required.
Var log(Var x);
// Non-negative argument; the pullback at exactly 0 is taken as 0.
Var sqrt(Var x);
Var square(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
// Elementwise clamp to [lo, hi]; zero gradient where the bound is active.
Var clamp(Var x, double lo, double hi);

Var sum(Var x);
Var sum(Var x, std::size_t axis);
Var mean(Var x);
Var mean(Var x, std::size_t axis);
Var broadcast_to(Var x, const Shape& shape);

// [m, k] x [k, n] -> [m, n]
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var x, Shape shape);

enum class Padding { valid, same };
// x: [B, H, W, C]; kernel: [KH, KW, C, F]; stride 1. Lowered to matmul via im2col.
Var conv2d(Var x, Var kernel, Padding padding);
// x: [B, H, W, C] -> [B, H/2, W/2, C]; odd trailing rows/cols are dropped.
Var max_pool2x2(Var x);

// Row-wise over the last axis of a [B, K] tensor.
Var log_softmax(Var x);
// out[b] = x[b, index[b]] for x: [B, K].
Var pick(Var x, std::span<const std::size_t> index);

}  // namespace mnf::ops

namespace mnf {

inline Var operator+(Var a, Var b) { return ops::add(a, b); }
inline Var operator-(Var a, Var b) { return ops::sub(a, b); }
inline Var operator*(Var a, Var b) { return ops::mul(a, b); }
inline Var operator/(Var a, Var b) { return ops::div(a, b); }
inline Var operator-(Var a) { return ops::neg(a); }
inline Var operator*(Var a, double c) { return ops::scale(a, c); }
inline Var operator*(double c, Var a) { return ops::scale(a, c); }
inline Var operator/(Var a, double c) { return ops::scale(a, 1.0 / c); }
inline Var operator+(Var a, double c) { return ops::add_scalar(a, c); }
inline Var operator+(double c, Var a) { return ops::add_scalar(a, c); }
inline Var operator-(Var a, double c) { return ops::add_scalar(a, -c); }
inline Var operator-(double c, Var a) { return ops::add_scalar(ops::neg(a), c); }

}  // namespace mnf

namespace mnf::kernels {

// Plain loops shared by the ops and the layers. Each output element is
// accumulated in ascending order of the contracted index, and zero entries
// of the left operand are skipped.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
// c += a^T b with a: [k, m], b: [k, n].
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t k,
               std::size_t m, std::size_t n);
// c += a b^T with a: [m, k], b: [n, k].
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);

struct ConvGeometry {
  std::size_t batch, height, width, channels;
  std::size_t kernel_h, kernel_w, filters;
  std::size_t out_h, out_w, pad_top, pad_left;

  std::size_t patch() const { return kernel_h * kernel_w * channels; }
  std::size_t rows() const { return batch * out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, ops::Padding padding);
// Patch matrix [rows, patch]; patch index order is (ky, kx, c).
std::vector<double> im2col(std::span<const double> x, const ConvGeometry& g);
void col2im_add(std::span<const double> cols, std::span<double> dx, const ConvGeometry& g);

}  // namespace mnf::kernels
