#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "spatialrl/diff/tensor.hpp"

namespace spatialrl::diff {

enum class Primitive {
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  Tanh,
  Softplus,
  Exp,
  Log,
  Square,
  LayerNorm,
  Softmax,
  Sum,
  Mean,
  SumLast,
  Slice,
  Concat,
  Reshape,
  Transpose,
  Clamp,
  Minimum,
};

inline constexpr Primitive kAllPrimitives[] = {
    Primitive::MatMul,   Primitive::Add,       Primitive::Sub,     Primitive::Mul,     Primitive::Div,
    Primitive::Scale,    Primitive::Tanh,      Primitive::Softplus, Primitive::Exp,    Primitive::Log,
    Primitive::Square,   Primitive::LayerNorm, Primitive::Softmax, Primitive::Sum,     Primitive::Mean,
    Primitive::SumLast,  Primitive::Slice,     Primitive::Concat,  Primitive::Reshape, Primitive::Transpose,
    Primitive::Clamp,    Primitive::Minimum,
};

std::string_view primitive_name(Primitive p);

// Per-primitive attributes; unused fields are ignored.
struct OpAttrs {
  std::ptrdiff_t axis = -1;   // Slice, Concat
  std::size_t begin = 0;      // Slice
  std::size_t end = 0;        // Slice
  double lo = 0.0;            // Clamp
  double hi = 0.0;            // Clamp
  double eps = 1e-5;          // LayerNorm
  double factor = 1.0;        // Scale
  Shape shape;                // Reshape
};

// Generic dispatch. Binary element-wise primitives broadcast when one operand
// has a single element or its shape is a trailing suffix of the other's.
// MatMul accepts [..., m, k] x [k, n] and batched [B, m, k] x [B, k, n].
Tensor forward_op(Primitive p, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor tanh(const Tensor& a);
// Overflow-safe: max(x, 0) + log1p(exp(-|x|)).
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
// Normalizes over the last axis, no affine parameters.
Tensor layer_norm(const Tensor& a, double eps = 1e-5);
Tensor softmax(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_last(const Tensor& a);
Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::ptrdiff_t axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor minimum(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// Diagonal Gaussian log-density summed over the last axis:
// sum_d [-0.5 ln(2 pi) - ln(sigma_d) - 0.5 ((x_d - mu_d) / sigma_d)^2].
Tensor gaussian_log_prob(const Tensor& x, const Tensor& mu, const Tensor& sigma);

// y = x W + b for x [..., in], W [in, out], b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace spatialrl::diff
