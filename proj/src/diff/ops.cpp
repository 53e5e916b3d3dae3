#include "spatialrl/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace spatialrl::diff {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

[[noreturn]] void shape_fail(Primitive p, std::string_view what, std::initializer_list<const Tensor*> ins) {
  std::string msg = std::string(primitive_name(p)) + ": " + std::string(what) + " (shapes";
  for (const Tensor* t : ins) msg += " " + shape_string(t->shape());
  msg += ")";
  throw ShapeError(msg);
}

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                   BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = Tape::active();
  if (tape != nullptr) {
    bool needs = false;
    for (const Tensor* in : inputs) needs = needs || in->requires_grad();
    if (needs) {
      node->requires_grad = true;
      for (const Tensor* in : inputs) node->parents.push_back(in->node());
      node->backward = std::move(fn);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<double> value, std::span<const Tensor> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = Tape::active();
  if (tape != nullptr) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(fn);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

// Gradient sink for a parent, or nullptr when it does not take gradients.
double* sink(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.ensure_grad().data();
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Output shape for broadcasting element-wise binaries.
Shape broadcast_shape(Primitive p, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1 || (b.size() <= a.size() && is_suffix(b.shape(), a.shape()))) return a.shape();
  if (a.size() == 1 || (a.size() <= b.size() && is_suffix(a.shape(), b.shape()))) return b.shape();
  shape_fail(p, "incompatible shapes for broadcasting", {&a, &b});
}

template <typename F, typename DA, typename DB>
Tensor binary(Primitive p, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  Shape out_shape = broadcast_shape(p, a, b);
  const std::size_t n = shape_size(out_shape);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  }
  return make_result(std::move(out_shape), std::move(out), {&a, &b}, [n, na, nb, dfa, dfb](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const auto& g = self.grad;
    if (double* ga = sink(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * dfa(av[i % na], bv[i % nb]);
    }
    if (double* gb = sink(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * dfb(av[i % na], bv[i % nb]);
    }
  });
}

// Element-wise unary with derivative expressed through input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {&a}, [dfdx](Node& self) {
    double* ga = sink(self, 0);
    if (ga == nullptr) return;
    const auto& x = self.parents[0]->value;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

std::size_t normalize_axis(Primitive p, std::ptrdiff_t axis, std::size_t rank, const Tensor& t) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) shape_fail(p, "axis out of range", {&t});
  return static_cast<std::size_t>(axis);
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::MatMul: return "matmul";
    case Primitive::Add: return "add";
    case Primitive::Sub: return "sub";
    case Primitive::Mul: return "mul";
    case Primitive::Div: return "div";
    case Primitive::Scale: return "scale";
    case Primitive::Tanh: return "tanh";
    case Primitive::Softplus: return "softplus";
    case Primitive::Exp: return "exp";
    case Primitive::Log: return "log";
    case Primitive::Square: return "square";
    case Primitive::LayerNorm: return "layer_norm";
    case Primitive::Softmax: return "softmax";
    case Primitive::Sum: return "sum";
    case Primitive::Mean: return "mean";
    case Primitive::SumLast: return "sum_last";
    case Primitive::Slice: return "slice";
    case Primitive::Concat: return "concat";
    case Primitive::Reshape: return "reshape";
    case Primitive::Transpose: return "transpose";
    case Primitive::Clamp: return "clamp";
    case Primitive::Minimum: return "minimum";
  }
  return "unknown";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_fail(Primitive::MatMul, "operands must be at least 2-D", {&a, &b});
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const bool batched_b = b.rank() == 3;
  if (b.rank() > 3 || (batched_b && (a.rank() != 3 || a.dim(0) != b.dim(0)))) {
    shape_fail(Primitive::MatMul, "batched operands must share the leading dimension", {&a, &b});
  }
  if (b.dim(-2) != k) shape_fail(Primitive::MatMul, "inner dimensions differ", {&a, &b});
  const std::size_t n = b.dim(-1);
  const std::size_t batch = a.size() / (m * k);
  Shape out_shape = a.shape();
  out_shape.back() = n;

  std::vector<double> out(batch * m * n, 0.0);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* as = av + s * m * k;
    const double* bs = batched_b ? bv + s * k * n : bv;
    double* os = out.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = os + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = as[i * k + kk];
        const double* brow = bs + kk * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
    }
  }

  return make_result(std::move(out_shape), std::move(out), {&a, &b}, [batch, m, k, n, batched_b](Node& self) {
    const double* av = self.parents[0]->value.data();
    const double* bv = self.parents[1]->value.data();
    const double* g = self.grad.data();
    double* ga = sink(self, 0);
    double* gb = sink(self, 1);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* as = av + s * m * k;
      const double* bs = batched_b ? bv + s * k * n : bv;
      const double* gs = g + s * m * n;
      if (ga != nullptr) {
        double* gas = ga + s * m * k;
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = gs + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = bs + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            gas[i * k + kk] += acc;
          }
        }
      }
      if (gb != nullptr) {
        double* gbs = batched_b ? gb + s * k * n : gb;
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = gs + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = as[i * k + kk];
            double* gbrow = gbs + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
          }
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      Primitive::Add, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      Primitive::Sub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      Primitive::Mul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      Primitive::Div, a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  // Ties route the gradient to the first operand.
  return binary(
      Primitive::Minimum, a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& a) {
  return unary(a, softplus_scalar, [](double x, double) { return sigmoid_scalar(x); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor layer_norm(const Tensor& a, double eps) {
  if (a.rank() == 0 || a.dim(-1) == 0) shape_fail(Primitive::LayerNorm, "empty last axis", {&a});
  const std::size_t c = a.dim(-1);
  const std::size_t rows = a.size() / c;
  const auto x = a.data();
  std::vector<double> y(a.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] = (xr[j] - mu) * is;
  }
  return make_result(a.shape(), std::move(y), {&a}, [rows, c, inv_std = std::move(inv_std)](Node& self) {
    double* ga = sink(self, 0);
    if (ga == nullptr) return;
    const auto& y = self.value;
    const auto& g = self.grad;
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * c;
      const double* gr = g.data() + r * c;
      double mean_g = 0.0;
      double mean_gy = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        mean_g += gr[j];
        mean_gy += gr[j] * yr[j];
      }
      mean_g *= inv_c;
      mean_gy *= inv_c;
      for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
    }
  });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0 || a.dim(-1) == 0) shape_fail(Primitive::Softmax, "empty last axis", {&a});
  const std::size_t c = a.dim(-1);
  const std::size_t rows = a.size() / c;
  const auto x = a.data();
  std::vector<double> y(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* yr = y.data() + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < c; ++j) yr[j] /= z;
  }
  return make_result(a.shape(), std::move(y), {&a}, [rows, c](Node& self) {
    double* ga = sink(self, 0);
    if (ga == nullptr) return;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * c;
      const double* gr = g.data() + r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {&a}, [](Node& self) {
    double* ga = sink(self, 0);
    if (ga == nullptr) return;
    const double g = self.grad[0];
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) shape_fail(Primitive::Mean, "empty tensor", {&a});
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() == 0) shape_fail(Primitive::SumLast, "rank-0 tensor", {&a});
  const std::size_t c = a.dim(-1);
  const std::size_t rows = c == 0 ? 0 : a.size() / c;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rows, 0.0);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r] += x[r * c + j];
  }
  return make_result(std::move(out_shape), std::move(out), {&a}, [rows, c](Node& self) {
    double* ga = sink(self, 0);
    if (ga == nullptr) return;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += self.grad[r];
    }
  });
}

Tensor slice(const Tensor& a, std::ptrdiff_t axis_in, std::size_t begin, std::size_t end) {
  const std::size_t axis = normalize_axis(Primitive::Slice, axis_in, a.rank(), a);
  const std::size_t len = a.shape()[axis];
  if (begin >= end || end > len) {
    shape_fail(Primitive::Slice, "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid", {&a});
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  const std::size_t width = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = width;
  std::vector<double> out(outer * width * inner);
  const auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data() + (o * len + begin) * inner, width * inner, out.data() + o * width * inner);
  }
  return make_result(std::move(out_shape), std::move(out), {&a}, [outer, len, begin, width, inner](Node& self) {
    double* ga = sink(self, 0);
    if (ga == nullptr) return;
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = self.grad.data() + o * width * inner;
      double* dst = ga + (o * len + begin) * inner;
      for (std::size_t i = 0; i < width * inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::ptrdiff_t axis_in) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts.front();
  const std::size_t axis = normalize_axis(Primitive::Concat, axis_in, first.rank(), first);
  std::vector<std::size_t> widths;
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) shape_fail(Primitive::Concat, "rank mismatch", {&first, &p});
    for (std::size_t i = 0; i < p.rank(); ++i) {
      if (i != axis && p.shape()[i] != first.shape()[i]) shape_fail(Primitive::Concat, "non-axis extent mismatch", {&first, &p});
    }
    widths.push_back(p.shape()[axis]);
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first.shape()[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.rank(); ++i) inner *= first.shape()[i];
  const std::size_t total = out_shape[axis];
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto x = parts[pi].data();
    const std::size_t w = widths[pi];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.data() + o * w * inner, w * inner, out.data() + (o * total + offset) * inner);
    }
    offset += w;
  }
  return make_result_n(std::move(out_shape), std::move(out), parts, [outer, total, inner, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      const std::size_t w = widths[pi];
      if (double* gp = sink(self, pi)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + (o * total + offset) * inner;
          double* dst = gp + o * w * inner;
          for (std::size_t i = 0; i < w * inner; ++i) dst[i] += src[i];
        }
      }
      offset += w;
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {&a}, [](Node& self) {
    double* ga = sink(self, 0);
    if (ga == nullptr) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) shape_fail(Primitive::Transpose, "needs rank >= 2", {&a});
  const std::size_t r = a.dim(-2);
  const std::size_t c = a.dim(-1);
  const std::size_t batch = a.size() / (r * c);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[s * r * c + j * r + i] = x[s * r * c + i * c + j];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {&a}, [batch, r, c](Node& self) {
    double* ga = sink(self, 0);
    if (ga == nullptr) return;
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[s * r * c + i * c + j] += self.grad[s * r * c + j * r + i];
      }
    }
  });
}

Tensor gaussian_log_prob(const Tensor& x, const Tensor& mu, const Tensor& sigma) {
  static const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor z = div(sub(x, mu), sigma);
  Tensor per_dim = sub(scale(square(z), -0.5), log(sigma));
  Tensor total = sum_last(per_dim);
  const double offset = -kHalfLog2Pi * static_cast<double>(x.dim(-1));
  return add(total, Tensor::scalar(offset));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) { return add(matmul(x, weight), bias); }

Tensor forward_op(Primitive p, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(primitive_name(p)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
    }
  };
  switch (p) {
    case Primitive::MatMul: need(2); return matmul(in[0], in[1]);
    case Primitive::Add: need(2); return add(in[0], in[1]);
    case Primitive::Sub: need(2); return sub(in[0], in[1]);
    case Primitive::Mul: need(2); return mul(in[0], in[1]);
    case Primitive::Div: need(2); return div(in[0], in[1]);
    case Primitive::Minimum: need(2); return minimum(in[0], in[1]);
    case Primitive::Scale: need(1); return scale(in[0], attrs.factor);
    case Primitive::Tanh: need(1); return tanh(in[0]);
    case Primitive::Softplus: need(1); return softplus(in[0]);
    case Primitive::Exp: need(1); return exp(in[0]);
    case Primitive::Log: need(1); return log(in[0]);
    case Primitive::Square: need(1); return square(in[0]);
    case Primitive::LayerNorm: need(1); return layer_norm(in[0], attrs.eps);
    case Primitive::Softmax: need(1); return softmax(in[0]);
    case Primitive::Sum: need(1); return sum(in[0]);
    case Primitive::Mean: need(1); return mean(in[0]);
    case Primitive::SumLast: need(1); return sum_last(in[0]);
    case Primitive::Slice: need(1); return slice(in[0], attrs.axis, attrs.begin, attrs.end);
    case Primitive::Concat: return concat(in, attrs.axis);
    case Primitive::Reshape: need(1); return reshape(in[0], attrs.shape);
    case Primitive::Transpose: need(1); return transpose(in[0]);
    case Primitive::Clamp: need(1); return clamp(in[0], attrs.lo, attrs.hi);
  }
  throw ShapeError("forward_op: unknown primitive");
}

}  // namespace spatialrl::diff
