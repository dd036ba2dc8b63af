#pragma once

// Differentiable operations on npfkgc::Tensor. Every operation computes its
// value eagerly and, when recording, registers a closure that accumulates
// input gradients from the output gradient.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "npfkgc/tensor.hpp"

namespace npfkgc {

enum class Unary { neg, exp, log, tanh, sigmoid, relu, leaky_relu, square, sqrt, softplus, abs };
enum class Binary { add, sub, mul, div };

inline constexpr double kDefaultLeakySlope = 0.01;

namespace detail {

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_value(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

inline Tensor unary(Unary op, const Tensor& a, double slope = kDefaultLeakySlope) {
  const auto& x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (op) {
      case Unary::neg: y[i] = -v; break;
      case Unary::exp: y[i] = std::exp(v); break;
      case Unary::log:
        if (v <= 0) throw DomainError("log of non-positive value " + std::to_string(v));
        y[i] = std::log(v);
        break;
      case Unary::tanh: y[i] = std::tanh(v); break;
      case Unary::sigmoid: y[i] = detail::sigmoid_value(v); break;
      case Unary::relu: y[i] = v > 0 ? v : 0.0; break;
      case Unary::leaky_relu: y[i] = v > 0 ? v : slope * v; break;
      case Unary::square: y[i] = v * v; break;
      case Unary::sqrt:
        if (v < 0) throw DomainError("sqrt of negative value " + std::to_string(v));
        y[i] = std::sqrt(v);
        break;
      case Unary::softplus: y[i] = detail::softplus_value(v); break;
      case Unary::abs: y[i] = std::abs(v); break;
    }
  }
  const bool tracked = detail::tracks({&a});
  Tensor out = detail::make_output(a.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), on = out.node(), op, slope] {
      double* ga = detail::grad_of(an);
      if (!ga) return;
      const double* go = detail::out_grad(on);
      const auto& x = an->data;
      const auto& y = on->data;
      for (std::size_t i = 0; i < x.size(); ++i) {
        double d = 0;
        switch (op) {
          case Unary::neg: d = -1; break;
          case Unary::exp: d = y[i]; break;
          case Unary::log: d = 1.0 / x[i]; break;
          case Unary::tanh: d = 1 - y[i] * y[i]; break;
          case Unary::sigmoid: d = y[i] * (1 - y[i]); break;
          case Unary::relu: d = x[i] > 0 ? 1 : 0; break;
          case Unary::leaky_relu: d = x[i] > 0 ? 1 : slope; break;
          case Unary::square: d = 2 * x[i]; break;
          case Unary::sqrt: d = y[i] > 0 ? 0.5 / y[i] : std::numeric_limits<double>::infinity(); break;
          case Unary::softplus: d = detail::sigmoid_value(x[i]); break;
          case Unary::abs: d = x[i] > 0 ? 1 : (x[i] < 0 ? -1 : 0); break;
        }
        ga[i] += d * go[i];
      }
    });
  }
  return out;
}

inline Tensor neg(const Tensor& a) { return unary(Unary::neg, a); }
inline Tensor exp(const Tensor& a) { return unary(Unary::exp, a); }
inline Tensor log(const Tensor& a) { return unary(Unary::log, a); }
inline Tensor tanh(const Tensor& a) { return unary(Unary::tanh, a); }
inline Tensor sigmoid(const Tensor& a) { return unary(Unary::sigmoid, a); }
inline Tensor relu(const Tensor& a) { return unary(Unary::relu, a); }
inline Tensor leaky_relu(const Tensor& a, double slope = kDefaultLeakySlope) {
  return unary(Unary::leaky_relu, a, slope);
}
inline Tensor square(const Tensor& a) { return unary(Unary::square, a); }
inline Tensor sqrt(const Tensor& a) { return unary(Unary::sqrt, a); }
inline Tensor softplus(const Tensor& a) { return unary(Unary::softplus, a); }
inline Tensor abs(const Tensor& a) { return unary(Unary::abs, a); }

// Equal shapes, or one operand holding a single element (scalar broadcast).
inline Tensor binary(Binary op, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = !same && a.size() == 1;
  const bool b_scalar = !same && b.size() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw DimensionError("elementwise shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  const auto& x = a.values();
  const auto& z = b.values();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[a_scalar ? 0 : i];
    const double v = z[b_scalar ? 0 : i];
    switch (op) {
      case Binary::add: y[i] = u + v; break;
      case Binary::sub: y[i] = u - v; break;
      case Binary::mul: y[i] = u * v; break;
      case Binary::div:
        if (v == 0) throw DomainError("division by zero");
        y[i] = u / v;
        break;
    }
  }
  const bool tracked = detail::tracks({&a, &b});
  Tensor out = detail::make_output(shape, std::move(y), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), bn = b.node(), on = out.node(), op, a_scalar, b_scalar] {
      double* ga = detail::grad_of(an);
      double* gb = detail::grad_of(bn);
      const double* go = detail::out_grad(on);
      const auto& x = an->data;
      const auto& z = bn->data;
      const std::size_t n = on->data.size();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = a_scalar ? 0 : i;
        const std::size_t ib = b_scalar ? 0 : i;
        const double g = go[i];
        switch (op) {
          case Binary::add:
            if (ga) ga[ia] += g;
            if (gb) gb[ib] += g;
            break;
          case Binary::sub:
            if (ga) ga[ia] += g;
            if (gb) gb[ib] -= g;
            break;
          case Binary::mul:
            if (ga) ga[ia] += g * z[ib];
            if (gb) gb[ib] += g * x[ia];
            break;
          case Binary::div:
            if (ga) ga[ia] += g / z[ib];
            if (gb) gb[ib] -= g * x[ia] / (z[ib] * z[ib]);
            break;
        }
      }
    });
  }
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return binary(Binary::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return binary(Binary::sub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return binary(Binary::mul, a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return binary(Binary::div, a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// y = alpha * a + beta
inline Tensor affine(const Tensor& a, double alpha, double beta = 0.0) {
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = alpha * a[i] + beta;
  const bool tracked = detail::tracks({&a});
  Tensor out = detail::make_output(a.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), on = out.node(), alpha] {
      double* ga = detail::grad_of(an);
      if (!ga) return;
      const double* go = detail::out_grad(on);
      for (std::size_t i = 0; i < an->data.size(); ++i) ga[i] += alpha * go[i];
    });
  }
  return out;
}

inline Tensor operator*(const Tensor& a, double s) { return affine(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return affine(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return affine(a, 1.0, s); }
inline Tensor operator+(double s, const Tensor& a) { return affine(a, 1.0, s); }
inline Tensor operator-(const Tensor& a, double s) { return affine(a, 1.0, -s); }
inline Tensor operator-(double s, const Tensor& a) { return affine(a, -1.0, s); }

// Supports [m,k]x[k,n] -> [m,n], [m,k]x[k] -> [m], [k]x[k,n] -> [n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool a_vec = a.rank() == 1;
  const bool b_vec = b.rank() == 1;
  if (a.rank() > 2 || b.rank() > 2 || (a_vec && b_vec)) {
    throw DimensionError("matmul needs a matrix operand: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a_vec ? 1 : a.shape()[0];
  const std::size_t k = a_vec ? a.shape()[0] : a.shape()[1];
  const std::size_t k2 = b.shape()[0];
  const std::size_t n = b_vec ? 1 : b.shape()[1];
  if (k != k2) {
    throw DimensionError("matmul inner dimension mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const auto& A = a.values();
  const auto& B = b.values();
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0) continue;
      const double* brow = &B[p * n];
      double* crow = &C[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  Shape shape = a_vec ? Shape{n} : (b_vec ? Shape{m} : Shape{m, n});
  const bool tracked = detail::tracks({&a, &b});
  Tensor out = detail::make_output(std::move(shape), std::move(C), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      double* ga = detail::grad_of(an);
      double* gb = detail::grad_of(bn);
      const double* go = detail::out_grad(on);
      const auto& A = an->data;
      const auto& B = bn->data;
      if (ga) {  // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * B[p * n + j];
            ga[i * k + p] += s;
          }
      }
      if (gb) {  // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
          }
      }
    });
  }
  return out;
}

// Affine map with weight [out, in]: x[in] -> [out], or rows X[b, in] -> [b, out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw DimensionError("linear weight must be a matrix");
  const std::size_t out_dim = weight.shape()[0];
  const std::size_t in_dim = weight.shape()[1];
  const bool batched = x.rank() == 2;
  const std::size_t batch = batched ? x.shape()[0] : 1;
  const std::size_t x_in = batched ? x.shape()[1] : x.size();
  if (x.rank() > 2 || x_in != in_dim) {
    throw DimensionError("linear input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  if (bias.size() != out_dim) {
    throw DimensionError("linear bias " + shape_string(bias.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  const auto& X = x.values();
  const auto& W = weight.values();
  const auto& B = bias.values();
  std::vector<double> Y(batch * out_dim);
  for (std::size_t r = 0; r < batch; ++r) {
    const double* xr = &X[r * in_dim];
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wo = &W[o * in_dim];
      double s = B[o];
      for (std::size_t i = 0; i < in_dim; ++i) s += wo[i] * xr[i];
      Y[r * out_dim + o] = s;
    }
  }
  Shape shape = batched ? Shape{batch, out_dim} : Shape{out_dim};
  const bool tracked = detail::tracks({&x, &weight, &bias});
  Tensor out = detail::make_output(std::move(shape), std::move(Y), tracked);
  if (tracked) {
    active_tape()->record(
        [xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node(), batch, in_dim, out_dim] {
          double* gx = detail::grad_of(xn);
          double* gw = detail::grad_of(wn);
          double* gb = detail::grad_of(bn);
          const double* go = detail::out_grad(on);
          const auto& X = xn->data;
          const auto& W = wn->data;
          for (std::size_t r = 0; r < batch; ++r) {
            const double* xr = &X[r * in_dim];
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double g = go[r * out_dim + o];
              if (g == 0) continue;
              if (gb) gb[o] += g;
              const double* wo = &W[o * in_dim];
              if (gw) {
                double* gwo = &gw[o * in_dim];
                for (std::size_t i = 0; i < in_dim; ++i) gwo[i] += g * xr[i];
              }
              if (gx) {
                double* gxr = &gx[r * in_dim];
                for (std::size_t i = 0; i < in_dim; ++i) gxr[i] += g * wo[i];
              }
            }
          }
        });
  }
  return out;
}

inline Tensor linear(const Tensor& x, const Tensor& weight) {
  return linear(x, weight, Tensor::zeros({weight.shape().at(0)}));
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_string(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = a[i * n + j];
  const bool tracked = detail::tracks({&a});
  Tensor out = detail::make_output({n, m}, std::move(y), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), on = out.node(), m, n] {
      double* ga = detail::grad_of(an);
      if (!ga) return;
      const double* go = detail::out_grad(on);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
    });
  }
  return out;
}

enum class Reduce { sum, mean, max };

namespace detail {

// Full reduction to a single element.
inline Tensor reduce_all(Reduce op, const Tensor& a) {
  if (a.size() == 0) throw DimensionError("reduction over empty tensor");
  const auto& x = a.values();
  double v = 0;
  std::size_t arg = 0;
  if (op == Reduce::max) {
    v = x[0];
    for (std::size_t i = 1; i < x.size(); ++i)
      if (x[i] > v) v = x[i], arg = i;
  } else {
    for (double e : x) v += e;
    if (op == Reduce::mean) v /= static_cast<double>(x.size());
  }
  const bool tracked = tracks({&a});
  Tensor out = make_output({1}, {v}, tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), on = out.node(), op, arg] {
      double* ga = grad_of(an);
      if (!ga) return;
      const double g = out_grad(on)[0];
      const std::size_t n = an->data.size();
      switch (op) {
        case Reduce::sum:
          for (std::size_t i = 0; i < n; ++i) ga[i] += g;
          break;
        case Reduce::mean:
          for (std::size_t i = 0; i < n; ++i) ga[i] += g / static_cast<double>(n);
          break;
        case Reduce::max: ga[arg] += g; break;
      }
    });
  }
  return out;
}

// Reduction of a matrix along axis 0 (over rows) or 1 (over columns).
inline Tensor reduce_axis(Reduce op, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError("reduction axis " + std::to_string(axis) + " out of range for " +
                         shape_string(a.shape()));
  }
  if (a.rank() == 1) return reduce_all(op, a);
  if (a.rank() != 2) throw DimensionError("axis reduction supports rank <= 2");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const std::size_t outer = axis == 0 ? n : m;
  const std::size_t inner = axis == 0 ? m : n;
  if (inner == 0) throw DimensionError("reduction over empty axis");
  auto index = [=](std::size_t o, std::size_t i) { return axis == 0 ? i * n + o : o * n + i; };
  std::vector<double> y(outer);
  std::vector<std::size_t> arg(outer, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    if (op == Reduce::max) {
      double best = a[index(o, 0)];
      for (std::size_t i = 1; i < inner; ++i)
        if (a[index(o, i)] > best) best = a[index(o, i)], arg[o] = i;
      y[o] = best;
    } else {
      double s = 0;
      for (std::size_t i = 0; i < inner; ++i) s += a[index(o, i)];
      y[o] = op == Reduce::mean ? s / static_cast<double>(inner) : s;
    }
  }
  const bool tracked = tracks({&a});
  Tensor out = make_output({outer}, std::move(y), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), on = out.node(), op, arg, outer, inner, index] {
      double* ga = grad_of(an);
      if (!ga) return;
      const double* go = out_grad(on);
      for (std::size_t o = 0; o < outer; ++o) {
        switch (op) {
          case Reduce::sum:
            for (std::size_t i = 0; i < inner; ++i) ga[index(o, i)] += go[o];
            break;
          case Reduce::mean:
            for (std::size_t i = 0; i < inner; ++i) ga[index(o, i)] += go[o] / static_cast<double>(inner);
            break;
          case Reduce::max: ga[index(o, arg[o])] += go[o]; break;
        }
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor reduce(Reduce op, const Tensor& a) { return detail::reduce_all(op, a); }
inline Tensor reduce(Reduce op, const Tensor& a, std::size_t axis) {
  return detail::reduce_axis(op, a, axis);
}
inline Tensor sum(const Tensor& a) { return reduce(Reduce::sum, a); }
inline Tensor mean(const Tensor& a) { return reduce(Reduce::mean, a); }
inline Tensor max(const Tensor& a) { return reduce(Reduce::max, a); }
inline Tensor sum(const Tensor& a, std::size_t axis) { return reduce(Reduce::sum, a, axis); }
inline Tensor mean(const Tensor& a, std::size_t axis) { return reduce(Reduce::mean, a, axis); }
inline Tensor max(const Tensor& a, std::size_t axis) { return reduce(Reduce::max, a, axis); }

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  return sum(a * b);
}

// Concatenates 1-D tensors (axis 0) or matrices along axis 0 or 1.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 0) {
  if (parts.empty()) throw DimensionError("concat of empty list");
  const std::size_t rank = parts[0].rank();
  if (rank == 0 || rank > 2 || axis >= rank) {
    throw DimensionError("concat axis " + std::to_string(axis) + " invalid for " +
                         shape_string(parts[0].shape()));
  }
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    if (ok && rank == 2) ok = p.shape()[1 - axis] == parts[0].shape()[1 - axis];
    if (!ok) {
      throw DimensionError("concat shape mismatch: " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
  }
  // Concatenation along the leading axis is a plain append; along columns it
  // interleaves per row.
  std::vector<double> y;
  Shape shape;
  std::vector<std::size_t> widths;
  std::size_t rows = rank == 2 ? parts[0].shape()[0] : 1;
  if (rank == 1 || axis == 0) {
    std::size_t lead = 0;
    for (const auto& p : parts) {
      y.insert(y.end(), p.values().begin(), p.values().end());
      lead += p.shape()[0];
    }
    shape = rank == 1 ? Shape{lead} : Shape{lead, parts[0].shape()[1]};
  } else {
    std::size_t total = 0;
    for (const auto& p : parts) widths.push_back(p.shape()[1]), total += p.shape()[1];
    y.resize(rows * total);
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        std::copy_n(&parts[k].values()[r * widths[k]], widths[k], &y[r * total + off]);
        off += widths[k];
      }
    }
    shape = {rows, total};
  }
  const bool tracked = detail::tracks(parts);
  Tensor out = detail::make_output(std::move(shape), std::move(y), tracked);
  if (tracked) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    active_tape()->record([nodes, on = out.node(), widths, rows, columnwise = !widths.empty()] {
      const double* go = detail::out_grad(on);
      if (!columnwise) {
        std::size_t off = 0;
        for (const auto& n : nodes) {
          const std::size_t len = n->data.size();
          if (double* g = detail::grad_of(n))
            for (std::size_t i = 0; i < len; ++i) g[i] += go[off + i];
          off += len;
        }
        return;
      }
      std::size_t total = 0;
      for (auto w : widths) total += w;
      std::size_t off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (double* g = detail::grad_of(nodes[k]))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += go[r * total + off + c];
        off += widths[k];
      }
    });
  }
  return out;
}

// Contiguous sub-range [begin, end) of a 1-D tensor.
inline Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 1 || begin > end || end > a.size()) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(a.shape()));
  }
  std::vector<double> y(a.values().begin() + static_cast<std::ptrdiff_t>(begin),
                        a.values().begin() + static_cast<std::ptrdiff_t>(end));
  const bool tracked = detail::tracks({&a});
  Tensor out = detail::make_output({end - begin}, std::move(y), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), on = out.node(), begin] {
      double* ga = detail::grad_of(an);
      if (!ga) return;
      const double* go = detail::out_grad(on);
      for (std::size_t i = 0; i < on->data.size(); ++i) ga[begin + i] += go[i];
    });
  }
  return out;
}

// Row i of a matrix as a 1-D tensor.
inline Tensor row(const Tensor& a, std::size_t i) {
  if (a.rank() != 2 || i >= a.shape()[0]) {
    throw DimensionError("row " + std::to_string(i) + " out of range for " + shape_string(a.shape()));
  }
  const std::size_t n = a.shape()[1];
  std::vector<double> y(a.values().begin() + static_cast<std::ptrdiff_t>(i * n),
                        a.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  const bool tracked = detail::tracks({&a});
  Tensor out = detail::make_output({n}, std::move(y), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), on = out.node(), i, n] {
      double* ga = detail::grad_of(an);
      if (!ga) return;
      const double* go = detail::out_grad(on);
      for (std::size_t c = 0; c < n; ++c) ga[i * n + c] += go[c];
    });
  }
  return out;
}

// Rows of `table` selected by `indices` (repeats allowed) -> [indices.size(), cols].
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
  if (table.rank() != 2) throw DimensionError("gather_rows needs a matrix");
  const std::size_t n = table.shape()[1];
  const std::size_t rows = table.shape()[0];
  std::vector<double> y(indices.size() * n);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows) {
      throw DimensionError("gather index " + std::to_string(indices[k]) + " out of range for " +
                           shape_string(table.shape()));
    }
    std::copy_n(&table.values()[indices[k] * n], n, &y[k * n]);
  }
  const bool tracked = detail::tracks({&table});
  Tensor out = detail::make_output({indices.size(), n}, std::move(y), tracked);
  if (tracked) {
    active_tape()->record([tn = table.node(), on = out.node(), indices, n] {
      double* gt = detail::grad_of(tn);
      if (!gt) return;
      const double* go = detail::out_grad(on);
      for (std::size_t k = 0; k < indices.size(); ++k)
        for (std::size_t c = 0; c < n; ++c) gt[indices[k] * n + c] += go[k * n + c];
    });
  }
  return out;
}

// Stacks equal-length 1-D tensors as matrix rows.
inline Tensor stack(const std::vector<Tensor>& vectors) {
  if (vectors.empty()) throw DimensionError("stack of empty list");
  for (const auto& v : vectors)
    if (v.rank() != 1 || v.size() != vectors[0].size())
      throw DimensionError("stack needs equal-length vectors");
  Tensor flat = concat(vectors, 0);
  const Shape shape{vectors.size(), vectors[0].size()};
  // Reshape shares no storage; wrap through a trivial op for gradient routing.
  std::vector<double> y = flat.values();
  const bool tracked = detail::tracks({&flat});
  Tensor out = detail::make_output(shape, std::move(y), tracked);
  if (tracked) {
    active_tape()->record([fn = flat.node(), on = out.node()] {
      double* gf = detail::grad_of(fn);
      const double* go = detail::out_grad(on);
      for (std::size_t i = 0; i < on->data.size(); ++i) gf[i] += go[i];
    });
  }
  return out;
}

// Numerically stable softmax of a 1-D tensor.
inline Tensor softmax(const Tensor& scores) {
  if (scores.rank() != 1 || scores.size() == 0) {
    throw DimensionError("softmax needs a non-empty vector, got " + shape_string(scores.shape()));
  }
  const auto& x = scores.values();
  const double hi = *std::max_element(x.begin(), x.end());
  std::vector<double> y(x.size());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - hi));
  for (double& v : y) v /= z;
  const bool tracked = detail::tracks({&scores});
  Tensor out = detail::make_output(scores.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape()->record([sn = scores.node(), on = out.node()] {
      double* gs = detail::grad_of(sn);
      if (!gs) return;
      const double* go = detail::out_grad(on);
      const auto& p = on->data;
      double inner = 0;
      for (std::size_t i = 0; i < p.size(); ++i) inner += go[i] * p[i];
      for (std::size_t i = 0; i < p.size(); ++i) gs[i] += p[i] * (go[i] - inner);
    });
  }
  return out;
}

// Softmax applied independently within each segment of a flat score vector.
inline Tensor segment_softmax(const Tensor& scores, const std::vector<std::size_t>& segment,
                              std::size_t num_segments) {
  if (scores.rank() != 1 || segment.size() != scores.size()) {
    throw DimensionError("segment_softmax: scores/segment length mismatch");
  }
  const auto& x = scores.values();
  std::vector<double> hi(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < x.size(); ++i) hi[segment[i]] = std::max(hi[segment[i]], x[i]);
  std::vector<double> y(x.size()), z(num_segments, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) z[segment[i]] += (y[i] = std::exp(x[i] - hi[segment[i]]));
  for (std::size_t i = 0; i < x.size(); ++i) y[i] /= z[segment[i]];
  const bool tracked = detail::tracks({&scores});
  Tensor out = detail::make_output(scores.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape()->record([sn = scores.node(), on = out.node(), segment, num_segments] {
      double* gs = detail::grad_of(sn);
      if (!gs) return;
      const double* go = detail::out_grad(on);
      const auto& p = on->data;
      std::vector<double> inner(num_segments, 0.0);
      for (std::size_t i = 0; i < p.size(); ++i) inner[segment[i]] += go[i] * p[i];
      for (std::size_t i = 0; i < p.size(); ++i) gs[i] += p[i] * (go[i] - inner[segment[i]]);
    });
  }
  return out;
}

// out[s] = sum over rows i with segment[i] == s of weights[i] * values[i].
inline Tensor segment_weighted_sum(const Tensor& values, const Tensor& weights,
                                   const std::vector<std::size_t>& segment, std::size_t num_segments) {
  if (values.rank() != 2 || weights.rank() != 1 || weights.size() != values.shape()[0] ||
      segment.size() != weights.size()) {
    throw DimensionError("segment_weighted_sum: shape mismatch " + shape_string(values.shape()) +
                         " / " + shape_string(weights.shape()));
  }
  const std::size_t n = values.shape()[1];
  std::vector<double> y(num_segments * n, 0.0);
  for (std::size_t i = 0; i < segment.size(); ++i)
    for (std::size_t c = 0; c < n; ++c) y[segment[i] * n + c] += weights[i] * values[i * n + c];
  const bool tracked = detail::tracks({&values, &weights});
  Tensor out = detail::make_output({num_segments, n}, std::move(y), tracked);
  if (tracked) {
    active_tape()->record([vn = values.node(), wn = weights.node(), on = out.node(), segment, n] {
      double* gv = detail::grad_of(vn);
      double* gw = detail::grad_of(wn);
      const double* go = detail::out_grad(on);
      const auto& V = vn->data;
      const auto& W = wn->data;
      for (std::size_t i = 0; i < segment.size(); ++i) {
        const double* g = &go[segment[i] * n];
        double acc = 0;
        for (std::size_t c = 0; c < n; ++c) {
          if (gv) gv[i * n + c] += W[i] * g[c];
          acc += V[i * n + c] * g[c];
        }
        if (gw) gw[i] += acc;
      }
    });
  }
  return out;
}

// Adds the vector `v` ([d]) to every row of `mat` ([n, d]).
inline Tensor add_rows(const Tensor& mat, const Tensor& v) {
  if (mat.rank() != 2 || v.rank() != 1 || mat.shape()[1] != v.size()) {
    throw DimensionError("add_rows: shape mismatch " + shape_string(mat.shape()) + " / " + shape_string(v.shape()));
  }
  const std::size_t rows = mat.shape()[0];
  const std::size_t n = v.size();
  std::vector<double> y = mat.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] += v[c];
  const bool tracked = detail::tracks({&mat, &v});
  Tensor out = detail::make_output(mat.shape(), std::move(y), tracked);
  if (tracked) {
    active_tape()->record([mn = mat.node(), vn = v.node(), on = out.node(), rows, n] {
      double* gm = detail::grad_of(mn);
      double* gv = detail::grad_of(vn);
      const double* go = detail::out_grad(on);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          if (gm) gm[r * n + c] += go[r * n + c];
          if (gv) gv[c] += go[r * n + c];
        }
    });
  }
  return out;
}

// Same values under a new shape of equal size.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  const bool tracked = detail::tracks({&a});
  Tensor out = detail::make_output(std::move(shape), a.values(), tracked);
  if (tracked) {
    active_tape()->record([an = a.node(), on = out.node()] {
      double* ga = detail::grad_of(an);
      if (!ga) return;
      const double* go = detail::out_grad(on);
      for (std::size_t i = 0; i < on->data.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

}  // namespace npfkgc
