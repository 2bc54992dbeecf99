#pragma once

// Differentiable primitives. No implicit broadcasting anywhere: operands must
// agree exactly, or be expanded with repeat_to() first.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gtn/tensor.hpp"

namespace gtn {

namespace detail {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

inline bool wants(const std::shared_ptr<Node>& p) { return p->requires_grad; }

inline Shape strides_of(const Shape& s) {
  Shape st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

inline void require_rank(const char* op, const Tensor& x, std::size_t r) {
  if (x.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     to_string(x.shape()));
}

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise

enum class BinaryKind { add, sub, mul };

inline Tensor ew_binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  const char* name = kind == BinaryKind::add ? "add" : kind == BinaryKind::sub ? "sub" : "mul";
  detail::require_same_shape(name, a, b);
  const auto n = a.numel();
  std::vector<double> out(n);
  auto x = a.data(), y = b.data();
  switch (kind) {
    case BinaryKind::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
      break;
    case BinaryKind::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
      break;
    case BinaryKind::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
      break;
  }
  return detail::make_result(name, a.shape(), std::move(out), {a, b}, [kind](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const auto& g = self.grad;
    if (detail::wants(pa)) {
      auto& ga = pa->grad;
      if (kind == BinaryKind::mul)
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->data[i];
      else
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (detail::wants(pb)) {
      auto& gb = pb->grad;
      if (kind == BinaryKind::mul)
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->data[i];
      else if (kind == BinaryKind::sub)
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      else
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) { return ew_binary(BinaryKind::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return ew_binary(BinaryKind::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return ew_binary(BinaryKind::mul, a, b); }

/// x * c for a constant c.
inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= c;
  return detail::make_result("scale", x.shape(), std::move(out), {x}, [c](detail::Node& self) {
    auto& gx = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += c * self.grad[i];
  });
}

enum class Activation { relu, sigmoid };

inline Tensor activation(Activation kind, const Tensor& x) {
  const auto n = x.numel();
  auto in = x.data();
  std::vector<double> out(n);
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] < 0.0 ? 0.0 : in[i];  // NaN passes through
    if (auto* rec = detail::active_recorder()) {
      std::uint64_t word = 0;
      for (std::size_t i = 0; i < n; ++i) {
        word = (word << 1) | (in[i] > 0.0 ? 1u : 0u);
        if ((i & 63) == 63) rec->mix(word), word = 0;
      }
      rec->mix(word);
    }
    return detail::make_result("relu", x.shape(), std::move(out), {x}, [](detail::Node& self) {
      auto& p = self.parents[0];
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (p->data[i] > 0.0) p->grad[i] += self.grad[i];
    });
  }
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = in[i];
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  return detail::make_result("sigmoid", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& gx = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.data[i];
      gx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

inline Tensor relu(const Tensor& x) { return activation(Activation::relu, x); }
inline Tensor sigmoid(const Tensor& x) { return activation(Activation::sigmoid, x); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    auto& gx = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

namespace detail {

// Flat source offset for every element of an output of shape `out_shape`
// whose axis d advances the source by src_stride[d].
inline std::vector<std::size_t> gather_index(const Shape& out_shape, const Shape& src_stride) {
  const auto r = out_shape.size();
  std::vector<std::size_t> index(numel_of(out_shape));
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < index.size(); ++o) {
    index[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        src += src_stride[d];
        break;
      }
      src -= src_stride[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  return index;
}

inline Tensor gather_op(const char* name, const Tensor& x, Shape out_shape, std::vector<std::size_t> index) {
  const auto& in = x.node()->data;
  std::vector<double> out(index.size());
  for (std::size_t o = 0; o < index.size(); ++o) out[o] = in[index[o]];
  return make_result(name, std::move(out_shape), std::move(out), {x}, [index = std::move(index)](Node& self) {
    auto& gx = self.parents[0]->grad;
    for (std::size_t o = 0; o < index.size(); ++o) gx[index[o]] += self.grad[o];
  });
}

}  // namespace detail

/// Output dim i is input dim perm[i].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const auto r = x.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch for " + to_string(x.shape()));
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(r), src_stride(r);
  const Shape in_strides = detail::strides_of(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(perm[i]);
    src_stride[i] = in_strides[perm[i]];
  }
  auto index = detail::gather_index(out_shape, src_stride);
  return detail::gather_op("permute", x, std::move(out_shape), std::move(index));
}

/// Explicit broadcast: every dim of x must equal the target dim or be 1.
inline Tensor repeat_to(const Tensor& x, const Shape& target) {
  if (x.rank() != target.size())
    throw ShapeError("repeat_to: rank mismatch " + to_string(x.shape()) + " -> " + to_string(target));
  for (std::size_t i = 0; i < target.size(); ++i)
    if (x.dim(i) != target[i] && x.dim(i) != 1)
      throw ShapeError("repeat_to: cannot expand " + to_string(x.shape()) + " to " + to_string(target));
  Shape src_stride = detail::strides_of(x.shape());
  for (std::size_t i = 0; i < target.size(); ++i)
    if (x.dim(i) == 1) src_stride[i] = 0;
  return detail::gather_op("repeat_to", x, target, detail::gather_index(target, src_stride));
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + to_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != axis && p.dim(d) != ref[d])
        throw ShapeError("concat: non-axis dims differ: " + to_string(ref) + " vs " + to_string(p.shape()));
    out_shape[axis] += p.dim(axis);
  }
  const auto outer = detail::split_at(ref, axis).outer;
  const auto inner = detail::split_at(ref, axis).inner;
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t row = p.dim(axis) * inner;
    const auto& src = p.node()->data;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * row, row, out.begin() + o * out_row + off);
    off += row;
  }
  return detail::make_result(
      "concat", out_shape, std::move(out), parts, [offsets, outer, inner, out_row, axis](detail::Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          auto& p = self.parents[k];
          if (!detail::wants(p)) continue;
          const std::size_t row = p->shape[axis] * inner;
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < row; ++j) p->grad[o * row + j] += self.grad[o * out_row + offsets[k] + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions (dimensions are kept with extent 1)

enum class ReduceKind { sum, mean, max };

inline Tensor reduce(ReduceKind kind, const Tensor& x, std::vector<std::size_t> axes) {
  const auto r = x.rank();
  std::vector<bool> reduced(r, false);
  for (auto a : axes) {
    if (a >= r || reduced[a]) throw ShapeError("reduce: invalid or repeated axis for " + to_string(x.shape()));
    reduced[a] = true;
  }
  Shape out_shape = x.shape();
  std::size_t count = 1;
  for (std::size_t d = 0; d < r; ++d)
    if (reduced[d]) count *= out_shape[d], out_shape[d] = 1;
  // Output offset for every input element.
  const Shape out_strides = detail::strides_of(out_shape);
  std::vector<std::size_t> target(x.numel());
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t o = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      target[i] = o;
      for (std::size_t d = r; d-- > 0;) {
        const std::size_t step = reduced[d] ? 0 : out_strides[d];
        if (++idx[d] < x.dim(d)) {
          o += step;
          break;
        }
        o -= step * (x.dim(d) - 1);
        idx[d] = 0;
      }
    }
  }
  const auto& in = x.node()->data;
  const std::size_t m = numel_of(out_shape);
  std::vector<double> out(m, 0.0);
  if (kind == ReduceKind::max) {
    std::vector<std::size_t> arg(m, std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto o = target[i];
      // Strict comparison keeps the lowest flat index among ties.
      if (arg[o] == std::numeric_limits<std::size_t>::max() || in[i] > out[o]) out[o] = in[i], arg[o] = i;
    }
    if (auto* rec = detail::active_recorder())
      for (auto a : arg) rec->mix(a);
    return detail::make_result("reduce_max", out_shape, std::move(out), {x}, [arg](detail::Node& self) {
      auto& gx = self.parents[0]->grad;
      for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += self.grad[o];
    });
  }
  for (std::size_t i = 0; i < in.size(); ++i) out[target[i]] += in[i];
  const double factor = kind == ReduceKind::mean ? 1.0 / static_cast<double>(count) : 1.0;
  if (kind == ReduceKind::mean)
    for (double& v : out) v *= factor;
  return detail::make_result(kind == ReduceKind::mean ? "reduce_mean" : "reduce_sum", out_shape, std::move(out),
                             {x}, [target = std::move(target), factor](detail::Node& self) {
                               auto& gx = self.parents[0]->grad;
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[target[i]];
                             });
}

inline std::vector<std::size_t> all_axes(const Tensor& x) {
  std::vector<std::size_t> a(x.rank());
  std::iota(a.begin(), a.end(), std::size_t{0});
  return a;
}

/// Sum of all elements as a shape-[1] tensor.
inline Tensor sum_all(const Tensor& x) { return reshape(reduce(ReduceKind::sum, x, all_axes(x)), {1}); }
inline Tensor mean_all(const Tensor& x) { return reshape(reduce(ReduceKind::mean, x, all_axes(x)), {1}); }

// ---------------------------------------------------------------------------
// Normalization

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + to_string(x.shape()));
  const auto sp = detail::split_at(x.shape(), axis);
  const auto& in = x.node()->data;
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      const std::size_t base = o * sp.extent * sp.inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.extent; ++k) mx = std::max(mx, in[base + k * sp.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) {
        const double e = std::exp(in[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < sp.extent; ++k) out[base + k * sp.inner] /= s;
    }
  return detail::make_result("softmax", x.shape(), std::move(out), {x}, [sp](detail::Node& self) {
    auto& gx = self.parents[0]->grad;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.inner; ++j) {
        const std::size_t base = o * sp.extent * sp.inner + j;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.extent; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t i = base + k * sp.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
  });
}

/// Normalizes over the last dimension, then applies gamma * x_hat + beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " + to_string(gamma.shape()) +
                     " and " + to_string(beta.shape()));
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  const auto& in = x.node()->data;
  auto gm = gamma.data(), bt = beta.data();
  std::vector<double> out(in.size());
  std::vector<double> xhat(in.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gm[j] * h + bt[j];
    }
  }
  return detail::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](detail::Node& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& g = self.grad;
        if (detail::wants(pg) || detail::wants(pb))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) {
              if (detail::wants(pg)) pg->grad[j] += g[r * d + j] * xhat[r * d + j];
              if (detail::wants(pb)) pb->grad[j] += g[r * d + j];
            }
        if (!detail::wants(px)) return;
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = g[r * d + j] * pg->data[j];
            m1 += dh[j];
            m2 += dh[j] * xhat[r * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            px->grad[r * d + j] += inv_std[r] * (dh[j] - m1 - xhat[r * d + j] * m2);
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " * " + to_string(b.shape()));
  std::vector<double> out(m * n);
  detail::MapR(out.data(), m, n).noalias() =
      detail::CMapR(a.data().data(), m, k) * detail::CMapR(b.data().data(), k, n);
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    detail::CMapR g(self.grad.data(), m, n);
    if (detail::wants(pa))
      detail::MapR(pa->grad.data(), m, k).noalias() += g * detail::CMapR(pb->data.data(), k, n).transpose();
    if (detail::wants(pb))
      detail::MapR(pb->grad.data(), k, n).noalias() += detail::CMapR(pa->data.data(), m, k).transpose() * g;
  });
}

/// Batched product of [B x m x k] and [B x k x n].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  detail::require_rank("bmm", a, 3);
  detail::require_rank("bmm", b, 3);
  const auto B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != B || b.dim(1) != k)
    throw ShapeError("bmm: incompatible " + to_string(a.shape()) + " * " + to_string(b.shape()));
  std::vector<double> out(B * m * n);
  for (std::size_t i = 0; i < B; ++i)
    detail::MapR(out.data() + i * m * n, m, n).noalias() =
        detail::CMapR(a.data().data() + i * m * k, m, k) * detail::CMapR(b.data().data() + i * k * n, k, n);
  return detail::make_result("bmm", {B, m, n}, std::move(out), {a, b}, [B, m, k, n](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (std::size_t i = 0; i < B; ++i) {
      detail::CMapR g(self.grad.data() + i * m * n, m, n);
      if (detail::wants(pa))
        detail::MapR(pa->grad.data() + i * m * k, m, k).noalias() +=
            g * detail::CMapR(pb->data.data() + i * k * n, k, n).transpose();
      if (detail::wants(pb))
        detail::MapR(pb->grad.data() + i * k * n, k, n).noalias() +=
            detail::CMapR(pa->data.data() + i * m * k, m, k).transpose() * g;
    }
  });
}

/// y = x W (+ b) applied over the last dimension of x. `bias` may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {}) {
  detail::require_rank("linear(weight)", weight, 2);
  const auto in = weight.dim(0), out_f = weight.dim(1);
  if (x.rank() == 0 || x.shape().back() != in)
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  if (bias.defined() && bias.shape() != Shape{out_f})
    throw ShapeError("linear: bias must be [" + std::to_string(out_f) + "], got " + to_string(bias.shape()));
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<double> out(rows * out_f);
  detail::MapR y(out.data(), rows, out_f);
  y.noalias() = detail::CMapR(x.data().data(), rows, in) * detail::CMapR(weight.data().data(), in, out_f);
  if (bias.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_f);
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result("linear", out_shape, std::move(out), inputs, [rows, in, out_f](detail::Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    detail::CMapR g(self.grad.data(), rows, out_f);
    if (detail::wants(px))
      detail::MapR(px->grad.data(), rows, in).noalias() += g * detail::CMapR(pw->data.data(), in, out_f).transpose();
    if (detail::wants(pw))
      detail::MapR(pw->grad.data(), in, out_f).noalias() += detail::CMapR(px->data.data(), rows, in).transpose() * g;
    if (self.parents.size() > 2 && detail::wants(self.parents[2]))
      Eigen::Map<Eigen::RowVectorXd>(self.parents[2]->grad.data(), out_f) += g.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeom {
  std::size_t C, H, W, k, stride, pad, Ho, Wo;
};

inline void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t P = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * P;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.Wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) {
            std::fill_n(dst, g.Wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.H + static_cast<std::size_t>(iy)) * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.W)) ? 0.0 : src[ix];
          }
        }
      }
}

inline void col2im_add(const double* cols, const ConvGeom& g, double* dx) {
  const std::size_t P = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * P;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) continue;
          double* dst = dx + (c * g.H + static_cast<std::size_t>(iy)) * g.W;
          const double* src = row + oy * g.Wo;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.W)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// Zero-padded cross-correlation. x: N x C x H x W, w: O x C x k x k, bias: O (may be undefined).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
  detail::require_rank("conv2d(input)", x, 4);
  detail::require_rank("conv2d(weight)", w, 4);
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C)
    throw ShapeError("conv2d: weight " + to_string(w.shape()) + " expects " + std::to_string(w.dim(1)) +
                     " input channels, input is " + to_string(x.shape()));
  if (w.dim(3) != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (bias.defined() && bias.shape() != Shape{O}) throw ShapeError("conv2d: bias must be [" + std::to_string(O) + "]");
  if (H + 2 * pad < k || W + 2 * pad < k)
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()) + ", k=" +
                     std::to_string(k) + ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(pad));
  const detail::ConvGeom g{C, H, W, k, stride, pad, (H + 2 * pad - k) / stride + 1, (W + 2 * pad - k) / stride + 1};
  const std::size_t P = g.Ho * g.Wo, Q = C * k * k;
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  std::vector<double> out(N * O * P);
  std::vector<double> cols(pointwise ? 0 : Q * P);
  detail::CMapR wm(w.data().data(), O, Q);
  for (std::size_t n = 0; n < N; ++n) {
    const double* xn = x.data().data() + n * C * H * W;
    const double* cp = xn;
    if (!pointwise) {
      detail::im2col(xn, g, cols.data());
      cp = cols.data();
    }
    detail::MapR y(out.data() + n * O * P, O, P);
    y.noalias() = wm * detail::CMapR(cp, Q, P);
    if (bias.defined())
      y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), O);
  }
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(
      "conv2d", {N, O, g.Ho, g.Wo}, std::move(out), inputs, [g, N, O, P, Q, pointwise](detail::Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        const bool has_bias = self.parents.size() > 2 && detail::wants(self.parents[2]);
        std::vector<double> cols(pointwise ? 0 : Q * P), dcols(pointwise ? 0 : Q * P);
        detail::CMapR wm(pw->data.data(), O, Q);
        for (std::size_t n = 0; n < N; ++n) {
          detail::CMapR gy(self.grad.data() + n * O * P, O, P);
          const double* xn = px->data.data() + n * g.C * g.H * g.W;
          if (detail::wants(pw)) {
            const double* cp = xn;
            if (!pointwise) {
              detail::im2col(xn, g, cols.data());
              cp = cols.data();
            }
            detail::MapR(pw->grad.data(), O, Q).noalias() += gy * detail::CMapR(cp, Q, P).transpose();
          }
          if (has_bias) Eigen::Map<Eigen::VectorXd>(self.parents[2]->grad.data(), O) += gy.rowwise().sum();
          if (detail::wants(px)) {
            double* dxn = px->grad.data() + n * g.C * g.H * g.W;
            if (pointwise) {
              detail::MapR(dxn, Q, P).noalias() += wm.transpose() * gy;
            } else {
              detail::MapR(dcols.data(), Q, P).noalias() = wm.transpose() * gy;
              detail::col2im_add(dcols.data(), g, dxn);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling

enum class ResizeMode { bilinear_up, avg_down };

namespace detail {

struct Interp1D {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

// Half-pixel (align_corners = false) source coordinates, clamped at the border.
inline Interp1D interp_table(std::size_t in, std::size_t out) {
  Interp1D t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    t.i0[o] = i0;
    t.i1[o] = std::min(i0 + 1, in - 1);
    t.w1[o] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace detail

inline Tensor resize(const Tensor& x, std::size_t Ht, std::size_t Wt, ResizeMode mode) {
  detail::require_rank("resize", x, 4);
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto planes = N * C;
  std::vector<double> out(planes * Ht * Wt, 0.0);
  const auto& in = x.node()->data;
  if (mode == ResizeMode::avg_down) {
    if (Ht == 0 || Wt == 0 || H % Ht || W % Wt || H / Ht != W / Wt)
      throw ShapeError("resize(avg_down): " + std::to_string(H) + "x" + std::to_string(W) +
                       " is not evenly divisible into " + std::to_string(Ht) + "x" + std::to_string(Wt));
    const std::size_t f = H / Ht;
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          out[(p * Ht + y / f) * Wt + xx / f] += in[(p * H + y) * W + xx] * inv;
    return detail::make_result("avg_down", {N, C, Ht, Wt}, std::move(out), {x},
                               [planes, H, W, Ht, Wt, f, inv](detail::Node& self) {
                                 auto& gx = self.parents[0]->grad;
                                 for (std::size_t p = 0; p < planes; ++p)
                                   for (std::size_t y = 0; y < H; ++y)
                                     for (std::size_t xx = 0; xx < W; ++xx)
                                       gx[(p * H + y) * W + xx] += self.grad[(p * Ht + y / f) * Wt + xx / f] * inv;
                               });
  }
  if (Ht < H || Wt < W)
    throw ShapeError("resize(bilinear_up): target " + std::to_string(Ht) + "x" + std::to_string(Wt) +
                     " is smaller than input " + std::to_string(H) + "x" + std::to_string(W));
  const auto ty = detail::interp_table(H, Ht);
  const auto tx = detail::interp_table(W, Wt);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * H * W;
    double* dst = out.data() + p * Ht * Wt;
    for (std::size_t y = 0; y < Ht; ++y) {
      const double wy = ty.w1[y];
      const double* r0 = src + ty.i0[y] * W;
      const double* r1 = src + ty.i1[y] * W;
      for (std::size_t xx = 0; xx < Wt; ++xx) {
        const double wx = tx.w1[xx];
        const double top = (1.0 - wx) * r0[tx.i0[xx]] + wx * r0[tx.i1[xx]];
        const double bot = (1.0 - wx) * r1[tx.i0[xx]] + wx * r1[tx.i1[xx]];
        dst[y * Wt + xx] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return detail::make_result("bilinear_up", {N, C, Ht, Wt}, std::move(out), {x},
                             [planes, H, W, Ht, Wt, ty, tx](detail::Node& self) {
                               auto& gx = self.parents[0]->grad;
                               for (std::size_t p = 0; p < planes; ++p) {
                                 double* d = gx.data() + p * H * W;
                                 const double* g = self.grad.data() + p * Ht * Wt;
                                 for (std::size_t y = 0; y < Ht; ++y) {
                                   const double wy = ty.w1[y];
                                   double* r0 = d + ty.i0[y] * W;
                                   double* r1 = d + ty.i1[y] * W;
                                   for (std::size_t xx = 0; xx < Wt; ++xx) {
                                     const double v = g[y * Wt + xx];
                                     const double wx = tx.w1[xx];
                                     r0[tx.i0[xx]] += (1.0 - wy) * (1.0 - wx) * v;
                                     r0[tx.i1[xx]] += (1.0 - wy) * wx * v;
                                     r1[tx.i0[xx]] += wy * (1.0 - wx) * v;
                                     r1[tx.i1[xx]] += wy * wx * v;
                                   }
                                 }
                               }
                             });
}

/// Bilinearly resizes a square-or-not map to side `side`; identity when sizes already match.
inline Tensor up_to(const Tensor& x, std::size_t side) {
  detail::require_rank("up_to", x, 4);
  if (x.dim(2) == side && x.dim(3) == side) return x;
  return resize(x, side, side, ResizeMode::bilinear_up);
}

}  // namespace gtn
