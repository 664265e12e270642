#include "flowvip/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "blas.hpp"
#include "flowvip/errors.hpp"

namespace flowvip {

using detail::make_result;
using detail::Node;

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> stride_a;  // aligned to out, 0 on broadcast axes
  std::vector<int64_t> stride_b;
  bool same = false;
};

std::vector<int64_t> aligned_strides(const Shape& s, const Shape& out) {
  const size_t r = out.size();
  std::vector<int64_t> st(r, 0);
  int64_t running = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    const size_t src = s.size() - 1 - i;
    const size_t dst = r - 1 - i;
    st[dst] = (s[src] == 1 && out[dst] != 1) ? 0 : running;
    running *= s[src];
  }
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  p.same = (a == b);
  if (!p.same) {
    p.stride_a = aligned_strides(a, p.out);
    p.stride_b = aligned_strides(b, p.out);
  }
  return p;
}

// Visits every output element with its source offsets in a and b.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const int64_t n = numel_of(p.out);
  if (p.same) {
    for (int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const size_t r = p.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  const int64_t inner = p.out[r - 1];
  const int64_t sa = p.stride_a[r - 1], sb = p.stride_b[r - 1];
  for (int64_t i = 0; i < n; i += inner) {
    for (int64_t j = 0; j < inner; ++j) f(i + j, ia + j * sa, ib + j * sb);
    // Advance the outer multi-index.
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::kAdd: return "add";
    case BinOp::kSub: return "sub";
    case BinOp::kMul: return "mul";
    case BinOp::kDiv: return "div";
  }
  return "?";
}

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  BroadcastPlan plan;
  try {
    plan = plan_broadcast(a.shape(), b.shape());
  } catch (const ShapeError&) {
    throw ShapeError(std::string(bin_name(op)) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcast-compatible");
  }
  const Scalar* pa = a.data().data();
  const Scalar* pb = b.data().data();
  std::vector<Scalar> out(numel_of(plan.out));
  switch (op) {
    case BinOp::kAdd: for_each_broadcast(plan, [&](int64_t i, int64_t x, int64_t y) { out[i] = pa[x] + pb[y]; }); break;
    case BinOp::kSub: for_each_broadcast(plan, [&](int64_t i, int64_t x, int64_t y) { out[i] = pa[x] - pb[y]; }); break;
    case BinOp::kMul: for_each_broadcast(plan, [&](int64_t i, int64_t x, int64_t y) { out[i] = pa[x] * pb[y]; }); break;
    case BinOp::kDiv: for_each_broadcast(plan, [&](int64_t i, int64_t x, int64_t y) { out[i] = pa[x] / pb[y]; }); break;
  }
  Shape shape = plan.out;
  return make_result(std::move(shape), std::move(out), bin_name(op), {a, b}, [plan, op](Node& self) {
    const Scalar* g = self.grad.data();
    const Scalar* va = self.inputs[0]->value.data();
    const Scalar* vb = self.inputs[1]->value.data();
    Scalar* ga = self.input_grad(0);
    Scalar* gb = self.input_grad(1);
    for_each_broadcast(plan, [&](int64_t i, int64_t x, int64_t y) {
      switch (op) {
        case BinOp::kAdd:
          if (ga) ga[x] += g[i];
          if (gb) gb[y] += g[i];
          break;
        case BinOp::kSub:
          if (ga) ga[x] += g[i];
          if (gb) gb[y] -= g[i];
          break;
        case BinOp::kMul:
          if (ga) ga[x] += g[i] * vb[y];
          if (gb) gb[y] += g[i] * va[x];
          break;
        case BinOp::kDiv:
          if (ga) ga[x] += g[i] / vb[y];
          if (gb) gb[y] -= g[i] * va[x] / (vb[y] * vb[y]);
          break;
      }
    });
  });
}

// y = f(x) with dy/dx = df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& a, const char* name, F f, DF df) {
  const auto& in = a.data();
  std::vector<Scalar> out(in.size());
  for (size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), name, {a}, [df](Node& self) {
    Scalar* ga = self.input_grad(0);
    if (!ga) return;
    const auto& x = self.inputs[0]->value;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return axis;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kDiv); }

Tensor add(const Tensor& a, Scalar b) {
  return unary(a, "add_scalar", [b](Scalar x) { return x + b; }, [](Scalar, Scalar) { return Scalar(1); });
}

Tensor mul(const Tensor& a, Scalar b) {
  return unary(a, "mul_scalar", [b](Scalar x) { return x * b; }, [b](Scalar, Scalar) { return b; });
}

Tensor rsub(Scalar a, const Tensor& b) {
  return unary(b, "rsub_scalar", [a](Scalar x) { return a - x; }, [](Scalar, Scalar) { return Scalar(-1); });
}

Tensor neg(const Tensor& a) {
  return unary(a, "neg", [](Scalar x) { return -x; }, [](Scalar, Scalar) { return Scalar(-1); });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return 1 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, "sqrt", [](Scalar x) { return std::sqrt(x); },
               [](Scalar, Scalar y) { return Scalar(0.5) / y; });
}

Tensor abs(const Tensor& a) {
  return unary(a, "abs", [](Scalar x) { return std::abs(x); },
               [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : (x < 0 ? Scalar(-1) : Scalar(0)); });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return 2 * x; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](Scalar x) { return x > 0 ? x : Scalar(0); },
               [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

Tensor leaky_relu(const Tensor& a, Scalar slope) {
  return unary(a, "leaky_relu", [slope](Scalar x) { return x > 0 ? x : slope * x; },
               [slope](Scalar x, Scalar) { return x > 0 ? Scalar(1) : slope; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](Scalar x) {
        if (x >= 0) return Scalar(1) / (1 + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (1 + e);
      },
      [](Scalar, Scalar y) { return y * (1 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](Scalar x) { return std::tanh(x); }, [](Scalar, Scalar y) { return 1 - y * y; });
}

Tensor gelu(const Tensor& a) {
  constexpr Scalar kInvSqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  constexpr Scalar kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<Scalar> * kInvSqrt2;
  return unary(
      a, "gelu", [](Scalar x) { return Scalar(0.5) * x * (1 + std::erf(x * kInvSqrt2)); },
      [](Scalar x, Scalar) {
        return Scalar(0.5) * (1 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-Scalar(0.5) * x * x);
      });
}

Tensor sum(const Tensor& a) {
  Scalar s = 0;
  for (Scalar v : a.data()) s += v;
  return make_result({}, {s}, "sum", {a}, [](Node& self) {
    Scalar* ga = self.input_grad(0);
    if (!ga) return;
    const Scalar g = self.grad[0];
    for (size_t i = 0; i < self.inputs[0]->value.size(); ++i) ga[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  const auto n = static_cast<Scalar>(a.numel());
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  Scalar s = 0;
  for (Scalar v : a.data()) s += v;
  return make_result({}, {s / n}, "mean", {a}, [n](Node& self) {
    Scalar* ga = self.input_grad(0);
    if (!ga) return;
    const Scalar g = self.grad[0] / n;
    for (size_t i = 0; i < self.inputs[0]->value.size(); ++i) ga[i] += g;
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result(shape, a.to_vector(), "reshape", {a}, [](Node& self) {
    Scalar* ga = self.input_grad(0);
    if (!ga) return;
    for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const Shape& in = a.shape();
  const int r = static_cast<int>(in.size());
  if (static_cast<int>(axes.size()) != r) {
    throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for shape " + shape_str(in));
  }
  std::vector<bool> seen(r, false);
  Shape out(r);
  for (int i = 0; i < r; ++i) {
    const int ax = axes[i];
    if (ax < 0 || ax >= r || seen[ax]) throw ShapeError("permute: invalid axis order");
    seen[ax] = true;
    out[i] = in[ax];
  }
  const auto in_strides = contiguous_strides(in);
  std::vector<int64_t> src_stride(r);
  for (int i = 0; i < r; ++i) src_stride[i] = in_strides[axes[i]];

  // Maps output flat index -> input flat index.
  const int64_t n = a.numel();
  std::vector<int64_t> map(n);
  {
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    for (int64_t i = 0; i < n; ++i) {
      map[i] = src;
      for (int d = r - 1; d >= 0; --d) {
        ++idx[d];
        src += src_stride[d];
        if (idx[d] < out[d]) break;
        src -= src_stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  const Scalar* pa = a.data().data();
  std::vector<Scalar> v(n);
  for (int64_t i = 0; i < n; ++i) v[i] = pa[map[i]];
  return make_result(out, std::move(v), "permute", {a}, [map = std::move(map)](Node& self) {
    Scalar* ga = self.input_grad(0);
    if (!ga) return;
    for (size_t i = 0; i < map.size(); ++i) ga[map[i]] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  axis = normalize_axis(axis, static_cast<int>(first.size()), "concat");
  Shape out = first;
  out[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (size_t d = 0; ok && d < s.size(); ++d) ok = (static_cast<int>(d) == axis) || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first) +
                       " along axis " + std::to_string(axis));
    }
    out[axis] += s[axis];
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<int64_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.shape()[axis] * inner);
  const int64_t row = out[axis] * inner;
  std::vector<Scalar> v(numel_of(out));
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const Scalar* src = parts[k].data().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[k], widths[k], v.data() + o * row + offset);
    }
    offset += widths[k];
  }
  return make_result(out, std::move(v), "concat", parts, [widths, outer, row](Node& self) {
    int64_t off = 0;
    for (size_t k = 0; k < widths.size(); ++k) {
      Scalar* gk = self.input_grad(k);
      if (gk) {
        for (int64_t o = 0; o < outer; ++o) {
          const Scalar* g = self.grad.data() + o * row + off;
          Scalar* dst = gk + o * widths[k];
          for (int64_t j = 0; j < widths[k]; ++j) dst[j] += g[j];
        }
      }
      off += widths[k];
    }
  });
}

Tensor narrow(const Tensor& a, int axis, int64_t start, int64_t length) {
  const Shape& in = a.shape();
  axis = normalize_axis(axis, static_cast<int>(in.size()), "narrow");
  if (start < 0 || length < 0 || start + length > in[axis]) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis " + std::to_string(axis) + " of " + shape_str(in));
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= in[d];
  for (size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  Shape out = in;
  out[axis] = length;
  const int64_t src_row = in[axis] * inner, dst_row = length * inner, off = start * inner;
  std::vector<Scalar> v(numel_of(out));
  const Scalar* pa = a.data().data();
  for (int64_t o = 0; o < outer; ++o) std::copy_n(pa + o * src_row + off, dst_row, v.data() + o * dst_row);
  return make_result(out, std::move(v), "narrow", {a}, [outer, src_row, dst_row, off](Node& self) {
    Scalar* ga = self.input_grad(0);
    if (!ga) return;
    for (int64_t o = 0; o < outer; ++o) {
      const Scalar* g = self.grad.data() + o * dst_row;
      Scalar* dst = ga + o * src_row + off;
      for (int64_t j = 0; j < dst_row; ++j) dst[j] += g[j];
    }
  });
}

Tensor index_select(const Tensor& a, const std::vector<int64_t>& indices) {
  const Shape& in = a.shape();
  if (in.empty()) throw ShapeError("index_select on a rank-0 tensor");
  const int64_t rows = in[0];
  const int64_t row = rows == 0 ? 0 : a.numel() / rows;
  for (int64_t ix : indices) {
    if (ix < 0 || ix >= rows) {
      throw ShapeError("index_select: index " + std::to_string(ix) + " out of range for " + shape_str(in));
    }
  }
  Shape out = in;
  out[0] = static_cast<int64_t>(indices.size());
  std::vector<Scalar> v(numel_of(out));
  const Scalar* pa = a.data().data();
  for (size_t i = 0; i < indices.size(); ++i) std::copy_n(pa + indices[i] * row, row, v.data() + i * row);
  return make_result(out, std::move(v), "index_select", {a}, [indices, row](Node& self) {
    Scalar* ga = self.input_grad(0);
    if (!ga) return;
    for (size_t i = 0; i < indices.size(); ++i) {
      const Scalar* g = self.grad.data() + i * row;
      Scalar* dst = ga + indices[i] * row;
      for (int64_t j = 0; j < row; ++j) dst[j] += g[j];
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

std::vector<Tensor> unstack(const Tensor& a) {
  Shape s = a.shape();
  if (s.empty()) throw ShapeError("unstack of a rank-0 tensor");
  const int64_t n = s[0];
  s.erase(s.begin());
  std::vector<Tensor> out;
  out.reserve(n);
  for (int64_t i = 0; i < n; ++i) out.push_back(reshape(narrow(a, 0, i, 1), s));
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const int64_t m = sa[sa.size() - 2], k = sa.back();
  const int64_t kb = transpose_b ? sb.back() : sb[sb.size() - 2];
  const int64_t n = transpose_b ? sb[sb.size() - 2] : sb.back();
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ for " + shape_str(sa) + " x " + shape_str(sb) +
                     (transpose_b ? "^T" : ""));
  }
  const bool shared_b = sb.size() == 2;
  int64_t batch = 1;
  for (size_t d = 0; d + 2 < sa.size(); ++d) batch *= sa[d];
  if (!shared_b) {
    bool ok = sa.size() == sb.size();
    for (size_t d = 0; ok && d + 2 < sa.size(); ++d) ok = sa[d] == sb[d];
    if (!ok) throw ShapeError("matmul: batch extents differ for " + shape_str(sa) + " and " + shape_str(sb));
  }
  Shape out(sa.begin(), sa.end() - 2);
  out.push_back(m);
  out.push_back(n);
  std::vector<Scalar> v(numel_of(out));
  const Scalar* pa = a.data().data();
  const Scalar* pb = b.data().data();
  const int ldb = static_cast<int>(transpose_b ? k : n);
  if (shared_b) {
    detail::gemm(false, transpose_b, static_cast<int>(batch * m), static_cast<int>(n), static_cast<int>(k), 1, pa,
                 static_cast<int>(k), pb, ldb, 0, v.data(), static_cast<int>(n));
  } else {
    for (int64_t i = 0; i < batch; ++i) {
      detail::gemm(false, transpose_b, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1,
                   pa + i * m * k, static_cast<int>(k), pb + i * k * n, ldb, 0, v.data() + i * m * n,
                   static_cast<int>(n));
    }
  }
  return make_result(out, std::move(v), "matmul", {a, b},
                     [m, n, k, batch, shared_b, transpose_b, ldb](Node& self) {
    const Scalar* g = self.grad.data();
    const Scalar* va = self.inputs[0]->value.data();
    const Scalar* vb = self.inputs[1]->value.data();
    Scalar* ga = self.input_grad(0);
    Scalar* gb = self.input_grad(1);
    const int M = static_cast<int>(m), N = static_cast<int>(n), K = static_cast<int>(k);
    if (shared_b) {
      const int rows = static_cast<int>(batch * m);
      // dA = G * op(B)^T
      if (ga) detail::gemm(false, !transpose_b, rows, K, N, 1, g, N, vb, ldb, 1, ga, K);
      if (gb) {
        if (transpose_b) detail::gemm(true, false, N, K, rows, 1, g, N, va, K, 1, gb, K);
        else detail::gemm(true, false, K, N, rows, 1, va, K, g, N, 1, gb, N);
      }
      return;
    }
    for (int64_t i = 0; i < batch; ++i) {
      const Scalar* gi = g + i * m * n;
      const Scalar* ai = va + i * m * k;
      const Scalar* bi = vb + i * k * n;
      if (ga) detail::gemm(false, !transpose_b, M, K, N, 1, gi, N, bi, ldb, 1, ga + i * m * k, K);
      if (gb) {
        if (transpose_b) detail::gemm(true, false, N, K, M, 1, gi, N, ai, K, 1, gb + i * k * n, K);
        else detail::gemm(true, false, K, N, M, 1, ai, K, gi, N, 1, gb + i * k * n, N);
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sw.size() != 2 || sx.empty() || sx.back() != sw[0]) {
    throw ShapeError("linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  }
  const int64_t in = sw[0], outc = sw[1];
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outc)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(sw));
  }
  const int64_t rows = x.numel() / in;
  Shape out = sx;
  out.back() = outc;
  std::vector<Scalar> v(rows * outc);
  if (bias.defined()) {
    const Scalar* pb = bias.data().data();
    for (int64_t r = 0; r < rows; ++r) std::copy_n(pb, outc, v.data() + r * outc);
  }
  detail::gemm(false, false, static_cast<int>(rows), static_cast<int>(outc), static_cast<int>(in), 1,
               x.data().data(), static_cast<int>(in), weight.data().data(), static_cast<int>(outc),
               bias.defined() ? 1 : 0, v.data(), static_cast<int>(outc));
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(out, std::move(v), "linear", inputs, [rows, in, outc](Node& self) {
    const Scalar* g = self.grad.data();
    const int R = static_cast<int>(rows), I = static_cast<int>(in), O = static_cast<int>(outc);
    if (Scalar* gx = self.input_grad(0)) {
      detail::gemm(false, true, R, I, O, 1, g, O, self.inputs[1]->value.data(), O, 1, gx, I);
    }
    if (Scalar* gw = self.input_grad(1)) {
      detail::gemm(true, false, I, O, R, 1, self.inputs[0]->value.data(), I, g, O, 1, gw, O);
    }
    if (self.inputs.size() > 2) {
      if (Scalar* gb = self.input_grad(2)) {
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < outc; ++c) gb[c] += g[r * outc + c];
      }
    }
  });
}

namespace {

struct ConvPlan {
  int64_t D, H, W, C;           // input extents
  int kd, kh, kw;
  int64_t Cout;
  int sd, sh, sw, pd, ph, pw;
  int64_t Do, Ho, Wo;
  int64_t K() const { return static_cast<int64_t>(kd) * kh * kw * C; }
  int64_t P() const { return Do * Ho * Wo; }
};

// Gathers zero-padded receptive fields for output positions [p0, p0 + count).
void im2col(const ConvPlan& c, const Scalar* x, int64_t p0, int64_t count, Scalar* cols) {
  const int64_t K = c.K();
  for (int64_t q = 0; q < count; ++q) {
    const int64_t p = p0 + q;
    const int64_t od = p / (c.Ho * c.Wo), oh = (p / c.Wo) % c.Ho, ow = p % c.Wo;
    Scalar* dst = cols + q * K;
    for (int a = 0; a < c.kd; ++a) {
      const int64_t id = od * c.sd - c.pd + a;
      for (int b = 0; b < c.kh; ++b) {
        const int64_t ih = oh * c.sh - c.ph + b;
        for (int e = 0; e < c.kw; ++e) {
          const int64_t iw = ow * c.sw - c.pw + e;
          if (id < 0 || id >= c.D || ih < 0 || ih >= c.H || iw < 0 || iw >= c.W) {
            std::fill_n(dst, c.C, Scalar(0));
          } else {
            std::copy_n(x + ((id * c.H + ih) * c.W + iw) * c.C, c.C, dst);
          }
          dst += c.C;
        }
      }
    }
  }
}

void col2im_add(const ConvPlan& c, const Scalar* cols, int64_t p0, int64_t count, Scalar* gx) {
  const int64_t K = c.K();
  for (int64_t q = 0; q < count; ++q) {
    const int64_t p = p0 + q;
    const int64_t od = p / (c.Ho * c.Wo), oh = (p / c.Wo) % c.Ho, ow = p % c.Wo;
    const Scalar* src = cols + q * K;
    for (int a = 0; a < c.kd; ++a) {
      const int64_t id = od * c.sd - c.pd + a;
      for (int b = 0; b < c.kh; ++b) {
        const int64_t ih = oh * c.sh - c.ph + b;
        for (int e = 0; e < c.kw; ++e) {
          const int64_t iw = ow * c.sw - c.pw + e;
          if (!(id < 0 || id >= c.D || ih < 0 || ih >= c.H || iw < 0 || iw >= c.W)) {
            Scalar* dst = gx + ((id * c.H + ih) * c.W + iw) * c.C;
            for (int64_t ch = 0; ch < c.C; ++ch) dst[ch] += src[ch];
          }
          src += c.C;
        }
      }
    }
  }
}

int64_t tile_rows(const ConvPlan& c) {
  constexpr int64_t kBudget = int64_t(1) << 20;  // scalars per column tile
  return std::clamp<int64_t>(kBudget / std::max<int64_t>(1, c.K()), 1, std::max<int64_t>(1, c.P()));
}

bool is_pointwise(const ConvPlan& c) {
  return c.kd == 1 && c.kh == 1 && c.kw == 1 && c.sd == 1 && c.sh == 1 && c.sw == 1 && c.pd == 0 &&
         c.ph == 0 && c.pw == 0;
}

Tensor conv_impl(const Tensor& x, const Tensor& weight, const Tensor& bias, int kd, int kh, int kw,
                 const Conv3dGeometry& geo, const char* name) {
  const Shape& sx = x.shape();
  const Shape& swt = weight.shape();
  ConvPlan c{};
  c.D = sx[0];
  c.H = sx[1];
  c.W = sx[2];
  c.C = sx[3];
  c.kd = kd;
  c.kh = kh;
  c.kw = kw;
  c.Cout = swt.back();
  c.sd = geo.stride[0];
  c.sh = geo.stride[1];
  c.sw = geo.stride[2];
  c.pd = geo.padding[0];
  c.ph = geo.padding[1];
  c.pw = geo.padding[2];
  if (c.sd < 1 || c.sh < 1 || c.sw < 1) throw ShapeError(std::string(name) + ": stride must be >= 1");
  if (swt[swt.size() - 2] != c.C) {
    throw ShapeError(std::string(name) + ": weight " + shape_str(swt) + " expects " +
                     std::to_string(swt[swt.size() - 2]) + " input channels, input is " + shape_str(sx));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c.Cout)) {
    throw ShapeError(std::string(name) + ": bias " + shape_str(bias.shape()) + " vs weight " + shape_str(swt));
  }
  c.Do = (c.D + 2 * c.pd - kd) / c.sd + 1;
  c.Ho = (c.H + 2 * c.ph - kh) / c.sh + 1;
  c.Wo = (c.W + 2 * c.pw - kw) / c.sw + 1;
  if (c.D + 2 * c.pd < kd || c.H + 2 * c.ph < kh || c.W + 2 * c.pw < kw) {
    throw ShapeError(std::string(name) + ": kernel larger than padded input " + shape_str(sx));
  }
  const int64_t P = c.P(), K = c.K(), O = c.Cout;
  std::vector<Scalar> out(P * O, Scalar(0));
  if (bias.defined()) {
    const Scalar* pb = bias.data().data();
    for (int64_t p = 0; p < P; ++p) std::copy_n(pb, O, out.data() + p * O);
  }
  const Scalar* px = x.data().data();
  const Scalar* pw = weight.data().data();
  const Scalar beta = bias.defined() ? 1 : 0;
  if (is_pointwise(c)) {
    detail::gemm(false, false, static_cast<int>(P), static_cast<int>(O), static_cast<int>(K), 1, px,
                 static_cast<int>(K), pw, static_cast<int>(O), beta, out.data(), static_cast<int>(O));
  } else {
    const int64_t tile = tile_rows(c);
    std::vector<Scalar> cols(tile * K);
    for (int64_t p0 = 0; p0 < P; p0 += tile) {
      const int64_t cnt = std::min(tile, P - p0);
      im2col(c, px, p0, cnt, cols.data());
      detail::gemm(false, false, static_cast<int>(cnt), static_cast<int>(O), static_cast<int>(K), 1, cols.data(),
                   static_cast<int>(K), pw, static_cast<int>(O), beta, out.data() + p0 * O, static_cast<int>(O));
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({c.Do, c.Ho, c.Wo, O}, std::move(out), name, inputs, [c](Node& self) {
    const int64_t P = c.P(), K = c.K(), O = c.Cout;
    const Scalar* g = self.grad.data();
    const Scalar* px = self.inputs[0]->value.data();
    const Scalar* pw = self.inputs[1]->value.data();
    Scalar* gx = self.input_grad(0);
    Scalar* gw = self.input_grad(1);
    if (self.inputs.size() > 2) {
      if (Scalar* gb = self.input_grad(2)) {
        for (int64_t p = 0; p < P; ++p)
          for (int64_t o = 0; o < O; ++o) gb[o] += g[p * O + o];
      }
    }
    if (is_pointwise(c)) {
      if (gw) detail::gemm(true, false, static_cast<int>(K), static_cast<int>(O), static_cast<int>(P), 1, px,
                           static_cast<int>(K), g, static_cast<int>(O), 1, gw, static_cast<int>(O));
      if (gx) detail::gemm(false, true, static_cast<int>(P), static_cast<int>(K), static_cast<int>(O), 1, g,
                           static_cast<int>(O), pw, static_cast<int>(O), 1, gx, static_cast<int>(K));
      return;
    }
    const int64_t tile = tile_rows(c);
    std::vector<Scalar> cols(tile * K);
    std::vector<Scalar> dcols(gx ? tile * K : 0);
    for (int64_t p0 = 0; p0 < P; p0 += tile) {
      const int64_t cnt = std::min(tile, P - p0);
      const Scalar* gt = g + p0 * O;
      if (gw) {
        im2col(c, px, p0, cnt, cols.data());
        detail::gemm(true, false, static_cast<int>(K), static_cast<int>(O), static_cast<int>(cnt), 1, cols.data(),
                     static_cast<int>(K), gt, static_cast<int>(O), 1, gw, static_cast<int>(O));
      }
      if (gx) {
        detail::gemm(false, true, static_cast<int>(cnt), static_cast<int>(K), static_cast<int>(O), 1, gt,
                     static_cast<int>(O), pw, static_cast<int>(O), 0, dcols.data(), static_cast<int>(K));
        col2im_add(c, dcols.data(), p0, cnt, gx);
      }
    }
  });
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dGeometry& geo) {
  if (x.rank() != 4 || weight.rank() != 5) {
    throw ShapeError("conv3d: expected input [D,H,W,C] and weight [kd,kh,kw,Cin,Cout], got " +
                     shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  }
  const Shape& w = weight.shape();
  return conv_impl(x, weight, bias, static_cast<int>(w[0]), static_cast<int>(w[1]), static_cast<int>(w[2]), geo,
                   "conv3d");
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d: expected input [N,H,W,C] and weight [kh,kw,Cin,Cout], got " +
                     shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  }
  Conv3dGeometry geo;
  geo.stride = {1, stride, stride};
  geo.padding = {0, padding, padding};
  const Shape& w = weight.shape();
  return conv_impl(x, weight, bias, 1, static_cast<int>(w[0]), static_cast<int>(w[1]), geo, "conv2d");
}

Tensor avg_pool(const Tensor& x, int factor) {
  const Shape& s = x.shape();
  if (s.size() != 4 || factor < 1 || s[1] % factor != 0 || s[2] % factor != 0) {
    throw ShapeError("avg_pool: extents of " + shape_str(s) + " not divisible by " + std::to_string(factor));
  }
  const int64_t N = s[0], H = s[1], W = s[2], C = s[3], h = H / factor, w = W / factor;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(factor * factor);
  std::vector<Scalar> out(N * h * w * C, Scalar(0));
  const Scalar* px = x.data().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        const Scalar* src = px + ((n * H + y) * W + xx) * C;
        Scalar* dst = out.data() + ((n * h + y / factor) * w + xx / factor) * C;
        for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
      }
  for (Scalar& v : out) v *= inv;
  return make_result({N, h, w, C}, std::move(out), "avg_pool", {x}, [=](Node& self) {
    Scalar* gx = self.input_grad(0);
    if (!gx) return;
    const Scalar* g = self.grad.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          Scalar* dst = gx + ((n * H + y) * W + xx) * C;
          const Scalar* src = g + ((n * h + y / factor) * w + xx / factor) * C;
          for (int64_t c = 0; c < C; ++c) dst[c] += src[c] * inv;
        }
  });
}

Tensor upsample_nearest2x(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("upsample_nearest2x: expected [N,H,W,C], got " + shape_str(s));
  const int64_t N = s[0], H = s[1], W = s[2], C = s[3];
  std::vector<Scalar> out(N * 4 * H * W * C);
  const Scalar* px = x.data().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < 2 * H; ++y)
      for (int64_t xx = 0; xx < 2 * W; ++xx)
        std::copy_n(px + ((n * H + y / 2) * W + xx / 2) * C, C, out.data() + ((n * 2 * H + y) * 2 * W + xx) * C);
  return make_result({N, 2 * H, 2 * W, C}, std::move(out), "upsample_nearest2x", {x}, [=](Node& self) {
    Scalar* gx = self.input_grad(0);
    if (!gx) return;
    const Scalar* g = self.grad.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t y = 0; y < 2 * H; ++y)
        for (int64_t xx = 0; xx < 2 * W; ++xx) {
          const Scalar* src = g + ((n * 2 * H + y) * 2 * W + xx) * C;
          Scalar* dst = gx + ((n * H + y / 2) * W + xx / 2) * C;
          for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
        }
  });
}

namespace {

struct Tap1d {
  int64_t lo, hi;
  Scalar w_hi;
};

// Source taps for half-pixel-centred x2 enlargement along one axis.
std::vector<Tap1d> bilinear2x_taps(int64_t n) {
  std::vector<Tap1d> taps(2 * n);
  for (int64_t o = 0; o < 2 * n; ++o) {
    const Scalar src = (static_cast<Scalar>(o) + Scalar(0.5)) / 2 - Scalar(0.5);
    const Scalar fl = std::floor(src);
    const Scalar frac = src - fl;
    const auto lo = static_cast<int64_t>(fl);
    taps[o] = {std::clamp<int64_t>(lo, 0, n - 1), std::clamp<int64_t>(lo + 1, 0, n - 1), frac};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear2x(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("upsample_bilinear2x: expected [N,H,W,C], got " + shape_str(s));
  const int64_t N = s[0], H = s[1], W = s[2], C = s[3];
  auto ty = bilinear2x_taps(H);
  auto tx = bilinear2x_taps(W);
  std::vector<Scalar> out(N * 4 * H * W * C);
  const Scalar* px = x.data().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < 2 * H; ++y)
      for (int64_t xx = 0; xx < 2 * W; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        const Scalar w00 = (1 - a.w_hi) * (1 - b.w_hi), w01 = (1 - a.w_hi) * b.w_hi;
        const Scalar w10 = a.w_hi * (1 - b.w_hi), w11 = a.w_hi * b.w_hi;
        const Scalar* r0 = px + (n * H + a.lo) * W * C;
        const Scalar* r1 = px + (n * H + a.hi) * W * C;
        Scalar* dst = out.data() + ((n * 2 * H + y) * 2 * W + xx) * C;
        for (int64_t c = 0; c < C; ++c) {
          dst[c] = w00 * r0[b.lo * C + c] + w01 * r0[b.hi * C + c] + w10 * r1[b.lo * C + c] + w11 * r1[b.hi * C + c];
        }
      }
  return make_result({N, 2 * H, 2 * W, C}, std::move(out), "upsample_bilinear2x", {x},
                     [=, ty = std::move(ty), tx = std::move(tx)](Node& self) {
    Scalar* gx = self.input_grad(0);
    if (!gx) return;
    const Scalar* g = self.grad.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t y = 0; y < 2 * H; ++y)
        for (int64_t xx = 0; xx < 2 * W; ++xx) {
          const auto& a = ty[y];
          const auto& b = tx[xx];
          const Scalar w00 = (1 - a.w_hi) * (1 - b.w_hi), w01 = (1 - a.w_hi) * b.w_hi;
          const Scalar w10 = a.w_hi * (1 - b.w_hi), w11 = a.w_hi * b.w_hi;
          Scalar* r0 = gx + (n * H + a.lo) * W * C;
          Scalar* r1 = gx + (n * H + a.hi) * W * C;
          const Scalar* src = g + ((n * 2 * H + y) * 2 * W + xx) * C;
          for (int64_t c = 0; c < C; ++c) {
            r0[b.lo * C + c] += w00 * src[c];
            r0[b.hi * C + c] += w01 * src[c];
            r1[b.lo * C + c] += w10 * src[c];
            r1[b.hi * C + c] += w11 * src[c];
          }
        }
  });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax of a rank-0 tensor");
  const int64_t n = x.dim(-1);
  const int64_t rows = n == 0 ? 0 : x.numel() / n;
  const Scalar* px = x.data().data();
  std::vector<Scalar> out(x.numel());
  for (int64_t r = 0; r < rows; ++r) {
    const Scalar* src = px + r * n;
    Scalar* dst = out.data() + r * n;
    const Scalar mx = *std::max_element(src, src + n);
    Scalar s = 0;
    for (int64_t j = 0; j < n; ++j) s += (dst[j] = std::exp(src[j] - mx));
    const Scalar inv = 1 / s;
    for (int64_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [rows, n](Node& self) {
    Scalar* gx = self.input_grad(0);
    if (!gx) return;
    for (int64_t r = 0; r < rows; ++r) {
      const Scalar* y = self.value.data() + r * n;
      const Scalar* g = self.grad.data() + r * n;
      Scalar dot = 0;
      for (int64_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (int64_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  const int64_t c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match feature extent of " + shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / c;
  const Scalar* px = x.data().data();
  const Scalar* pg = gamma.data().data();
  const Scalar* pb = beta.data().data();
  std::vector<Scalar> out(x.numel());
  std::vector<Scalar> xhat(x.numel());
  std::vector<Scalar> inv_std(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const Scalar* src = px + r * c;
    Scalar mu = 0;
    for (int64_t j = 0; j < c; ++j) mu += src[j];
    mu /= static_cast<Scalar>(c);
    Scalar var = 0;
    for (int64_t j = 0; j < c; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<Scalar>(c);
    const Scalar inv = 1 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int64_t j = 0; j < c; ++j) {
      const Scalar h = (src[j] - mu) * inv;
      xhat[r * c + j] = h;
      out[r * c + j] = h * pg[j] + pb[j];
    }
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
                     [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    const Scalar* g = self.grad.data();
    const Scalar* pg = self.inputs[1]->value.data();
    Scalar* gx = self.input_grad(0);
    Scalar* gg = self.input_grad(1);
    Scalar* gb = self.input_grad(2);
    const Scalar inv_c = Scalar(1) / static_cast<Scalar>(c);
    for (int64_t r = 0; r < rows; ++r) {
      const Scalar* gr = g + r * c;
      const Scalar* hr = xhat.data() + r * c;
      if (gg || gb) {
        for (int64_t j = 0; j < c; ++j) {
          if (gg) gg[j] += gr[j] * hr[j];
          if (gb) gb[j] += gr[j];
        }
      }
      if (gx) {
        Scalar m1 = 0, m2 = 0;
        for (int64_t j = 0; j < c; ++j) {
          const Scalar d = gr[j] * pg[j];
          m1 += d;
          m2 += d * hr[j];
        }
        m1 *= inv_c;
        m2 *= inv_c;
        for (int64_t j = 0; j < c; ++j) gx[r * c + j] += inv_std[r] * (gr[j] * pg[j] - m1 - hr[j] * m2);
      }
    }
  });
}

}  // namespace flowvip
