#include "v2xcalib/nn/ops.hpp"

#include <array>
#include <limits>

namespace v2xcalib::nn {

namespace {

[[noreturn]] void fail(const char* op, const std::string& msg) { throw ShapeError(std::string(op) + ": " + msg); }

void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) fail(op, msg);
}

template <typename S>
void require_defined(const Var<S>& v, const char* op) {
  require(v.defined(), op, "undefined input");
}

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * static_cast<std::size_t>(s[i + 1]);
  return st;
}

/// Strides of `in` right-aligned against `out`, zero along broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  const auto cs = contiguous_strides(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) st[off + i] = in[i] == 1 ? 0 : cs[i];
  return st;
}

/// Calls f(out_index, a_index, b_index) over every element of `out`.
template <typename F>
void broadcast_for_each(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
  const std::size_t n = shape_size(out);
  if (n == 0) return;
  const std::size_t nd = out.size();
  std::vector<int> idx(nd, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
      if (++idx[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      ia -= sa[d] * static_cast<std::size_t>(out[d] - 1);
      ib -= sb[d] * static_cast<std::size_t>(out[d] - 1);
      idx[d] = 0;
    }
  }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

constexpr const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::kAdd: return "add";
    case BinOp::kSub: return "sub";
    case BinOp::kMul: return "mul";
    case BinOp::kDiv: return "div";
  }
  return "?";
}

template <typename S>
S apply_bin(BinOp op, S x, S y) {
  switch (op) {
    case BinOp::kAdd: return x + y;
    case BinOp::kSub: return x - y;
    case BinOp::kMul: return x * y;
    case BinOp::kDiv: return x / y;
  }
  return S(0);
}

template <typename S>
Var<S> binary(const Var<S>& a, const Var<S>& b, BinOp op) {
  const char* name = bin_name(op);
  require_defined(a, name);
  require_defined(b, name);
  const Shape out = broadcast_shape(a.shape(), b.shape(), name);
  const auto sa = broadcast_strides(a.shape(), out);
  const auto sb = broadcast_strides(b.shape(), out);
  Tensor<S> y(out);
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* py = y.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < y.size(); ++i) py[i] = apply_bin(op, pa[i], pb[i]);
  } else {
    broadcast_for_each(out, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      py[o] = apply_bin(op, pa[ia], pb[ib]);
    });
  }
  const bool same = a.shape() == b.shape();
  return make_op<S>(std::move(y), {a, b}, name, [op, out, sa, sb, same](Node<S>& n) {
    const S* g = n.grad.data();
    Node<S>* na = grad_target(n, 0);
    Node<S>* nb = grad_target(n, 1);
    const S* va = n.parents[0]->value.data();
    const S* vb = n.parents[1]->value.data();
    S* ga = na ? na->grad_buffer().data() : nullptr;
    S* gb = nb ? nb->grad_buffer().data() : nullptr;
    auto visit = [&](std::size_t o, std::size_t ia, std::size_t ib) {
      const S go = g[o];
      switch (op) {
        case BinOp::kAdd:
          if (ga) ga[ia] += go;
          if (gb) gb[ib] += go;
          break;
        case BinOp::kSub:
          if (ga) ga[ia] += go;
          if (gb) gb[ib] -= go;
          break;
        case BinOp::kMul:
          if (ga) ga[ia] += go * vb[ib];
          if (gb) gb[ib] += go * va[ia];
          break;
        case BinOp::kDiv:
          if (ga) ga[ia] += go / vb[ib];
          if (gb) gb[ib] -= go * va[ia] / (vb[ib] * vb[ib]);
          break;
      }
    };
    if (same) {
      for (std::size_t i = 0; i < n.value.size(); ++i) visit(i, i, i);
    } else {
      broadcast_for_each(out, sa, sb, visit);
    }
  });
}

/// Elementwise op with derivative expressed through input x and output y.
template <typename S, typename Fwd, typename Deriv>
Var<S> unary(const Var<S>& a, const char* name, Fwd fwd, Deriv deriv) {
  require_defined(a, name);
  Tensor<S> y(a.shape());
  const S* x = a.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(x[i]);
  return make_op<S>(std::move(y), {a}, name, [deriv](Node<S>& n) {
    Node<S>* p = grad_target(n, 0);
    if (!p) return;
    S* gp = p->grad_buffer().data();
    const S* g = n.grad.data();
    const S* x = p->value.data();
    const S* y = n.value.data();
    for (std::size_t i = 0; i < n.value.size(); ++i) gp[i] += g[i] * deriv(x[i], y[i]);
  });
}

int norm_axis(int axis, int nd, const char* op) {
  const int a = axis < 0 ? axis + nd : axis;
  require(a >= 0 && a < nd, op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(nd));
  return a;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[i]);
  r.extent = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    const int da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const int db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b) { return binary(a, b, BinOp::kAdd); }
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b) { return binary(a, b, BinOp::kSub); }
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b) { return binary(a, b, BinOp::kMul); }
template <typename S> Var<S> div(const Var<S>& a, const Var<S>& b) { return binary(a, b, BinOp::kDiv); }

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  return unary(a, "scale", [s](S x) { return x * s; }, [s](S, S) { return s; });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S s) {
  return unary(a, "add_scalar", [s](S x) { return x + s; }, [](S, S) { return S(1); });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  return unary(a, "neg", [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  return unary(a, "relu", [](S x) { return x > S(0) ? x : S(0); }, [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  return unary(
      a, "sigmoid", [](S x) { return S(1) / (S(1) + std::exp(-x)); }, [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  return unary(a, "tanh", [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  return unary(a, "exp", [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> log(const Var<S>& a) {
  return unary(a, "log", [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Var<S> softplus(const Var<S>& a) {
  return unary(
      a, "softplus",
      [](S x) { return x > S(20) ? x : std::log1p(std::exp(x)); },
      [](S x, S) { return S(1) / (S(1) + std::exp(-x)); });
}

template <typename S>
Var<S> sqrt(const Var<S>& a) {
  return unary(a, "sqrt", [](S x) { return std::sqrt(x); }, [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return unary(a, "square", [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <typename S>
Var<S> abs(const Var<S>& a) {
  return unary(
      a, "abs", [](S x) { return std::abs(x); },
      [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Var<S> acos(const Var<S>& a) {
  return unary(a, "acos", [](S x) { return std::acos(x); }, [](S x, S) { return S(-1) / std::sqrt(S(1) - x * x); });
}

template <typename S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
  return unary(
      a, "clamp", [lo, hi](S x) { return std::clamp(x, lo, hi); },
      [lo, hi](S x, S) { return (x >= lo && x <= hi) ? S(1) : S(0); });
}

template <typename S>
Var<S> silu(const Var<S>& a) {
  return unary(
      a, "silu", [](S x) { return x / (S(1) + std::exp(-x)); },
      [](S x, S) {
        const S s = S(1) / (S(1) + std::exp(-x));
        return s * (S(1) + x * (S(1) - s));
      });
}

// -- reductions ---------------------------------------------------------------

template <typename S>
Var<S> sum(const Var<S>& a) {
  require_defined(a, "sum");
  Tensor<S> y = Tensor<S>::scalar(a.value().array().sum());
  return make_op<S>(std::move(y), {a}, "sum", [](Node<S>& n) {
    Node<S>* p = grad_target(n, 0);
    if (p) p->grad_buffer().array() += n.grad[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  require(a.size() > 0, "mean", "empty input");
  return scale(sum(a), S(1) / static_cast<S>(a.size()));
}

template <typename S>
Var<S> sum(const Var<S>& a, int axis, bool keepdim) {
  require_defined(a, "sum_axis");
  const int ax = norm_axis(axis, a.ndim(), "sum_axis");
  const AxisSplit sp = split_at(a.shape(), ax);
  Shape out = a.shape();
  if (keepdim) {
    out[ax] = 1;
  } else {
    out.erase(out.begin() + ax);
  }
  Tensor<S> y(out);
  const S* x = a.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i) y[o * sp.inner + i] += x[(o * sp.extent + e) * sp.inner + i];
  return make_op<S>(std::move(y), {a}, "sum_axis", [sp](Node<S>& n) {
    Node<S>* p = grad_target(n, 0);
    if (!p) return;
    S* gp = p->grad_buffer().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) gp[(o * sp.extent + e) * sp.inner + i] += n.grad[o * sp.inner + i];
  });
}

template <typename S>
Var<S> row_norm(const Var<S>& a) {
  require(a.ndim() == 2, "row_norm", "expects [N, K], got " + shape_str(a.shape()));
  const int rows = a.dim(0);
  const int cols = a.dim(1);
  const auto X = a.value().matrix(rows, cols);
  Tensor<S> y(Shape{rows});
  for (int r = 0; r < rows; ++r) y[r] = X.row(r).norm();
  return make_op<S>(std::move(y), {a}, "row_norm", [rows, cols](Node<S>& n) {
    Node<S>* p = grad_target(n, 0);
    if (!p) return;
    auto G = p->grad_buffer().matrix(rows, cols);
    const auto X = p->value.matrix(rows, cols);
    for (int r = 0; r < rows; ++r) {
      const S nr = n.value[r];
      if (nr > S(0)) G.row(r) += (n.grad[r] / nr) * X.row(r);
    }
  });
}

// -- shape --------------------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  require_defined(a, "reshape");
  require(shape_size(shape) == a.size(), "reshape", "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor<S> y = a.value().reshaped(std::move(shape));
  return make_op<S>(std::move(y), {a}, "reshape", [](Node<S>& n) {
    Node<S>* p = grad_target(n, 0);
    if (p) p->grad_buffer().array() += n.grad.array();
  });
}

template <typename S>
Var<S> permute(const Var<S>& a, const std::vector<int>& perm) {
  require_defined(a, "permute");
  const int nd = a.ndim();
  require(static_cast<int>(perm.size()) == nd, "permute", "permutation rank mismatch");
  std::vector<bool> used(static_cast<std::size_t>(nd), false);
  Shape out(static_cast<std::size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    require(perm[i] >= 0 && perm[i] < nd && !used[perm[i]], "permute", "invalid permutation");
    used[perm[i]] = true;
    out[i] = a.dim(perm[i]);
  }
  const auto in_strides = contiguous_strides(a.shape());
  std::vector<std::size_t> src_strides(static_cast<std::size_t>(nd));
  for (int i = 0; i < nd; ++i) src_strides[i] = in_strides[perm[i]];
  // Map: output element o reads input element src[o].
  std::vector<std::size_t> src(a.size());
  {
    const std::vector<std::size_t> zero(static_cast<std::size_t>(nd), 0);
    broadcast_for_each(out, src_strides, zero, [&](std::size_t o, std::size_t ia, std::size_t) { src[o] = ia; });
  }
  Tensor<S> y(out);
  const S* x = a.value().data();
  for (std::size_t o = 0; o < src.size(); ++o) y[o] = x[src[o]];
  return make_op<S>(std::move(y), {a}, "permute", [src = std::move(src)](Node<S>& n) {
    Node<S>* p = grad_target(n, 0);
    if (!p) return;
    S* gp = p->grad_buffer().data();
    for (std::size_t o = 0; o < src.size(); ++o) gp[src[o]] += n.grad[o];
  });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  require(a.ndim() == 2, "transpose", "expects a 2-D input, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

template <typename S>
Var<S> slice(const Var<S>& a, int axis, int start, int length) {
  require_defined(a, "slice");
  const int ax = norm_axis(axis, a.ndim(), "slice");
  require(start >= 0 && length >= 0 && start + length <= a.dim(ax), "slice",
          "range [" + std::to_string(start) + ", " + std::to_string(start + length) + ") outside extent " +
              std::to_string(a.dim(ax)));
  const AxisSplit sp = split_at(a.shape(), ax);
  Shape out = a.shape();
  out[ax] = length;
  Tensor<S> y(out);
  const S* x = a.value().data();
  const std::size_t len = static_cast<std::size_t>(length);
  const std::size_t st = static_cast<std::size_t>(start);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(x + (o * sp.extent + st) * sp.inner, len * sp.inner, y.data() + o * len * sp.inner);
  return make_op<S>(std::move(y), {a}, "slice", [sp, st, len](Node<S>& n) {
    Node<S>* p = grad_target(n, 0);
    if (!p) return;
    S* gp = p->grad_buffer().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < len * sp.inner; ++k)
        gp[(o * sp.extent + st) * sp.inner + k] += n.grad[o * len * sp.inner + k];
  });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, int axis) {
  require(!parts.empty(), "concat", "no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const int nd = parts[0].ndim();
  const int ax = norm_axis(axis, nd, "concat");
  Shape out = parts[0].shape();
  out[ax] = 0;
  for (const auto& p : parts) {
    require(p.ndim() == nd, "concat", "rank mismatch");
    for (int d = 0; d < nd; ++d) {
      if (d != ax) {
        require(p.dim(d) == parts[0].dim(d), "concat",
                "shape " + shape_str(p.shape()) + " incompatible with " + shape_str(parts[0].shape()));
      }
    }
    out[ax] += p.dim(ax);
  }
  const AxisSplit so = split_at(out, ax);
  Tensor<S> y(out);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = static_cast<std::size_t>(p.dim(ax));
    const S* x = p.value().data();
    for (std::size_t o = 0; o < so.outer; ++o)
      std::copy_n(x + o * ext * so.inner, ext * so.inner, y.data() + (o * so.extent + off) * so.inner);
    off += ext;
  }
  return make_op<S>(std::move(y), parts, "concat", [so, offsets](Node<S>& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      Node<S>* p = grad_target(n, k);
      if (!p) continue;
      const std::size_t ext = p->value.size() / (so.outer * so.inner);
      S* gp = p->grad_buffer().data();
      for (std::size_t o = 0; o < so.outer; ++o)
        for (std::size_t i = 0; i < ext * so.inner; ++i)
          gp[o * ext * so.inner + i] += n.grad[(o * so.extent + offsets[k]) * so.inner + i];
    }
  });
}

// -- linear algebra -----------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul",
          "incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  Tensor<S> y(Shape{m, nn});
  y.matrix(m, nn).noalias() = a.value().matrix(m, k) * b.value().matrix(k, nn);
  return make_op<S>(std::move(y), {a, b}, "matmul", [m, k, nn](Node<S>& n) {
    const auto G = n.grad.matrix(m, nn);
    if (Node<S>* pa = grad_target(n, 0)) {
      pa->grad_buffer().matrix(m, k).noalias() += G * n.parents[1]->value.matrix(k, nn).transpose();
    }
    if (Node<S>* pb = grad_target(n, 1)) {
      pb->grad_buffer().matrix(k, nn).noalias() += n.parents[0]->value.matrix(m, k).transpose() * G;
    }
  });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  require_defined(x, "linear");
  require(w.ndim() == 2 && x.ndim() >= 1 && x.dim(-1) == w.dim(0), "linear",
          "input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias) require(b.ndim() == 1 && b.dim(0) == w.dim(1), "linear", "bias must be [out]");
  const int in = w.dim(0), outd = w.dim(1);
  const int rows = static_cast<int>(x.size() / static_cast<std::size_t>(in));
  Shape out = x.shape();
  out.back() = outd;
  Tensor<S> y(out);
  auto Y = y.matrix(rows, outd);
  Y.noalias() = x.value().matrix(rows, in) * w.value().matrix(in, outd);
  if (has_bias) Y.rowwise() += b.value().matrix(1, outd).row(0);
  std::vector<Var<S>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op<S>(std::move(y), inputs, "linear", [rows, in, outd](Node<S>& n) {
    const auto G = n.grad.matrix(rows, outd);
    if (Node<S>* px = grad_target(n, 0)) {
      px->grad_buffer().matrix(rows, in).noalias() += G * n.parents[1]->value.matrix(in, outd).transpose();
    }
    if (Node<S>* pw = grad_target(n, 1)) {
      pw->grad_buffer().matrix(in, outd).noalias() += n.parents[0]->value.matrix(rows, in).transpose() * G;
    }
    if (n.parents.size() > 2) {
      if (Node<S>* pb = grad_target(n, 2)) pb->grad_buffer().matrix(1, outd).row(0) += G.colwise().sum();
    }
  });
}

// -- convolution --------------------------------------------------------------

namespace {

struct ConvGeom {
  int C, H, W, O, kh, kw, Ho, Wo;
  Conv2dOptions opt;
  bool direct;  // 1x1, stride 1, no padding: the input is its own column matrix
};

template <typename S>
void im2col(const S* x, const ConvGeom& g, S* col) {
  const int hw = g.Ho * g.Wo;
  for (int c = 0; c < g.C; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        S* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * hw;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.opt.stride_h - g.opt.pad_h + ki;
          S* dst = row + oy * g.Wo;
          if (iy < 0 || iy >= g.H) {
            std::fill_n(dst, g.Wo, S(0));
            continue;
          }
          const S* src = x + (static_cast<std::size_t>(c) * g.H + iy) * g.W;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.opt.stride_w - g.opt.pad_w + kj;
            dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : S(0);
          }
        }
      }
}

template <typename S>
void col2im(const S* col, const ConvGeom& g, S* x) {
  const int hw = g.Ho * g.Wo;
  for (int c = 0; c < g.C; ++c)
    for (int ki = 0; ki < g.kh; ++ki)
      for (int kj = 0; kj < g.kw; ++kj) {
        const S* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * hw;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.opt.stride_h - g.opt.pad_h + ki;
          if (iy < 0 || iy >= g.H) continue;
          S* dst = x + (static_cast<std::size_t>(c) * g.H + iy) * g.W;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.opt.stride_w - g.opt.pad_w + kj;
            if (ix >= 0 && ix < g.W) dst[ix] += row[oy * g.Wo + ox];
          }
        }
      }
}

}  // namespace

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& bias, Conv2dOptions opt) {
  require_defined(x, "conv2d");
  require_defined(w, "conv2d");
  require(x.ndim() == 4, "conv2d", "input must be [N, C, H, W], got " + shape_str(x.shape()));
  require(w.ndim() == 4 && w.dim(1) == x.dim(1), "conv2d",
          "weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  require(opt.stride_h >= 1 && opt.stride_w >= 1 && opt.pad_h >= 0 && opt.pad_w >= 0, "conv2d", "bad stride/padding");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.ndim() == 1 && bias.dim(0) == w.dim(0), "conv2d", "bias must be [O]");
  ConvGeom g{};
  g.C = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.O = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.opt = opt;
  require(g.H + 2 * opt.pad_h >= g.kh && g.W + 2 * opt.pad_w >= g.kw, "conv2d", "kernel larger than padded input");
  g.Ho = (g.H + 2 * opt.pad_h - g.kh) / opt.stride_h + 1;
  g.Wo = (g.W + 2 * opt.pad_w - g.kw) / opt.stride_w + 1;
  g.direct = g.kh == 1 && g.kw == 1 && opt.stride_h == 1 && opt.stride_w == 1 && opt.pad_h == 0 && opt.pad_w == 0;
  const int N = x.dim(0);
  const int K = g.C * g.kh * g.kw;
  const int hw = g.Ho * g.Wo;
  Tensor<S> y(Shape{N, g.O, g.Ho, g.Wo});
  const auto Wm = w.value().matrix(g.O, K);
  std::vector<Tensor<S>> cols;
  if (!g.direct) cols.reserve(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const S* xn = x.value().data() + static_cast<std::size_t>(n) * g.C * g.H * g.W;
    Eigen::Map<RowMatrix<S>> Yn(y.data() + static_cast<std::size_t>(n) * g.O * hw, g.O, hw);
    if (g.direct) {
      Yn.noalias() = Wm * Eigen::Map<const RowMatrix<S>>(xn, K, hw);
    } else {
      Tensor<S> col(Shape{K, hw});
      im2col(xn, g, col.data());
      Yn.noalias() = Wm * col.matrix(K, hw);
      cols.push_back(std::move(col));
    }
    if (has_bias) Yn.colwise() += bias.value().matrix(g.O, 1).col(0);
  }
  std::vector<Var<S>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_op<S>(std::move(y), inputs, "conv2d", [g, N, K, hw, cols = std::move(cols)](Node<S>& node) {
    Node<S>* px = grad_target(node, 0);
    Node<S>* pw = grad_target(node, 1);
    Node<S>* pb = node.parents.size() > 2 ? grad_target(node, 2) : nullptr;
    const auto Wm = node.parents[1]->value.matrix(g.O, K);
    Tensor<S> gcol;
    if (px && !g.direct) gcol = Tensor<S>(Shape{K, hw});
    for (int n = 0; n < N; ++n) {
      Eigen::Map<const RowMatrix<S>> Gn(node.grad.data() + static_cast<std::size_t>(n) * g.O * hw, g.O, hw);
      const std::size_t xoff = static_cast<std::size_t>(n) * g.C * g.H * g.W;
      if (pw) {
        auto GW = pw->grad_buffer().matrix(g.O, K);
        if (g.direct) {
          GW.noalias() += Gn * Eigen::Map<const RowMatrix<S>>(node.parents[0]->value.data() + xoff, K, hw).transpose();
        } else {
          GW.noalias() += Gn * cols[n].matrix(K, hw).transpose();
        }
      }
      if (pb) pb->grad_buffer().matrix(g.O, 1).col(0) += Gn.rowwise().sum();
      if (px) {
        S* gx = px->grad_buffer().data() + xoff;
        if (g.direct) {
          Eigen::Map<RowMatrix<S>>(gx, K, hw).noalias() += Wm.transpose() * Gn;
        } else {
          gcol.matrix(K, hw).noalias() = Wm.transpose() * Gn;
          col2im(gcol.data(), g, gx);
        }
      }
    }
  });
}

// -- pooling / resampling -----------------------------------------------------

template <typename S>
Var<S> avg_pool2d(const Var<S>& x, int kernel, int stride) {
  require(x.ndim() == 4, "avg_pool2d", "input must be [N, C, H, W], got " + shape_str(x.shape()));
  require(kernel >= 1 && stride >= 1 && x.dim(2) >= kernel && x.dim(3) >= kernel, "avg_pool2d", "bad kernel/stride");
  const int planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  const S inv = S(1) / static_cast<S>(kernel * kernel);
  Tensor<S> y(Shape{x.dim(0), x.dim(1), Ho, Wo});
  const S* px = x.value().data();
  for (int p = 0; p < planes; ++p)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        S acc = 0;
        for (int i = 0; i < kernel; ++i)
          for (int j = 0; j < kernel; ++j)
            acc += px[(static_cast<std::size_t>(p) * H + oy * stride + i) * W + ox * stride + j];
        y[(static_cast<std::size_t>(p) * Ho + oy) * Wo + ox] = acc * inv;
      }
  return make_op<S>(std::move(y), {x}, "avg_pool2d", [=](Node<S>& n) {
    Node<S>* pn = grad_target(n, 0);
    if (!pn) return;
    S* gx = pn->grad_buffer().data();
    for (int p = 0; p < planes; ++p)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const S go = n.grad[(static_cast<std::size_t>(p) * Ho + oy) * Wo + ox] * inv;
          for (int i = 0; i < kernel; ++i)
            for (int j = 0; j < kernel; ++j) gx[(static_cast<std::size_t>(p) * H + oy * stride + i) * W + ox * stride + j] += go;
        }
  });
}

template <typename S>
Var<S> max_pool2d(const Var<S>& x, int kernel, int stride) {
  require(x.ndim() == 4, "max_pool2d", "input must be [N, C, H, W], got " + shape_str(x.shape()));
  require(kernel >= 1 && stride >= 1 && x.dim(2) >= kernel && x.dim(3) >= kernel, "max_pool2d", "bad kernel/stride");
  const int planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  Tensor<S> y(Shape{x.dim(0), x.dim(1), Ho, Wo});
  std::vector<std::size_t> arg(y.size());
  const S* px = x.value().data();
  for (int p = 0; p < planes; ++p)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        std::size_t best = (static_cast<std::size_t>(p) * H + oy * stride) * W + ox * stride;
        for (int i = 0; i < kernel; ++i)
          for (int j = 0; j < kernel; ++j) {
            const std::size_t k = (static_cast<std::size_t>(p) * H + oy * stride + i) * W + ox * stride + j;
            if (px[k] > px[best]) best = k;
          }
        const std::size_t o = (static_cast<std::size_t>(p) * Ho + oy) * Wo + ox;
        y[o] = px[best];
        arg[o] = best;
      }
  return make_op<S>(std::move(y), {x}, "max_pool2d", [arg = std::move(arg)](Node<S>& n) {
    Node<S>* pn = grad_target(n, 0);
    if (!pn) return;
    S* gx = pn->grad_buffer().data();
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += n.grad[o];
  });
}

namespace {

struct Tap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <typename S>
Var<S> resize_bilinear(const Var<S>& x, int out_h, int out_w) {
  require(x.ndim() == 4, "resize_bilinear", "input must be [N, C, H, W], got " + shape_str(x.shape()));
  require(out_h >= 1 && out_w >= 1, "resize_bilinear", "output size must be positive");
  const int planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto ty = resize_taps(H, out_h);
  const auto tx = resize_taps(W, out_w);
  Tensor<S> y(Shape{x.dim(0), x.dim(1), out_h, out_w});
  const S* px = x.value().data();
  for (int p = 0; p < planes; ++p) {
    const S* src = px + static_cast<std::size_t>(p) * H * W;
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& a = ty[oy];
        const Tap& b = tx[ox];
        const S wy = static_cast<S>(a.w1), wx = static_cast<S>(b.w1);
        y[(static_cast<std::size_t>(p) * out_h + oy) * out_w + ox] =
            (S(1) - wy) * ((S(1) - wx) * src[a.i0 * W + b.i0] + wx * src[a.i0 * W + b.i1]) +
            wy * ((S(1) - wx) * src[a.i1 * W + b.i0] + wx * src[a.i1 * W + b.i1]);
      }
  }
  return make_op<S>(std::move(y), {x}, "resize_bilinear", [=](Node<S>& n) {
    Node<S>* pn = grad_target(n, 0);
    if (!pn) return;
    S* gx = pn->grad_buffer().data();
    for (int p = 0; p < planes; ++p) {
      S* dst = gx + static_cast<std::size_t>(p) * H * W;
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap& a = ty[oy];
          const Tap& b = tx[ox];
          const S wy = static_cast<S>(a.w1), wx = static_cast<S>(b.w1);
          const S g = n.grad[(static_cast<std::size_t>(p) * out_h + oy) * out_w + ox];
          dst[a.i0 * W + b.i0] += g * (S(1) - wy) * (S(1) - wx);
          dst[a.i0 * W + b.i1] += g * (S(1) - wy) * wx;
          dst[a.i1 * W + b.i0] += g * wy * (S(1) - wx);
          dst[a.i1 * W + b.i1] += g * wy * wx;
        }
    }
  });
}

namespace {

template <typename S>
struct BilinearCell {
  int y0, y1, x0, x1;
  S wy, wx;
  bool y_free, x_free;  // false when the coordinate was clamped
};

template <typename S>
BilinearCell<S> bilinear_cell(S y, S x, int H, int W) {
  BilinearCell<S> c{};
  c.y_free = y >= S(0) && y <= S(H - 1);
  c.x_free = x >= S(0) && x <= S(W - 1);
  y = std::clamp(y, S(0), S(H - 1));
  x = std::clamp(x, S(0), S(W - 1));
  c.y0 = std::min(static_cast<int>(std::floor(y)), H - 1);
  c.x0 = std::min(static_cast<int>(std::floor(x)), W - 1);
  c.y1 = std::min(c.y0 + 1, H - 1);
  c.x1 = std::min(c.x0 + 1, W - 1);
  c.wy = y - S(c.y0);
  c.wx = x - S(c.x0);
  return c;
}

}  // namespace

template <typename S>
Var<S> grid_sample(const Var<S>& img, const Var<S>& grid) {
  require(img.ndim() == 4, "grid_sample", "image must be [N, C, H, W], got " + shape_str(img.shape()));
  require(grid.ndim() == 4 && grid.dim(0) == img.dim(0) && grid.dim(3) == 2, "grid_sample",
          "grid must be [N, Ho, Wo, 2] matching image batch, got " + shape_str(grid.shape()));
  const int N = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
  const int Ho = grid.dim(1), Wo = grid.dim(2);
  const int P = Ho * Wo;
  Tensor<S> y(Shape{N, C, Ho, Wo});
  const S* pi = img.value().data();
  const S* pg = grid.value().data();
  for (int n = 0; n < N; ++n)
    for (int p = 0; p < P; ++p) {
      const std::size_t gi = (static_cast<std::size_t>(n) * P + p) * 2;
      const auto cell = bilinear_cell(pg[gi], pg[gi + 1], H, W);
      for (int c = 0; c < C; ++c) {
        const S* src = pi + (static_cast<std::size_t>(n) * C + c) * H * W;
        const S v00 = src[cell.y0 * W + cell.x0], v01 = src[cell.y0 * W + cell.x1];
        const S v10 = src[cell.y1 * W + cell.x0], v11 = src[cell.y1 * W + cell.x1];
        y[(static_cast<std::size_t>(n) * C + c) * P + p] =
            (S(1) - cell.wy) * ((S(1) - cell.wx) * v00 + cell.wx * v01) + cell.wy * ((S(1) - cell.wx) * v10 + cell.wx * v11);
      }
    }
  return make_op<S>(std::move(y), {img, grid}, "grid_sample", [=](Node<S>& node) {
    Node<S>* pimg = grad_target(node, 0);
    Node<S>* pgrid = grad_target(node, 1);
    const S* vi = node.parents[0]->value.data();
    const S* vg = node.parents[1]->value.data();
    S* gi_buf = pimg ? pimg->grad_buffer().data() : nullptr;
    S* gg_buf = pgrid ? pgrid->grad_buffer().data() : nullptr;
    for (int n = 0; n < N; ++n)
      for (int p = 0; p < P; ++p) {
        const std::size_t gi = (static_cast<std::size_t>(n) * P + p) * 2;
        const auto cell = bilinear_cell(vg[gi], vg[gi + 1], H, W);
        S dy = 0, dx = 0;
        for (int c = 0; c < C; ++c) {
          const std::size_t plane = (static_cast<std::size_t>(n) * C + c) * H * W;
          const S g = node.grad[(static_cast<std::size_t>(n) * C + c) * P + p];
          if (gi_buf) {
            S* dst = gi_buf + plane;
            dst[cell.y0 * W + cell.x0] += g * (S(1) - cell.wy) * (S(1) - cell.wx);
            dst[cell.y0 * W + cell.x1] += g * (S(1) - cell.wy) * cell.wx;
            dst[cell.y1 * W + cell.x0] += g * cell.wy * (S(1) - cell.wx);
            dst[cell.y1 * W + cell.x1] += g * cell.wy * cell.wx;
          }
          if (gg_buf) {
            const S* src = vi + plane;
            const S v00 = src[cell.y0 * W + cell.x0], v01 = src[cell.y0 * W + cell.x1];
            const S v10 = src[cell.y1 * W + cell.x0], v11 = src[cell.y1 * W + cell.x1];
            dy += g * ((S(1) - cell.wx) * (v10 - v00) + cell.wx * (v11 - v01));
            dx += g * ((S(1) - cell.wy) * (v01 - v00) + cell.wy * (v11 - v10));
          }
        }
        if (gg_buf) {
          if (cell.y_free && cell.y0 != cell.y1) gg_buf[gi] += dy;
          if (cell.x_free && cell.x0 != cell.x1) gg_buf[gi + 1] += dx;
        }
      }
  });
}

// -- sequence / misc ----------------------------------------------------------

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  require_defined(x, "layer_norm");
  const int D = x.dim(-1);
  require(gamma.ndim() == 1 && gamma.dim(0) == D && beta.ndim() == 1 && beta.dim(0) == D, "layer_norm",
          "gamma/beta must be [" + std::to_string(D) + "]");
  const int rows = static_cast<int>(x.size() / static_cast<std::size_t>(D));
  Tensor<S> y(x.shape());
  Tensor<S> xhat(x.shape());
  std::vector<S> inv_std(static_cast<std::size_t>(rows));
  const auto X = x.value().matrix(rows, D);
  auto Xh = xhat.matrix(rows, D);
  for (int r = 0; r < rows; ++r) {
    const S mu = X.row(r).mean();
    const S var = (X.row(r).array() - mu).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + eps);
    Xh.row(r) = (X.row(r).array() - mu) * inv_std[r];
  }
  y.matrix(rows, D) = (Xh.array().rowwise() * gamma.value().array().transpose()).rowwise() +
                      beta.value().array().transpose();
  return make_op<S>(std::move(y), {x, gamma, beta}, "layer_norm",
                    [rows, D, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<S>& n) {
                      const auto G = n.grad.matrix(rows, D);
                      const auto Xh = xhat.matrix(rows, D);
                      if (Node<S>* pg = grad_target(n, 1)) {
                        pg->grad_buffer().matrix(1, D).row(0) += (G.array() * Xh.array()).colwise().sum().matrix();
                      }
                      if (Node<S>* pb = grad_target(n, 2)) pb->grad_buffer().matrix(1, D).row(0) += G.colwise().sum();
                      if (Node<S>* px = grad_target(n, 0)) {
                        auto GX = px->grad_buffer().matrix(rows, D);
                        const auto gamma = n.parents[1]->value.array();
                        for (int r = 0; r < rows; ++r) {
                          const Eigen::Array<S, 1, Eigen::Dynamic> gh = G.row(r).array() * gamma.transpose();
                          const S m1 = gh.mean();
                          const S m2 = (gh * Xh.row(r).array()).mean();
                          GX.row(r).array() += inv_std[r] * (gh - m1 - Xh.row(r).array() * m2);
                        }
                      }
                    });
}

template <typename S>
Var<S> linear_scan(const Var<S>& a, const Var<S>& b, bool reverse) {
  require_defined(a, "linear_scan");
  require(a.shape() == b.shape() && a.ndim() >= 1, "linear_scan",
          "a " + shape_str(a.shape()) + " and b " + shape_str(b.shape()) + " must match");
  const int L = a.dim(0);
  const std::size_t M = L ? a.size() / static_cast<std::size_t>(L) : 0;
  Tensor<S> h(a.shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  auto at = [&](int t) { return static_cast<std::size_t>(t) * M; };
  for (int s = 0; s < L; ++s) {
    const int t = reverse ? L - 1 - s : s;
    const int prev = reverse ? t + 1 : t - 1;
    for (std::size_t m = 0; m < M; ++m) {
      const S hp = s == 0 ? S(0) : h[at(prev) + m];
      h[at(t) + m] = pa[at(t) + m] * hp + pb[at(t) + m];
    }
  }
  return make_op<S>(std::move(h), {a, b}, "linear_scan", [L, M, reverse](Node<S>& n) {
    Node<S>* na = grad_target(n, 0);
    Node<S>* nb = grad_target(n, 1);
    const S* va = n.parents[0]->value.data();
    S* ga = na ? na->grad_buffer().data() : nullptr;
    S* gb = nb ? nb->grad_buffer().data() : nullptr;
    std::vector<S> carry(M, S(0));
    for (int s = L - 1; s >= 0; --s) {
      const int t = reverse ? L - 1 - s : s;
      const int prev = reverse ? t + 1 : t - 1;
      const std::size_t base = static_cast<std::size_t>(t) * M;
      for (std::size_t m = 0; m < M; ++m) {
        const S gt = n.grad[base + m] + carry[m];
        if (gb) gb[base + m] += gt;
        if (ga && s > 0) ga[base + m] += gt * n.value[static_cast<std::size_t>(prev) * M + m];
        carry[m] = gt * va[base + m];
      }
    }
  });
}

template <typename S>
Var<S> quat_to_rotmat(const Var<S>& q) {
  require(q.ndim() == 1 && q.dim(0) == 4, "quat_to_rotmat", "expects [4], got " + shape_str(q.shape()));
  const S w = q.value()[0], x = q.value()[1], y = q.value()[2], z = q.value()[3];
  Tensor<S> R(Shape{3, 3},
              {S(1) - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
               2 * (x * y + w * z), S(1) - 2 * (x * x + z * z), 2 * (y * z - w * x),
               2 * (x * z - w * y), 2 * (y * z + w * x), S(1) - 2 * (x * x + y * y)});
  return make_op<S>(std::move(R), {q}, "quat_to_rotmat", [](Node<S>& n) {
    Node<S>* p = grad_target(n, 0);
    if (!p) return;
    const S w = p->value[0], x = p->value[1], y = p->value[2], z = p->value[3];
    // d R_ij / d (w, x, y, z), row-major over ij.
    const std::array<std::array<S, 4>, 9> J{{
        {0, 0, -4 * y, -4 * z},
        {-2 * z, 2 * y, 2 * x, -2 * w},
        {2 * y, 2 * z, 2 * w, 2 * x},
        {2 * z, 2 * y, 2 * x, 2 * w},
        {0, -4 * x, 0, -4 * z},
        {-2 * x, -2 * w, 2 * z, 2 * y},
        {-2 * y, 2 * z, -2 * w, 2 * x},
        {2 * x, 2 * w, 2 * z, 2 * y},
        {0, -4 * x, -4 * y, 0},
    }};
    S* g = p->grad_buffer().data();
    for (int ij = 0; ij < 9; ++ij)
      for (int k = 0; k < 4; ++k) g[k] += n.grad[ij] * J[ij][k];
  });
}

#define V2X_INSTANTIATE_OPS(S)                                                              \
  template Var<S> add(const Var<S>&, const Var<S>&);                                      \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                      \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                      \
  template Var<S> div(const Var<S>&, const Var<S>&);                                      \
  template Var<S> scale(const Var<S>&, S);                                                \
  template Var<S> add_scalar(const Var<S>&, S);                                           \
  template Var<S> neg(const Var<S>&);                                                     \
  template Var<S> relu(const Var<S>&);                                                    \
  template Var<S> sigmoid(const Var<S>&);                                                 \
  template Var<S> tanh(const Var<S>&);                                                    \
  template Var<S> exp(const Var<S>&);                                                     \
  template Var<S> log(const Var<S>&);                                                     \
  template Var<S> softplus(const Var<S>&);                                                \
  template Var<S> sqrt(const Var<S>&);                                                    \
  template Var<S> square(const Var<S>&);                                                  \
  template Var<S> abs(const Var<S>&);                                                     \
  template Var<S> acos(const Var<S>&);                                                    \
  template Var<S> clamp(const Var<S>&, S, S);                                             \
  template Var<S> silu(const Var<S>&);                                                    \
  template Var<S> sum(const Var<S>&);                                                     \
  template Var<S> mean(const Var<S>&);                                                    \
  template Var<S> sum(const Var<S>&, int, bool);                                          \
  template Var<S> row_norm(const Var<S>&);                                                \
  template Var<S> reshape(const Var<S>&, Shape);                                          \
  template Var<S> permute(const Var<S>&, const std::vector<int>&);                        \
  template Var<S> transpose(const Var<S>&);                                               \
  template Var<S> slice(const Var<S>&, int, int, int);                                    \
  template Var<S> concat(const std::vector<Var<S>>&, int);                                \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                   \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                    \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, Conv2dOptions);     \
  template Var<S> avg_pool2d(const Var<S>&, int, int);                                    \
  template Var<S> max_pool2d(const Var<S>&, int, int);                                    \
  template Var<S> resize_bilinear(const Var<S>&, int, int);                               \
  template Var<S> grid_sample(const Var<S>&, const Var<S>&);                              \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);             \
  template Var<S> linear_scan(const Var<S>&, const Var<S>&, bool);                        \
  template Var<S> quat_to_rotmat(const Var<S>&);

V2X_INSTANTIATE_OPS(float)
V2X_INSTANTIATE_OPS(double)

}  // namespace v2xcalib::nn
