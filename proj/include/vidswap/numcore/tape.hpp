#pragma once
#include <array>
#include <memory>
#include <vector>

#include "vidswap/numcore/kernels.hpp"
#include "vidswap/numcore/tensor.hpp"

namespace vidswap::numcore {

// Reverse-mode autodiff over a closed op set. Ops evaluate eagerly and record
// a node; backward() replays the tape in reverse. A tape is owned by exactly
// one training step (single writer); leaves copy their tensors in, so the
// originals stay immutable.
template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor<T>& value(Var v) const { return nodes_[v.id].val; }
  const Shape& shape(Var v) const { return nodes_[v.id].val.shape(); }

  Var input(Tensor<T> t, bool requires_grad = false) {
    Node n;
    n.kind = Op::Leaf;
    n.val = std::move(t);
    n.needs_grad = requires_grad && grad_enabled_;
    return push(std::move(n), /*check_finite=*/true);
  }

  Var constant(Tensor<T> t) { return input(std::move(t), false); }

  // ---- elementwise ----
  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Node n = make(Op::Add, a, b, Tensor<T>::uninit(shape(a)));
    kern::ew_add(val(a), val(b), n.val.data(), n.val.numel());
    return push(std::move(n));
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Node n = make(Op::Sub, a, b, Tensor<T>::uninit(shape(a)));
    kern::ew_sub(val(a), val(b), n.val.data(), n.val.numel());
    return push(std::move(n));
  }

  Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Node n = make(Op::Mul, a, b, Tensor<T>::uninit(shape(a)));
    kern::ew_mul(val(a), val(b), n.val.data(), n.val.numel());
    return push(std::move(n));
  }

  Var scale(Var a, T c) {
    Node n = make(Op::Scale, a, Var{}, Tensor<T>::uninit(shape(a)));
    n.attr.scalar = c;
    kern::ew_scale(val(a), c, n.val.data(), n.val.numel());
    return push(std::move(n));
  }

  Var add_scalar(Var a, T c) {
    Node n = make(Op::AddScalar, a, Var{}, Tensor<T>::uninit(shape(a)));
    n.attr.scalar = c;
    const T* x = val(a);
    for (index_t i = 0; i < n.val.numel(); ++i) n.val[i] = x[i] + c;
    return push(std::move(n));
  }

  // ---- linear algebra ----
  Var matmul(Var a, Var b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
      throw ValidationError("matmul shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
    Node n = make(Op::Matmul, a, b, Tensor<T>::uninit({sa[0], sb[1]}));
    kern::gemm_nn(val(a), val(b), n.val.data(), sa[0], sa[1], sb[1]);
    return push(std::move(n));
  }

  // batched matmul on [B,m,k] x [B,k,n]; transpose_b treats b as [B,n,k]
  Var bmm(Var a, Var b, bool transpose_b = false) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0])
      throw ValidationError("bmm shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
    const index_t B = sa[0], m = sa[1], k = sa[2];
    const index_t nn = transpose_b ? sb[1] : sb[2];
    const index_t kb = transpose_b ? sb[2] : sb[1];
    if (kb != k) throw ValidationError("bmm inner extent mismatch");
    Node n = make(Op::Bmm, a, b, Tensor<T>::uninit({B, m, nn}));
    n.attr.flag = transpose_b;
    for (index_t i = 0; i < B; ++i) {
      const T* pa = val(a) + i * m * k;
      const T* pb = val(b) + i * sb[1] * sb[2];
      T* pc = n.val.data() + i * m * nn;
      if (transpose_b)
        kern::gemm_nt(pa, pb, pc, m, k, nn);
      else
        kern::gemm_nn(pa, pb, pc, m, k, nn);
    }
    return push(std::move(n));
  }

  // [n, D] -> [H, n, D/H]
  Var split_heads(Var a, int heads) {
    const Shape& s = shape(a);
    if (s.size() != 2 || s[1] % heads != 0)
      throw ValidationError("split_heads: dim not divisible by heads");
    const index_t n_tok = s[0], dh = s[1] / heads;
    Node n = make(Op::SplitHeads, a, Var{}, Tensor<T>::uninit({heads, n_tok, dh}));
    n.attr.i0 = heads;
    const T* x = val(a);
    for (index_t h = 0; h < heads; ++h)
      for (index_t t = 0; t < n_tok; ++t)
        for (index_t j = 0; j < dh; ++j)
          n.val[(h * n_tok + t) * dh + j] = x[t * s[1] + h * dh + j];
    return push(std::move(n));
  }

  // [m, n] -> [n, m]
  Var transpose2d(Var a) {
    const Shape& s = shape(a);
    if (s.size() != 2) throw ValidationError("transpose2d expects rank 2");
    Node n = make(Op::Transpose2d, a, Var{}, Tensor<T>::uninit({s[1], s[0]}));
    const T* x = val(a);
    for (index_t i = 0; i < s[0]; ++i)
      for (index_t j = 0; j < s[1]; ++j) n.val[j * s[0] + i] = x[i * s[1] + j];
    return push(std::move(n), /*check_finite=*/false);
  }

  // [H, n, dh] -> [n, H*dh]
  Var merge_heads(Var a) {
    const Shape& s = shape(a);
    if (s.size() != 3) throw ValidationError("merge_heads expects rank 3");
    const index_t H = s[0], n_tok = s[1], dh = s[2];
    Node n = make(Op::MergeHeads, a, Var{}, Tensor<T>::uninit({n_tok, H * dh}));
    const T* x = val(a);
    for (index_t h = 0; h < H; ++h)
      for (index_t t = 0; t < n_tok; ++t)
        for (index_t j = 0; j < dh; ++j)
          n.val[t * H * dh + h * dh + j] = x[(h * n_tok + t) * dh + j];
    return push(std::move(n));
  }

  // ---- normalization / activation ----
  Var softmax_lastdim(Var a) {
    const Shape& s = shape(a);
    if (s.empty() || s.back() < 1) throw ValidationError("softmax: empty last dim");
    const index_t d = s.back();
    const index_t rows = shape_numel(s) / d;
    Node n = make(Op::Softmax, a, Var{}, Tensor<T>::uninit(s));
    kern::softmax_rows(val(a), n.val.data(), rows, d);
    return push(std::move(n));
  }

  Var layernorm_lastdim(Var a, T eps = static_cast<T>(1e-5)) {
    const Shape& s = shape(a);
    const index_t d = s.back();
    const index_t rows = shape_numel(s) / d;
    Node n = make(Op::LayerNorm, a, Var{}, Tensor<T>::uninit(s));
    n.attr.aux = Tensor<T>::uninit({rows});
    kern::layernorm_rows(val(a), n.val.data(), n.attr.aux.data(), rows, d, eps);
    return push(std::move(n));
  }

  // affine layernorm: ln(x) * gain + bias, broadcast over rows
  Var layernorm_affine(Var a, Var gain, Var bias, T eps = static_cast<T>(1e-5)) {
    return add_rowvec(mul_rowvec(layernorm_lastdim(a, eps), gain), bias);
  }

  Var gelu(Var a) {
    Node n = make(Op::Gelu, a, Var{}, Tensor<T>::uninit(shape(a)));
    kern::ew_gelu(val(a), n.val.data(), n.val.numel());
    return push(std::move(n));
  }

  Var silu(Var a) {
    Node n = make(Op::Silu, a, Var{}, Tensor<T>::uninit(shape(a)));
    kern::ew_silu(val(a), n.val.data(), n.val.numel());
    return push(std::move(n));
  }

  // ---- rotary embedding: x[n,d], one (chunk,row,col) triple per token ----
  Var rope_rotate(Var a, std::shared_ptr<const std::vector<std::array<int, 3>>> idx) {
    const Shape& s = shape(a);
    if (s.size() != 2) throw ValidationError("rope_rotate expects [n,d]");
    if (s[1] % 6 != 0) throw ValidationError("rope_rotate: d must be divisible by 6");
    if (static_cast<index_t>(idx->size()) != s[0])
      throw ValidationError("rope_rotate: one index triple per token required");
    Node n = make(Op::Rope, a, Var{}, Tensor<T>::uninit(s));
    n.attr.rope_idx = idx;
    kern::rope_rows(val(a), n.val.data(), idx->data(), s[0], s[1], +1);
    return push(std::move(n));
  }

  // ---- conv ----
  Var conv2d(Var x, Var w, Var bias, int stride, int pad) {
    const Shape& sx = shape(x);
    const Shape& sw = shape(w);
    if (sx.size() != 3 || sw.size() != 4 || sx[0] != sw[1])
      throw ValidationError("conv2d shape mismatch " + shape_str(sx) + " w " + shape_str(sw));
    const index_t ho = kern::conv_out(sx[1], sw[2], stride, pad);
    const index_t wo = kern::conv_out(sx[2], sw[3], stride, pad);
    if (ho <= 0 || wo <= 0) throw ValidationError("conv2d: empty output");
    Node n = make(Op::Conv2d, x, w, Tensor<T>::uninit({sw[0], ho, wo}));
    n.in[2] = bias.id;
    n.attr.i0 = stride;
    n.attr.i1 = pad;
    kern::conv2d(val(x), val(w), bias.valid() ? val(bias) : nullptr, n.val.data(), sx[0], sx[1],
                 sx[2], sw[0], sw[2], sw[3], stride, pad);
    return push(std::move(n));
  }

  // ---- broadcast over rows: x[..., D] (+|*) v[D] ----
  Var add_rowvec(Var x, Var v) {
    const Shape& sx = shape(x);
    const Shape& sv = shape(v);
    if (sv.size() != 1 || sv[0] != sx.back()) throw ValidationError("add_rowvec shape mismatch");
    Node n = make(Op::AddRowvec, x, v, Tensor<T>::uninit(sx));
    const index_t d = sx.back(), rows = shape_numel(sx) / d;
    const T* px = val(x);
    const T* pv = val(v);
    for (index_t r = 0; r < rows; ++r)
      for (index_t j = 0; j < d; ++j) n.val[r * d + j] = px[r * d + j] + pv[j];
    return push(std::move(n));
  }

  Var mul_rowvec(Var x, Var v) {
    const Shape& sx = shape(x);
    const Shape& sv = shape(v);
    if (sv.size() != 1 || sv[0] != sx.back()) throw ValidationError("mul_rowvec shape mismatch");
    Node n = make(Op::MulRowvec, x, v, Tensor<T>::uninit(sx));
    const index_t d = sx.back(), rows = shape_numel(sx) / d;
    const T* px = val(x);
    const T* pv = val(v);
    for (index_t r = 0; r < rows; ++r)
      for (index_t j = 0; j < d; ++j) n.val[r * d + j] = px[r * d + j] * pv[j];
    return push(std::move(n));
  }

  // ---- structural ----
  Var concat(Var a, Var b, int axis) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != sb.size()) throw ValidationError("concat rank mismatch");
    for (std::size_t i = 0; i < sa.size(); ++i)
      if (static_cast<int>(i) != axis && sa[i] != sb[i])
        throw ValidationError("concat extent mismatch off-axis");
    Shape so = sa;
    so[axis] += sb[axis];
    Node n = make(Op::Concat, a, b, Tensor<T>::uninit(so));
    n.attr.i0 = axis;
    const auto [outer, la, inner] = split3(sa, axis);
    const index_t lb = sb[axis];
    const T* pa = val(a);
    const T* pb = val(b);
    for (index_t o = 0; o < outer; ++o) {
      T* dst = n.val.data() + o * (la + lb) * inner;
      std::copy(pa + o * la * inner, pa + (o + 1) * la * inner, dst);
      std::copy(pb + o * lb * inner, pb + (o + 1) * lb * inner, dst + la * inner);
    }
    return push(std::move(n));
  }

  Var slice(Var a, int axis, index_t start, index_t len) {
    const Shape& sa = shape(a);
    if (axis < 0 || axis >= static_cast<int>(sa.size()) || start < 0 || len <= 0 ||
        start + len > sa[axis])
      throw ValidationError("slice out of range");
    Shape so = sa;
    so[axis] = len;
    Node n = make(Op::Slice, a, Var{}, Tensor<T>::uninit(so));
    n.attr.i0 = axis;
    n.attr.i1 = static_cast<int>(start);
    n.attr.i2 = static_cast<int>(len);
    const auto [outer, l, inner] = split3(sa, axis);
    const T* pa = val(a);
    for (index_t o = 0; o < outer; ++o)
      std::copy(pa + (o * l + start) * inner, pa + (o * l + start + len) * inner,
                n.val.data() + o * len * inner);
    return push(std::move(n));
  }

  Var reshape(Var a, Shape s) {
    Node n = make(Op::Reshape, a, Var{}, value(a).reshaped(std::move(s)));
    n.attr.shape = shape(a);
    return push(std::move(n), /*check_finite=*/false);
  }

  // replicate rows of src[G,D] into [n,D] according to group-of-row map;
  // backward sums gradients per group
  Var expand_rows(Var src, std::shared_ptr<const std::vector<int>> groups) {
    const Shape& s = shape(src);
    if (s.size() != 2) throw ValidationError("expand_rows expects [G,D]");
    const index_t n_out = static_cast<index_t>(groups->size());
    Node n = make(Op::ExpandRows, src, Var{}, Tensor<T>::uninit({n_out, s[1]}));
    n.attr.groups = groups;
    const T* p = val(src);
    for (index_t r = 0; r < n_out; ++r) {
      const int g = (*groups)[r];
      std::copy(p + g * s[1], p + (g + 1) * s[1], n.val.data() + r * s[1]);
    }
    return push(std::move(n), /*check_finite=*/false);
  }

  // ---- reductions ----
  Var sum_all(Var a) {
    Node n = make(Op::SumAll, a, Var{}, Tensor<T>({1}));
    n.val[0] = static_cast<T>(kern::sum_all(val(a), value(a).numel()));
    return push(std::move(n));
  }

  Var mean_all(Var a) {
    Node n = make(Op::MeanAll, a, Var{}, Tensor<T>({1}));
    n.val[0] = static_cast<T>(kern::sum_all(val(a), value(a).numel()) /
                              static_cast<double>(value(a).numel()));
    return push(std::move(n));
  }

  Var mean_lastdim(Var a) {
    const Shape& s = shape(a);
    const index_t d = s.back();
    const index_t rows = shape_numel(s) / d;
    Shape so(s.begin(), s.end() - 1);
    if (so.empty()) so = {1};
    Node n = make(Op::MeanLast, a, Var{}, Tensor<T>::uninit(so));
    const T* p = val(a);
    for (index_t r = 0; r < rows; ++r) {
      double acc = 0;
      for (index_t j = 0; j < d; ++j) acc += static_cast<double>(p[r * d + j]);
      n.val[r] = static_cast<T>(acc / static_cast<double>(d));
    }
    return push(std::move(n));
  }

  Var var_lastdim(Var a) {
    const Shape& s = shape(a);
    const index_t d = s.back();
    const index_t rows = shape_numel(s) / d;
    Shape so(s.begin(), s.end() - 1);
    if (so.empty()) so = {1};
    Node n = make(Op::VarLast, a, Var{}, Tensor<T>::uninit(so));
    const T* p = val(a);
    for (index_t r = 0; r < rows; ++r) {
      double mean = 0;
      for (index_t j = 0; j < d; ++j) mean += static_cast<double>(p[r * d + j]);
      mean /= static_cast<double>(d);
      double acc = 0;
      for (index_t j = 0; j < d; ++j) {
        const double c = static_cast<double>(p[r * d + j]) - mean;
        acc += c * c;
      }
      n.val[r] = static_cast<T>(acc / static_cast<double>(d));
    }
    return push(std::move(n));
  }

  // mean squared error between two same-shaped vars
  Var mse(Var a, Var b) {
    Var d = sub(a, b);
    return mean_all(mul(d, d));
  }

  // ---- backward ----
  void backward(Var loss) {
    if (!grad_enabled_) throw ValidationError("backward on a no-grad tape");
    if (value(loss).numel() != 1) throw ValidationError("backward expects scalar loss");
    grads_.assign(nodes_.size(), Tensor<T>());
    grads_[loss.id] = Tensor<T>::full(shape(loss), T(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || grads_[i].empty()) continue;
      backward_node(i, n);
    }
  }

  const Tensor<T>& grad(Var v) const {
    if (grads_.empty() || grads_[v.id].empty())
      throw ValidationError("no gradient recorded for this var");
    return grads_[v.id];
  }

  bool has_grad(Var v) const { return !grads_.empty() && !grads_[v.id].empty(); }

 private:
  enum class Op {
    Leaf, Add, Sub, Mul, Scale, AddScalar, Matmul, Bmm, SplitHeads, MergeHeads, Transpose2d,
    Softmax, LayerNorm, Gelu, Silu, Rope, Conv2d, AddRowvec, MulRowvec,
    Concat, Slice, Reshape, ExpandRows, SumAll, MeanAll, MeanLast, VarLast,
  };

  struct Attr {
    T scalar{};
    int i0 = 0, i1 = 0, i2 = 0;
    bool flag = false;
    Shape shape;
    std::shared_ptr<const std::vector<std::array<int, 3>>> rope_idx;
    std::shared_ptr<const std::vector<int>> groups;
    Tensor<T> aux;
  };

  struct Node {
    Op kind = Op::Leaf;
    std::array<int, 3> in{-1, -1, -1};
    bool needs_grad = false;
    Tensor<T> val;
    Attr attr;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;

  const T* val(Var v) const { return nodes_[v.id].val.data(); }

  Node make(Op kind, Var a, Var b, Tensor<T> out) {
    Node n;
    n.kind = kind;
    n.in = {a.id, b.id, -1};
    n.needs_grad = grad_enabled_ && ((a.valid() && nodes_[a.id].needs_grad) ||
                                     (b.valid() && nodes_[b.id].needs_grad));
    n.val = std::move(out);
    return n;
  }

  Var push(Node n, bool check_finite = true) {
    if (check_finite && !kern::all_finite(n.val.data(), n.val.numel()))
      throw NumericError("non-finite value produced by tape op");
    // conv bias participates in needs_grad too
    if (n.kind == Op::Conv2d && n.in[2] >= 0 && nodes_[n.in[2]].needs_grad) n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  void check_same_shape(Var a, Var b, const char* what) const {
    if (!value(a).same_shape(value(b)))
      throw ValidationError(std::string(what) + " shape mismatch " + shape_str(shape(a)) +
                            " vs " + shape_str(shape(b)));
  }

  static std::tuple<index_t, index_t, index_t> split3(const Shape& s, int axis) {
    index_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[axis], inner};
  }

  Tensor<T>& acc(int id, const Shape& s) {
    if (grads_[id].empty()) grads_[id] = Tensor<T>(s);
    return grads_[id];
  }

  // move-in for the first contribution, axpy after; skips a zero-fill pass
  void add_grad_tensor(int id, Tensor<T>&& t) {
    if (grads_[id].empty()) {
      grads_[id] = std::move(t);
      return;
    }
    kern::ew_axpy(T(1), t.data(), grads_[id].data(), grads_[id].numel());
  }

  void add_grad_scaled(int id, const Tensor<T>& t, T s) {
    if (grads_[id].empty()) {
      Tensor<T> g0 = Tensor<T>::uninit(t.shape());
      kern::ew_scale(t.data(), s, g0.data(), t.numel());
      grads_[id] = std::move(g0);
      return;
    }
    kern::ew_axpy(s, t.data(), grads_[id].data(), t.numel());
  }

  bool wants(int id) const { return id >= 0 && nodes_[id].needs_grad; }

  void backward_node(int i, Node& n) {
    const Tensor<T>& g = grads_[i];
    const int ia = n.in[0], ib = n.in[1], ic = n.in[2];
    switch (n.kind) {
      case Op::Leaf:
        break;
      case Op::Add: {
        if (wants(ia)) add_grad_scaled(ia, g, T(1));
        if (wants(ib)) add_grad_scaled(ib, g, T(1));
        break;
      }
      case Op::Sub: {
        if (wants(ia)) add_grad_scaled(ia, g, T(1));
        if (wants(ib)) add_grad_scaled(ib, g, T(-1));
        break;
      }
      case Op::Mul: {
        if (wants(ia)) {
          Tensor<T>& ga = acc(ia, shape_of(ia));
          const T* pb = nodes_[ib].val.data();
          for (index_t j = 0; j < g.numel(); ++j) ga[j] += g[j] * pb[j];
        }
        if (wants(ib)) {
          Tensor<T>& gb = acc(ib, shape_of(ib));
          const T* pa = nodes_[ia].val.data();
          for (index_t j = 0; j < g.numel(); ++j) gb[j] += g[j] * pa[j];
        }
        break;
      }
      case Op::Scale: {
        if (wants(ia)) add_grad_scaled(ia, g, n.attr.scalar);
        break;
      }
      case Op::AddScalar: {
        if (wants(ia)) add_grad_scaled(ia, g, T(1));
        break;
      }
      case Op::Matmul: {
        const Shape& sa = shape_of(ia);
        const Shape& sb = shape_of(ib);
        const index_t m = sa[0], k = sa[1], nn = sb[1];
        if (wants(ia)) {
          Tensor<T> tmp = Tensor<T>::uninit({m, k});
          kern::gemm_nt(g.data(), nodes_[ib].val.data(), tmp.data(), m, nn, k);
          add_grad_tensor(ia, std::move(tmp));
        }
        if (wants(ib)) {
          Tensor<T> tmp = Tensor<T>::uninit({k, nn});
          kern::gemm_tn(nodes_[ia].val.data(), g.data(), tmp.data(), k, m, nn);
          add_grad_tensor(ib, std::move(tmp));
        }
        break;
      }
      case Op::Bmm: {
        const Shape& sa = shape_of(ia);
        const Shape& sb = shape_of(ib);
        const index_t B = sa[0], m = sa[1], k = sa[2];
        const index_t nn = n.val.shape()[2];
        const bool tb = n.attr.flag;
        if (wants(ia)) {
          Tensor<T> ga = Tensor<T>::uninit(sa);
          for (index_t bi = 0; bi < B; ++bi) {
            const T* pg = g.data() + bi * m * nn;
            const T* pb = nodes_[ib].val.data() + bi * sb[1] * sb[2];
            if (tb)
              kern::gemm_nn(pg, pb, ga.data() + bi * m * k, m, nn, k);  // G[m,n] * B[n,k]
            else
              kern::gemm_nt(pg, pb, ga.data() + bi * m * k, m, nn, k);  // G[m,n] * B[k,n]^T
          }
          add_grad_tensor(ia, std::move(ga));
        }
        if (wants(ib)) {
          Tensor<T> gb = Tensor<T>::uninit(sb);
          for (index_t bi = 0; bi < B; ++bi) {
            const T* pg = g.data() + bi * m * nn;
            const T* pa = nodes_[ia].val.data() + bi * m * k;
            if (tb)
              kern::gemm_tn(pg, pa, gb.data() + bi * sb[1] * sb[2], nn, m, k);
            else
              kern::gemm_tn(pa, pg, gb.data() + bi * sb[1] * sb[2], k, m, nn);
          }
          add_grad_tensor(ib, std::move(gb));
        }
        break;
      }
      case Op::SplitHeads: {
        if (!wants(ia)) break;
        const Shape& sa = shape_of(ia);
        const index_t n_tok = sa[0], D = sa[1];
        const int H = n.attr.i0;
        const index_t dh = D / H;
        Tensor<T>& ga = acc(ia, sa);
        for (index_t h = 0; h < H; ++h)
          for (index_t t = 0; t < n_tok; ++t)
            for (index_t j = 0; j < dh; ++j)
              ga[t * D + h * dh + j] += g[(h * n_tok + t) * dh + j];
        break;
      }
      case Op::Transpose2d: {
        if (!wants(ia)) break;
        const Shape& sa = shape_of(ia);
        Tensor<T>& ga = acc(ia, sa);
        for (index_t i = 0; i < sa[0]; ++i)
          for (index_t j = 0; j < sa[1]; ++j) ga[i * sa[1] + j] += g[j * sa[0] + i];
        break;
      }
      case Op::MergeHeads: {
        if (!wants(ia)) break;
        const Shape& sa = shape_of(ia);
        const index_t H = sa[0], n_tok = sa[1], dh = sa[2];
        Tensor<T>& ga = acc(ia, sa);
        for (index_t h = 0; h < H; ++h)
          for (index_t t = 0; t < n_tok; ++t)
            for (index_t j = 0; j < dh; ++j)
              ga[(h * n_tok + t) * dh + j] += g[t * H * dh + h * dh + j];
        break;
      }
      case Op::Softmax: {
        if (!wants(ia)) break;
        const index_t d = n.val.shape().back();
        const index_t rows = n.val.numel() / d;
        Tensor<T> tmp = Tensor<T>::uninit(n.val.shape());
        kern::softmax_rows_backward(n.val.data(), g.data(), tmp.data(), rows, d);
        add_grad_tensor(ia, std::move(tmp));
        break;
      }
      case Op::LayerNorm: {
        if (!wants(ia)) break;
        const index_t d = n.val.shape().back();
        const index_t rows = n.val.numel() / d;
        Tensor<T> tmp = Tensor<T>::uninit(n.val.shape());
        kern::layernorm_rows_backward(n.val.data(), n.attr.aux.data(), g.data(), tmp.data(), rows, d);
        add_grad_tensor(ia, std::move(tmp));
        break;
      }
      case Op::Gelu: {
        if (!wants(ia)) break;
        Tensor<T> tmp = Tensor<T>::uninit(n.val.shape());
        kern::ew_gelu_backward(nodes_[ia].val.data(), g.data(), tmp.data(), tmp.numel());
        add_grad_tensor(ia, std::move(tmp));
        break;
      }
      case Op::Silu: {
        if (!wants(ia)) break;
        Tensor<T> tmp = Tensor<T>::uninit(n.val.shape());
        kern::ew_silu_backward(nodes_[ia].val.data(), g.data(), tmp.data(), tmp.numel());
        add_grad_tensor(ia, std::move(tmp));
        break;
      }
      case Op::Rope: {
        if (!wants(ia)) break;
        const Shape& s = n.val.shape();
        Tensor<T> tmp = Tensor<T>::uninit(s);
        kern::rope_rows(g.data(), tmp.data(), n.attr.rope_idx->data(), s[0], s[1], -1);
        add_grad_tensor(ia, std::move(tmp));
        break;
      }
      case Op::Conv2d: {
        const Shape& sx = shape_of(ia);
        const Shape& sw = shape_of(ib);
        const int stride = n.attr.i0, pad = n.attr.i1;
        if (wants(ia)) {
          Tensor<T> tmp = Tensor<T>::uninit(sx);
          kern::conv2d_backward_input(g.data(), nodes_[ib].val.data(), tmp.data(), sx[0], sx[1],
                                      sx[2], sw[0], sw[2], sw[3], stride, pad);
          add_grad_tensor(ia, std::move(tmp));
        }
        if (wants(ib) || (ic >= 0 && wants(ic))) {
          Tensor<T> gw = Tensor<T>::uninit(sw);
          Tensor<T> gb = Tensor<T>::uninit({sw[0]});
          kern::conv2d_backward_weight(nodes_[ia].val.data(), g.data(), gw.data(),
                                       ic >= 0 ? gb.data() : nullptr, sx[0], sx[1], sx[2], sw[0],
                                       sw[2], sw[3], stride, pad);
          if (wants(ib)) add_grad_tensor(ib, std::move(gw));
          if (ic >= 0 && wants(ic)) add_grad_tensor(ic, std::move(gb));
        }
        break;
      }
      case Op::AddRowvec: {
        const index_t d = n.val.shape().back();
        const index_t rows = n.val.numel() / d;
        if (wants(ia)) kern::ew_axpy(T(1), g.data(), acc(ia, shape_of(ia)).data(), g.numel());
        if (wants(ib)) {
          Tensor<T>& gv = acc(ib, shape_of(ib));
          for (index_t r = 0; r < rows; ++r)
            for (index_t j = 0; j < d; ++j) gv[j] += g[r * d + j];
        }
        break;
      }
      case Op::MulRowvec: {
        const index_t d = n.val.shape().back();
        const index_t rows = n.val.numel() / d;
        if (wants(ia)) {
          Tensor<T>& gx = acc(ia, shape_of(ia));
          const T* pv = nodes_[ib].val.data();
          for (index_t r = 0; r < rows; ++r)
            for (index_t j = 0; j < d; ++j) gx[r * d + j] += g[r * d + j] * pv[j];
        }
        if (wants(ib)) {
          Tensor<T>& gv = acc(ib, shape_of(ib));
          const T* px = nodes_[ia].val.data();
          for (index_t r = 0; r < rows; ++r)
            for (index_t j = 0; j < d; ++j) gv[j] += g[r * d + j] * px[r * d + j];
        }
        break;
      }
      case Op::Concat: {
        const int axis = n.attr.i0;
        const Shape& sa = shape_of(ia);
        const Shape& sb = shape_of(ib);
        const auto [outer, la, inner] = split3(sa, axis);
        const index_t lb = sb[axis];
        if (wants(ia)) {
          Tensor<T>& ga = acc(ia, sa);
          for (index_t o = 0; o < outer; ++o)
            for (index_t j = 0; j < la * inner; ++j)
              ga[o * la * inner + j] += g[o * (la + lb) * inner + j];
        }
        if (wants(ib)) {
          Tensor<T>& gb = acc(ib, sb);
          for (index_t o = 0; o < outer; ++o)
            for (index_t j = 0; j < lb * inner; ++j)
              gb[o * lb * inner + j] += g[(o * (la + lb) + la) * inner + j];
        }
        break;
      }
      case Op::Slice: {
        if (!wants(ia)) break;
        const int axis = n.attr.i0;
        const index_t start = n.attr.i1, len = n.attr.i2;
        const Shape& sa = shape_of(ia);
        const auto [outer, l, inner] = split3(sa, axis);
        Tensor<T>& ga = acc(ia, sa);
        for (index_t o = 0; o < outer; ++o)
          for (index_t j = 0; j < len * inner; ++j)
            ga[(o * l + start) * inner + j] += g[o * len * inner + j];
        break;
      }
      case Op::Reshape: {
        if (!wants(ia)) break;
        if (grads_[ia].empty())
          grads_[ia] = g.reshaped(shape_of(ia));
        else
          kern::ew_axpy(T(1), g.data(), grads_[ia].data(), g.numel());
        break;
      }
      case Op::ExpandRows: {
        if (!wants(ia)) break;
        const Shape& sa = shape_of(ia);
        const index_t d = sa[1];
        Tensor<T>& ga = acc(ia, sa);
        const auto& groups = *n.attr.groups;
        for (index_t r = 0; r < static_cast<index_t>(groups.size()); ++r)
          for (index_t j = 0; j < d; ++j) ga[groups[r] * d + j] += g[r * d + j];
        break;
      }
      case Op::SumAll: {
        if (!wants(ia)) break;
        Tensor<T>& ga = acc(ia, shape_of(ia));
        for (index_t j = 0; j < ga.numel(); ++j) ga[j] += g[0];
        break;
      }
      case Op::MeanAll: {
        if (!wants(ia)) break;
        Tensor<T>& ga = acc(ia, shape_of(ia));
        const T s = g[0] / static_cast<T>(ga.numel());
        for (index_t j = 0; j < ga.numel(); ++j) ga[j] += s;
        break;
      }
      case Op::MeanLast: {
        if (!wants(ia)) break;
        const Shape& sa = shape_of(ia);
        const index_t d = sa.back();
        const index_t rows = shape_numel(sa) / d;
        Tensor<T>& ga = acc(ia, sa);
        for (index_t r = 0; r < rows; ++r) {
          const T s = g[r] / static_cast<T>(d);
          for (index_t j = 0; j < d; ++j) ga[r * d + j] += s;
        }
        break;
      }
      case Op::VarLast: {
        if (!wants(ia)) break;
        const Shape& sa = shape_of(ia);
        const index_t d = sa.back();
        const index_t rows = shape_numel(sa) / d;
        const T* px = nodes_[ia].val.data();
        Tensor<T>& ga = acc(ia, sa);
        for (index_t r = 0; r < rows; ++r) {
          T mean = T(0);
          for (index_t j = 0; j < d; ++j) mean += px[r * d + j];
          mean /= static_cast<T>(d);
          const T s = g[r] * T(2) / static_cast<T>(d);
          for (index_t j = 0; j < d; ++j) ga[r * d + j] += s * (px[r * d + j] - mean);
        }
        break;
      }
    }
  }

  const Shape& shape_of(int id) const { return nodes_[id].val.shape(); }
};

}  // namespace vidswap::numcore
