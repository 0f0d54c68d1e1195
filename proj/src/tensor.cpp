#include "emo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace emo::ad {

const std::vector<double>& Tensor::val() const { return tape->node(id).val; }
const Shape& Tensor::shape() const { return tape->node(id).shape; }
int Tensor::numel() const { return tape->node(id).shape.numel; }
double Tensor::scalar() const {
  const Node& n = tape->node(id);
  if (n.shape.numel != 1) throw DimensionError("scalar() on non-scalar tensor");
  return n.val[0];
}
std::span<const double> Tensor::grad() const { return tape->node(id).grad; }

Tensor Tape::emit(Shape s, bool needs_grad) {
  Node n;
  n.shape = s;
  n.val.assign(static_cast<size_t>(s.numel), 0.0);
  n.needs_grad = needs_grad;
  if (needs_grad) n.grad.assign(static_cast<size_t>(s.numel), 0.0);
  nodes_.push_back(std::move(n));
  return Tensor{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor Tape::leaf(Shape s, const double* data, bool needs_grad) {
  Tensor t = emit(s, needs_grad);
  std::copy(data, data + s.numel, node(t.id).val.begin());
  return t;
}

Tensor Tape::zeros(Shape s, bool needs_grad) { return emit(s, needs_grad); }

void Tape::backward(Tensor loss) {
  if (loss.tape != this) throw DimensionError("backward: tensor from another tape");
  Node& ln = node(loss.id);
  if (ln.shape.numel != 1) throw DimensionError("backward: loss must be scalar");
  if (!ln.needs_grad) return;
  ln.grad[0] += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && n.back) n.back();
  }
}

namespace {

bool any_grad(std::initializer_list<Tensor> ts) {
  for (const Tensor& t : ts)
    if (t.tape->node(t.id).needs_grad) return true;
  return false;
}

void require_same_shape(Tensor a, Tensor b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw DimensionError(std::string(op) + ": shape mismatch");
}

struct Ref {
  Tape* tp;
  int out, a = -1, b = -1;
  Node& o() const { return tp->node(out); }
  Node& pa() const { return tp->node(a); }
  Node& pb() const { return tp->node(b); }
};

}  // namespace

// ---------------- elementwise ----------------

Tensor add(Tensor a, Tensor b) {
  require_same_shape(a, b, "add");
  Tape* tp = a.tape;
  Tensor out = tp->emit(a.shape(), any_grad({a, b}));
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  const auto& bv = b.val();
  for (size_t i = 0; i < av.size(); ++i) o.val[i] = av[i] + bv[i];
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id, b.id};
    o.back = [r] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      Node& B = r.pb();
      if (A.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i];
      if (B.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i];
    };
  }
  return out;
}

Tensor sub(Tensor a, Tensor b) {
  require_same_shape(a, b, "sub");
  Tape* tp = a.tape;
  Tensor out = tp->emit(a.shape(), any_grad({a, b}));
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  const auto& bv = b.val();
  for (size_t i = 0; i < av.size(); ++i) o.val[i] = av[i] - bv[i];
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id, b.id};
    o.back = [r] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      Node& B = r.pb();
      if (A.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i];
      if (B.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) B.grad[i] -= g[i];
    };
  }
  return out;
}

Tensor mul(Tensor a, Tensor b) {
  require_same_shape(a, b, "mul");
  Tape* tp = a.tape;
  Tensor out = tp->emit(a.shape(), any_grad({a, b}));
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  const auto& bv = b.val();
  for (size_t i = 0; i < av.size(); ++i) o.val[i] = av[i] * bv[i];
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id, b.id};
    o.back = [r] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      Node& B = r.pb();
      if (A.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * B.val[i];
      if (B.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i] * A.val[i];
    };
  }
  return out;
}

Tensor div(Tensor a, Tensor b) {
  require_same_shape(a, b, "div");
  Tape* tp = a.tape;
  Tensor out = tp->emit(a.shape(), any_grad({a, b}));
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  const auto& bv = b.val();
  for (size_t i = 0; i < av.size(); ++i) o.val[i] = av[i] / bv[i];
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id, b.id};
    o.back = [r] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      Node& B = r.pb();
      const auto& ov = r.o().val;
      if (A.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] / B.val[i];
      if (B.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) B.grad[i] -= g[i] * ov[i] / B.val[i];
    };
  }
  return out;
}

Tensor affine(Tensor a, double scale, double shift) {
  Tape* tp = a.tape;
  Tensor out = tp->emit(a.shape(), a.tape->node(a.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  for (size_t i = 0; i < av.size(); ++i) o.val[i] = scale * av[i] + shift;
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id};
    o.back = [r, scale] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      for (size_t i = 0; i < g.size(); ++i) A.grad[i] += scale * g[i];
    };
  }
  return out;
}

namespace {

template <typename F, typename DF>
Tensor unary(Tensor a, F f, DF df) {
  Tape* tp = a.tape;
  Tensor out = tp->emit(a.shape(), tp->node(a.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  for (size_t i = 0; i < av.size(); ++i) o.val[i] = f(av[i]);
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id};
    o.back = [r, df] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      const auto& ov = r.o().val;
      for (size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * df(A.val[i], ov[i]);
    };
  }
  return out;
}

}  // namespace

Tensor tanh_(Tensor a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}
Tensor sigmoid_(Tensor a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}
Tensor relu(Tensor a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
Tensor exp_(Tensor a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}
Tensor log_(Tensor a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}
Tensor sqrt_(Tensor a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}
Tensor abs_(Tensor a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}
Tensor clamp(Tensor a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor vec_scale(Tensor v, Tensor s) {
  if (s.numel() != 1) throw DimensionError("vec_scale: scale must be scalar");
  Tape* tp = v.tape;
  Tensor out = tp->emit(v.shape(), any_grad({v, s}));
  Node& o = tp->node(out.id);
  const auto& vv = v.val();
  const double sv = s.val()[0];
  for (size_t i = 0; i < vv.size(); ++i) o.val[i] = vv[i] * sv;
  if (o.needs_grad) {
    Ref r{tp, out.id, v.id, s.id};
    o.back = [r] {
      const auto& g = r.o().grad;
      Node& V = r.pa();
      Node& S = r.pb();
      if (V.needs_grad)
        for (size_t i = 0; i < g.size(); ++i) V.grad[i] += g[i] * S.val[0];
      if (S.needs_grad) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g[i] * V.val[i];
        S.grad[0] += acc;
      }
    };
  }
  return out;
}

// ---------------- reductions ----------------

Tensor sum(Tensor a) {
  Tape* tp = a.tape;
  Tensor out = tp->emit(Shape{1}, tp->node(a.id).needs_grad);
  Node& o = tp->node(out.id);
  double acc = 0.0;
  for (double x : a.val()) acc += x;
  o.val[0] = acc;
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id};
    o.back = [r] {
      double g = r.o().grad[0];
      Node& A = r.pa();
      for (double& gi : A.grad) gi += g;
    };
  }
  return out;
}

Tensor mean(Tensor a) { return mul_scalar(sum(a), 1.0 / a.numel()); }

Tensor dot(Tensor a, Tensor b) {
  require_same_shape(a, b, "dot");
  Tape* tp = a.tape;
  Tensor out = tp->emit(Shape{1}, any_grad({a, b}));
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  const auto& bv = b.val();
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  o.val[0] = acc;
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id, b.id};
    o.back = [r] {
      double g = r.o().grad[0];
      Node& A = r.pa();
      Node& B = r.pb();
      if (A.needs_grad)
        for (size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += g * B.val[i];
      if (B.needs_grad)
        for (size_t i = 0; i < B.grad.size(); ++i) B.grad[i] += g * A.val[i];
    };
  }
  return out;
}

Tensor norm2(Tensor a, double eps) {
  return sqrt_(add_scalar(dot(a, a), eps));
}

// ---------------- structure ----------------

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Tape* tp = parts[0].tape;
  int total = 0;
  bool ng = false;
  for (const Tensor& p : parts) {
    total += p.numel();
    ng = ng || tp->node(p.id).needs_grad;
  }
  Tensor out = tp->emit(Shape{total}, ng);
  Node& o = tp->node(out.id);
  int off = 0;
  std::vector<int> ids;
  std::vector<int> offs;
  for (const Tensor& p : parts) {
    const auto& pv = p.val();
    std::copy(pv.begin(), pv.end(), o.val.begin() + off);
    ids.push_back(p.id);
    offs.push_back(off);
    off += p.numel();
  }
  if (o.needs_grad) {
    int out_id = out.id;
    o.back = [tp, out_id, ids, offs] {
      const auto& g = tp->node(out_id).grad;
      for (size_t k = 0; k < ids.size(); ++k) {
        Node& P = tp->node(ids[k]);
        if (!P.needs_grad) continue;
        for (size_t i = 0; i < P.grad.size(); ++i)
          P.grad[i] += g[static_cast<size_t>(offs[k]) + i];
      }
    };
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts) {
  std::vector<Tensor> v(parts);
  return concat(std::span<const Tensor>(v));
}

Tensor slice(Tensor a, int offset, int len) {
  if (offset < 0 || len < 0 || offset + len > a.numel())
    throw DimensionError("slice: out of range");
  Tape* tp = a.tape;
  Tensor out = tp->emit(Shape{len}, tp->node(a.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  std::copy(av.begin() + offset, av.begin() + offset + len, o.val.begin());
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id};
    o.back = [r, offset] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      for (size_t i = 0; i < g.size(); ++i) A.grad[static_cast<size_t>(offset) + i] += g[i];
    };
  }
  return out;
}

Tensor reshape(Tensor a, Shape s) {
  if (s.numel != a.numel()) throw DimensionError("reshape: element count mismatch");
  Tape* tp = a.tape;
  Tensor out = tp->emit(s, tp->node(a.id).needs_grad);
  Node& o = tp->node(out.id);
  o.val = a.val();
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id};
    o.back = [r] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      for (size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i];
    };
  }
  return out;
}

Tensor gather(Tensor a, const std::vector<int>& indices) {
  Tape* tp = a.tape;
  Tensor out = tp->emit(Shape{static_cast<int>(indices.size())}, tp->node(a.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  for (size_t i = 0; i < indices.size(); ++i) {
    int ix = indices[i];
    if (ix < 0 || ix >= a.numel()) throw DimensionError("gather: index out of range");
    o.val[i] = av[static_cast<size_t>(ix)];
  }
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id};
    o.back = [r, indices] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      for (size_t i = 0; i < indices.size(); ++i)
        A.grad[static_cast<size_t>(indices[i])] += g[i];
    };
  }
  return out;
}

Tensor scatter_add(Tensor values, const std::vector<int>& indices, int out_len) {
  if (static_cast<int>(indices.size()) != values.numel())
    throw DimensionError("scatter_add: index/value count mismatch");
  Tape* tp = values.tape;
  Tensor out = tp->emit(Shape{out_len}, tp->node(values.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& vv = values.val();
  for (size_t i = 0; i < indices.size(); ++i) {
    int ix = indices[i];
    if (ix < 0 || ix >= out_len) throw DimensionError("scatter_add: index out of range");
    o.val[static_cast<size_t>(ix)] += vv[i];
  }
  if (o.needs_grad) {
    Ref r{tp, out.id, values.id};
    o.back = [r, indices] {
      const auto& g = r.o().grad;
      Node& V = r.pa();
      for (size_t i = 0; i < indices.size(); ++i)
        V.grad[i] += g[static_cast<size_t>(indices[i])];
    };
  }
  return out;
}

Tensor cross3(Tensor a, Tensor b) {
  if (a.numel() != 3 || b.numel() != 3) throw DimensionError("cross3: need 3-vectors");
  Tape* tp = a.tape;
  Tensor out = tp->emit(Shape{3}, any_grad({a, b}));
  Node& o = tp->node(out.id);
  const auto& u = a.val();
  const auto& v = b.val();
  o.val[0] = u[1] * v[2] - u[2] * v[1];
  o.val[1] = u[2] * v[0] - u[0] * v[2];
  o.val[2] = u[0] * v[1] - u[1] * v[0];
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id, b.id};
    o.back = [r] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      Node& B = r.pb();
      const auto& u = A.val;
      const auto& v = B.val;
      if (A.needs_grad) {
        A.grad[0] += v[1] * g[2] - v[2] * g[1];
        A.grad[1] += v[2] * g[0] - v[0] * g[2];
        A.grad[2] += v[0] * g[1] - v[1] * g[0];
      }
      if (B.needs_grad) {
        B.grad[0] += u[2] * g[1] - u[1] * g[2];
        B.grad[1] += u[0] * g[2] - u[2] * g[0];
        B.grad[2] += u[1] * g[0] - u[0] * g[1];
      }
    };
  }
  return out;
}

// ---------------- linear layers ----------------

Tensor matmul(Tensor a, Tensor b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.nd != 2 || sb.nd != 2 || sa.d[1] != sb.d[0])
    throw DimensionError("matmul: incompatible shapes");
  int p = sa.d[0], q = sa.d[1], r2 = sb.d[1];
  Tape* tp = a.tape;
  Tensor out = tp->emit(Shape{p, r2}, any_grad({a, b}));
  Node& o = tp->node(out.id);
  const auto& av = a.val();
  const auto& bv = b.val();
  for (int i = 0; i < p; ++i)
    for (int k = 0; k < q; ++k) {
      double x = av[static_cast<size_t>(i) * q + k];
      if (x == 0.0) continue;
      const double* brow = &bv[static_cast<size_t>(k) * r2];
      double* orow = &o.val[static_cast<size_t>(i) * r2];
      for (int j = 0; j < r2; ++j) orow[j] += x * brow[j];
    }
  if (o.needs_grad) {
    Ref r{tp, out.id, a.id, b.id};
    o.back = [r, p, q, r2] {
      const auto& g = r.o().grad;
      Node& A = r.pa();
      Node& B = r.pb();
      if (A.needs_grad) {
        for (int i = 0; i < p; ++i)
          for (int k = 0; k < q; ++k) {
            double acc = 0.0;
            const double* grow = &g[static_cast<size_t>(i) * r2];
            const double* brow = &B.val[static_cast<size_t>(k) * r2];
            for (int j = 0; j < r2; ++j) acc += grow[j] * brow[j];
            A.grad[static_cast<size_t>(i) * q + k] += acc;
          }
      }
      if (B.needs_grad) {
        for (int i = 0; i < p; ++i)
          for (int k = 0; k < q; ++k) {
            double x = A.val[static_cast<size_t>(i) * q + k];
            if (x == 0.0) continue;
            const double* grow = &g[static_cast<size_t>(i) * r2];
            double* brow = &B.grad[static_cast<size_t>(k) * r2];
            for (int j = 0; j < r2; ++j) brow[j] += x * grow[j];
          }
      }
    };
  }
  return out;
}

Tensor linear(Tensor w, Tensor x, Tensor b) {
  const Shape& sw = w.shape();
  if (sw.nd != 2 || sw.d[1] != x.numel() || b.numel() != sw.d[0])
    throw DimensionError("linear: incompatible shapes");
  int m = sw.d[0], n = sw.d[1];
  Tape* tp = w.tape;
  Tensor out = tp->emit(Shape{m}, any_grad({w, x, b}));
  Node& o = tp->node(out.id);
  const auto& wv = w.val();
  const auto& xv = x.val();
  const auto& bv = b.val();
  for (int i = 0; i < m; ++i) {
    double acc = bv[i];
    const double* row = &wv[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j) acc += row[j] * xv[j];
    o.val[i] = acc;
  }
  if (o.needs_grad) {
    int wid = w.id, xid = x.id, bid = b.id, oid = out.id;
    o.back = [tp, wid, xid, bid, oid, m, n] {
      const auto& g = tp->node(oid).grad;
      Node& W = tp->node(wid);
      Node& X = tp->node(xid);
      Node& B = tp->node(bid);
      if (B.needs_grad)
        for (int i = 0; i < m; ++i) B.grad[i] += g[i];
      if (W.needs_grad)
        for (int i = 0; i < m; ++i) {
          double gi = g[i];
          if (gi == 0.0) continue;
          double* row = &W.grad[static_cast<size_t>(i) * n];
          for (int j = 0; j < n; ++j) row[j] += gi * X.val[j];
        }
      if (X.needs_grad)
        for (int i = 0; i < m; ++i) {
          double gi = g[i];
          if (gi == 0.0) continue;
          const double* row = &W.val[static_cast<size_t>(i) * n];
          for (int j = 0; j < n; ++j) X.grad[j] += gi * row[j];
        }
    };
  }
  return out;
}

Tensor conv1x1(Tensor x, Tensor w, Tensor b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  int cin = sx.d[0];
  int sp = sx.numel / cin;
  if (sw.nd != 2 || sw.d[1] != cin || b.numel() != sw.d[0])
    throw DimensionError("conv1x1: incompatible shapes");
  int cout = sw.d[0];
  Tape* tp = x.tape;
  Shape os = sx;
  os.d[0] = cout;
  os.numel = cout * sp;
  Tensor out = tp->emit(os, any_grad({x, w, b}));
  Node& o = tp->node(out.id);
  const auto& xv = x.val();
  const auto& wv = w.val();
  const auto& bv = b.val();
  for (int f = 0; f < cout; ++f) {
    double* orow = &o.val[static_cast<size_t>(f) * sp];
    for (int s = 0; s < sp; ++s) orow[s] = bv[f];
    for (int c = 0; c < cin; ++c) {
      double wfc = wv[static_cast<size_t>(f) * cin + c];
      if (wfc == 0.0) continue;
      const double* xrow = &xv[static_cast<size_t>(c) * sp];
      for (int s = 0; s < sp; ++s) orow[s] += wfc * xrow[s];
    }
  }
  if (o.needs_grad) {
    int xid = x.id, wid = w.id, bid = b.id, oid = out.id;
    o.back = [tp, xid, wid, bid, oid, cin, cout, sp] {
      const auto& g = tp->node(oid).grad;
      Node& X = tp->node(xid);
      Node& W = tp->node(wid);
      Node& B = tp->node(bid);
      for (int f = 0; f < cout; ++f) {
        const double* grow = &g[static_cast<size_t>(f) * sp];
        if (B.needs_grad) {
          double acc = 0.0;
          for (int s = 0; s < sp; ++s) acc += grow[s];
          B.grad[f] += acc;
        }
        for (int c = 0; c < cin; ++c) {
          const double* xrow = &X.val[static_cast<size_t>(c) * sp];
          if (W.needs_grad) {
            double acc = 0.0;
            for (int s = 0; s < sp; ++s) acc += grow[s] * xrow[s];
            W.grad[static_cast<size_t>(f) * cin + c] += acc;
          }
          if (X.needs_grad) {
            double wfc = W.val[static_cast<size_t>(f) * cin + c];
            if (wfc == 0.0) continue;
            double* xg = &X.grad[static_cast<size_t>(c) * sp];
            for (int s = 0; s < sp; ++s) xg[s] += wfc * grow[s];
          }
        }
      }
    };
  }
  return out;
}

Tensor conv2d3x3(Tensor x, Tensor w, Tensor b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.nd != 3 || sw.nd != 4 || sw.d[1] != sx.d[0] || sw.d[2] != 3 || sw.d[3] != 3)
    throw DimensionError("conv2d3x3: incompatible shapes");
  int cin = sx.d[0], h = sx.d[1], wd = sx.d[2], cout = sw.d[0];
  if (b.numel() != cout) throw DimensionError("conv2d3x3: bad bias");
  Tape* tp = x.tape;
  Tensor out = tp->emit(Shape{cout, h, wd}, any_grad({x, w, b}));
  Node& o = tp->node(out.id);
  const auto& xv = x.val();
  const auto& wv = w.val();
  const auto& bv = b.val();
  auto xat = [&](int c, int y, int xx) -> double {
    if (y < 0 || y >= h || xx < 0 || xx >= wd) return 0.0;
    return xv[(static_cast<size_t>(c) * h + y) * wd + xx];
  };
  for (int f = 0; f < cout; ++f)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < wd; ++xx) {
        double acc = bv[f];
        for (int c = 0; c < cin; ++c)
          for (int dy = 0; dy < 3; ++dy)
            for (int dx = 0; dx < 3; ++dx)
              acc += wv[((static_cast<size_t>(f) * cin + c) * 3 + dy) * 3 + dx] *
                     xat(c, y + dy - 1, xx + dx - 1);
        o.val[(static_cast<size_t>(f) * h + y) * wd + xx] = acc;
      }
  if (o.needs_grad) {
    int xid = x.id, wid = w.id, bid = b.id, oid = out.id;
    o.back = [tp, xid, wid, bid, oid, cin, cout, h, wd] {
      const auto& g = tp->node(oid).grad;
      Node& X = tp->node(xid);
      Node& W = tp->node(wid);
      Node& B = tp->node(bid);
      for (int f = 0; f < cout; ++f)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < wd; ++xx) {
            double gv = g[(static_cast<size_t>(f) * h + y) * wd + xx];
            if (gv == 0.0) continue;
            if (B.needs_grad) B.grad[f] += gv;
            for (int c = 0; c < cin; ++c)
              for (int dy = 0; dy < 3; ++dy) {
                int yy = y + dy - 1;
                if (yy < 0 || yy >= h) continue;
                for (int dx = 0; dx < 3; ++dx) {
                  int xs = xx + dx - 1;
                  if (xs < 0 || xs >= wd) continue;
                  size_t xi = (static_cast<size_t>(c) * h + yy) * wd + xs;
                  size_t wi = ((static_cast<size_t>(f) * cin + c) * 3 + dy) * 3 + dx;
                  if (W.needs_grad) W.grad[wi] += gv * X.val[xi];
                  if (X.needs_grad) X.grad[xi] += gv * W.val[wi];
                }
              }
          }
    };
  }
  return out;
}

Tensor conv1d(Tensor x, Tensor w, Tensor b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.nd != 2 || sw.nd != 3 || sw.d[1] != sx.d[0])
    throw DimensionError("conv1d: incompatible shapes");
  int cin = sx.d[0], tlen = sx.d[1], cout = sw.d[0], k = sw.d[2];
  int pad = (k - 1) / 2;
  if (b.numel() != cout) throw DimensionError("conv1d: bad bias");
  Tape* tp = x.tape;
  Tensor out = tp->emit(Shape{cout, tlen}, any_grad({x, w, b}));
  Node& o = tp->node(out.id);
  const auto& xv = x.val();
  const auto& wv = w.val();
  const auto& bv = b.val();
  for (int f = 0; f < cout; ++f)
    for (int t = 0; t < tlen; ++t) {
      double acc = bv[f];
      for (int c = 0; c < cin; ++c)
        for (int j = 0; j < k; ++j) {
          int tt = t + j - pad;
          if (tt < 0 || tt >= tlen) continue;
          acc += wv[(static_cast<size_t>(f) * cin + c) * k + j] *
                 xv[static_cast<size_t>(c) * tlen + tt];
        }
      o.val[static_cast<size_t>(f) * tlen + t] = acc;
    }
  if (o.needs_grad) {
    int xid = x.id, wid = w.id, bid = b.id, oid = out.id;
    o.back = [tp, xid, wid, bid, oid, cin, cout, tlen, k, pad] {
      const auto& g = tp->node(oid).grad;
      Node& X = tp->node(xid);
      Node& W = tp->node(wid);
      Node& B = tp->node(bid);
      for (int f = 0; f < cout; ++f)
        for (int t = 0; t < tlen; ++t) {
          double gv = g[static_cast<size_t>(f) * tlen + t];
          if (gv == 0.0) continue;
          if (B.needs_grad) B.grad[f] += gv;
          for (int c = 0; c < cin; ++c)
            for (int j = 0; j < k; ++j) {
              int tt = t + j - pad;
              if (tt < 0 || tt >= tlen) continue;
              size_t wi = (static_cast<size_t>(f) * cin + c) * k + j;
              size_t xi = static_cast<size_t>(c) * tlen + tt;
              if (W.needs_grad) W.grad[wi] += gv * X.val[xi];
              if (X.needs_grad) X.grad[xi] += gv * W.val[wi];
            }
        }
    };
  }
  return out;
}

// ---------------- spatial ----------------

Tensor avgpool2d(Tensor x, int k) {
  const Shape& sx = x.shape();
  int c = 1, h, wd;
  if (sx.nd == 2) {
    h = sx.d[0];
    wd = sx.d[1];
  } else if (sx.nd == 3) {
    c = sx.d[0];
    h = sx.d[1];
    wd = sx.d[2];
  } else {
    throw DimensionError("avgpool2d: need 2-D or 3-D input");
  }
  if (h % k != 0 || wd % k != 0) throw DimensionError("avgpool2d: size not divisible");
  int h2 = h / k, w2 = wd / k;
  Tape* tp = x.tape;
  Shape os = sx.nd == 2 ? Shape{h2, w2} : Shape{c, h2, w2};
  Tensor out = tp->emit(os, tp->node(x.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& xv = x.val();
  double inv = 1.0 / (k * k);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h2; ++y)
      for (int xx = 0; xx < w2; ++xx) {
        double acc = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            acc += xv[(static_cast<size_t>(ci) * h + y * k + dy) * wd + xx * k + dx];
        o.val[(static_cast<size_t>(ci) * h2 + y) * w2 + xx] = acc * inv;
      }
  if (o.needs_grad) {
    Ref r{tp, out.id, x.id};
    o.back = [r, c, h, wd, h2, w2, k, inv] {
      const auto& g = r.o().grad;
      Node& X = r.pa();
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h2; ++y)
          for (int xx = 0; xx < w2; ++xx) {
            double gv = g[(static_cast<size_t>(ci) * h2 + y) * w2 + xx] * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                X.grad[(static_cast<size_t>(ci) * h + y * k + dy) * wd + xx * k + dx] += gv;
          }
    };
  }
  return out;
}

Tensor spatial_mean(Tensor x) {
  const Shape& sx = x.shape();
  if (sx.nd != 3) throw DimensionError("spatial_mean: need {C,H,W}");
  int c = sx.d[0], sp = sx.d[1] * sx.d[2];
  Tape* tp = x.tape;
  Tensor out = tp->emit(Shape{c}, tp->node(x.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& xv = x.val();
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    const double* row = &xv[static_cast<size_t>(ci) * sp];
    for (int s = 0; s < sp; ++s) acc += row[s];
    o.val[ci] = acc / sp;
  }
  if (o.needs_grad) {
    Ref r{tp, out.id, x.id};
    o.back = [r, c, sp] {
      const auto& g = r.o().grad;
      Node& X = r.pa();
      for (int ci = 0; ci < c; ++ci) {
        double gv = g[ci] / sp;
        double* row = &X.grad[static_cast<size_t>(ci) * sp];
        for (int s = 0; s < sp; ++s) row[s] += gv;
      }
    };
  }
  return out;
}

Tensor broadcast_cols(Tensor v, int n) {
  int c = v.numel();
  Tape* tp = v.tape;
  Tensor out = tp->emit(Shape{c, n}, tp->node(v.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& vv = v.val();
  for (int ci = 0; ci < c; ++ci)
    for (int j = 0; j < n; ++j) o.val[static_cast<size_t>(ci) * n + j] = vv[ci];
  if (o.needs_grad) {
    Ref r{tp, out.id, v.id};
    o.back = [r, c, n] {
      const auto& g = r.o().grad;
      Node& V = r.pa();
      for (int ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += g[static_cast<size_t>(ci) * n + j];
        V.grad[ci] += acc;
      }
    };
  }
  return out;
}

Tensor bilinear_resize(Tensor x, int h2, int w2) {
  const Shape& sx = x.shape();
  if (sx.nd != 3) throw DimensionError("bilinear_resize: need {C,H,W}");
  int c = sx.d[0], h = sx.d[1], wd = sx.d[2];
  Tape* tp = x.tape;
  Tensor out = tp->emit(Shape{c, h2, w2}, tp->node(x.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& xv = x.val();
  auto src = [&](int dst, int n2, int n) {
    return n2 > 1 ? static_cast<double>(dst) * (n - 1) / (n2 - 1) : 0.0;
  };
  for (int y = 0; y < h2; ++y) {
    double fy = src(y, h2, h);
    int y0 = std::min(static_cast<int>(fy), h - 2 < 0 ? 0 : h - 2);
    double wy = fy - y0;
    for (int xx = 0; xx < w2; ++xx) {
      double fx = src(xx, w2, wd);
      int x0 = std::min(static_cast<int>(fx), wd - 2 < 0 ? 0 : wd - 2);
      double wx = fx - x0;
      for (int ci = 0; ci < c; ++ci) {
        const double* plane = &xv[static_cast<size_t>(ci) * h * wd];
        double v00 = plane[y0 * wd + x0];
        double v01 = plane[y0 * wd + std::min(x0 + 1, wd - 1)];
        double v10 = plane[std::min(y0 + 1, h - 1) * wd + x0];
        double v11 = plane[std::min(y0 + 1, h - 1) * wd + std::min(x0 + 1, wd - 1)];
        o.val[(static_cast<size_t>(ci) * h2 + y) * w2 + xx] =
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  if (o.needs_grad) {
    Ref r{tp, out.id, x.id};
    o.back = [r, c, h, wd, h2, w2] {
      const auto& g = r.o().grad;
      Node& X = r.pa();
      auto src = [&](int dst, int n2, int n) {
        return n2 > 1 ? static_cast<double>(dst) * (n - 1) / (n2 - 1) : 0.0;
      };
      for (int y = 0; y < h2; ++y) {
        double fy = src(y, h2, h);
        int y0 = std::min(static_cast<int>(fy), h - 2 < 0 ? 0 : h - 2);
        double wy = fy - y0;
        int y1 = std::min(y0 + 1, h - 1);
        for (int xx = 0; xx < w2; ++xx) {
          double fx = src(xx, w2, wd);
          int x0 = std::min(static_cast<int>(fx), wd - 2 < 0 ? 0 : wd - 2);
          double wx = fx - x0;
          int x1 = std::min(x0 + 1, wd - 1);
          for (int ci = 0; ci < c; ++ci) {
            double gv = g[(static_cast<size_t>(ci) * h2 + y) * w2 + xx];
            if (gv == 0.0) continue;
            double* plane = &X.grad[static_cast<size_t>(ci) * h * wd];
            plane[y0 * wd + x0] += gv * (1 - wy) * (1 - wx);
            plane[y0 * wd + x1] += gv * (1 - wy) * wx;
            plane[y1 * wd + x0] += gv * wy * (1 - wx);
            plane[y1 * wd + x1] += gv * wy * wx;
          }
        }
      }
    };
  }
  return out;
}

namespace {

// one separable blur pass along an axis; the kernel is symmetric so forward
// and adjoint share the loop structure
void blur_pass(const double* src, double* dst, int c, int dd, int hh, int ww, int axis) {
  auto at = [&](int ci, int z, int y, int x) {
    return ((static_cast<size_t>(ci) * dd + z) * hh + y) * ww + x;
  };
  for (int ci = 0; ci < c; ++ci)
    for (int z = 0; z < dd; ++z)
      for (int y = 0; y < hh; ++y)
        for (int x = 0; x < ww; ++x) {
          int zm = z, zp = z, ym = y, yp = y, xm = x, xp = x;
          if (axis == 0) {
            zm = std::max(0, z - 1);
            zp = std::min(dd - 1, z + 1);
          } else if (axis == 1) {
            ym = std::max(0, y - 1);
            yp = std::min(hh - 1, y + 1);
          } else {
            xm = std::max(0, x - 1);
            xp = std::min(ww - 1, x + 1);
          }
          dst[at(ci, z, y, x)] = 0.5 * src[at(ci, z, y, x)] +
                                 0.25 * src[at(ci, zm, ym, xm)] +
                                 0.25 * src[at(ci, zp, yp, xp)];
        }
}

void blur_adjoint_pass(const double* gout, double* gin, int c, int dd, int hh, int ww,
                       int axis) {
  auto at = [&](int ci, int z, int y, int x) {
    return ((static_cast<size_t>(ci) * dd + z) * hh + y) * ww + x;
  };
  for (int ci = 0; ci < c; ++ci)
    for (int z = 0; z < dd; ++z)
      for (int y = 0; y < hh; ++y)
        for (int x = 0; x < ww; ++x) {
          double g = gout[at(ci, z, y, x)];
          if (g == 0.0) continue;
          int zm = z, zp = z, ym = y, yp = y, xm = x, xp = x;
          if (axis == 0) {
            zm = std::max(0, z - 1);
            zp = std::min(dd - 1, z + 1);
          } else if (axis == 1) {
            ym = std::max(0, y - 1);
            yp = std::min(hh - 1, y + 1);
          } else {
            xm = std::max(0, x - 1);
            xp = std::min(ww - 1, x + 1);
          }
          gin[at(ci, z, y, x)] += 0.5 * g;
          gin[at(ci, zm, ym, xm)] += 0.25 * g;
          gin[at(ci, zp, yp, xp)] += 0.25 * g;
        }
}

}  // namespace

Tensor smooth3(Tensor vol) {
  const Shape& s = vol.shape();
  if (s.nd != 4) throw DimensionError("smooth3: need {C,D,H,W}");
  int c = s.d[0], dd = s.d[1], hh = s.d[2], ww = s.d[3];
  Tape* tp = vol.tape;
  Tensor out = tp->emit(s, tp->node(vol.id).needs_grad);
  Node& o = tp->node(out.id);
  std::vector<double> tmp(vol.val().size());
  std::vector<double> tmp2(vol.val().size());
  blur_pass(vol.val().data(), tmp.data(), c, dd, hh, ww, 0);
  blur_pass(tmp.data(), tmp2.data(), c, dd, hh, ww, 1);
  blur_pass(tmp2.data(), o.val.data(), c, dd, hh, ww, 2);
  if (o.needs_grad) {
    Ref r{tp, out.id, vol.id};
    o.back = [r, c, dd, hh, ww] {
      const auto& g = r.o().grad;
      Node& V = r.pa();
      std::vector<double> t1(g.size(), 0.0), t2(g.size(), 0.0);
      blur_adjoint_pass(g.data(), t1.data(), c, dd, hh, ww, 2);
      blur_adjoint_pass(t1.data(), t2.data(), c, dd, hh, ww, 1);
      blur_adjoint_pass(t2.data(), V.grad.data(), c, dd, hh, ww, 0);
    };
  }
  return out;
}

Tensor trilinear_sample(Tensor vol, Tensor grid) {
  const Shape& sv = vol.shape();
  const Shape& sg = grid.shape();
  if (sv.nd != 4) throw DimensionError("trilinear_sample: volume must be {C,D,H,W}");
  if (sg.nd != 2 || sg.d[0] != 3) throw DimensionError("trilinear_sample: grid must be {3,N}");
  int c = sv.d[0], dd = sv.d[1], hh = sv.d[2], ww = sv.d[3], n = sg.d[1];
  Tape* tp = vol.tape;
  Tensor out = tp->emit(Shape{c, n}, any_grad({vol, grid}));
  Node& o = tp->node(out.id);
  const auto& vv = vol.val();
  const auto& gv = grid.val();

  auto unnorm = [](double u, int size) {
    // align_corners mapping with border clamp
    double f = (u + 1.0) * 0.5 * (size - 1);
    bool clamped = false;
    if (f < 0.0) {
      f = 0.0;
      clamped = true;
    }
    if (f > size - 1) {
      f = size - 1;
      clamped = true;
    }
    return std::pair<double, bool>(f, clamped);
  };

  for (int i = 0; i < n; ++i) {
    double fx = unnorm(gv[i], ww).first;
    double fy = unnorm(gv[n + i], hh).first;
    double fz = unnorm(gv[2 * n + i], dd).first;
    int x0 = std::min(static_cast<int>(fx), ww >= 2 ? ww - 2 : 0);
    int y0 = std::min(static_cast<int>(fy), hh >= 2 ? hh - 2 : 0);
    int z0 = std::min(static_cast<int>(fz), dd >= 2 ? dd - 2 : 0);
    double wx = fx - x0, wy = fy - y0, wz = fz - z0;
    int x1 = std::min(x0 + 1, ww - 1), y1 = std::min(y0 + 1, hh - 1), z1 = std::min(z0 + 1, dd - 1);
    for (int ci = 0; ci < c; ++ci) {
      const double* p = &vv[static_cast<size_t>(ci) * dd * hh * ww];
      auto at = [&](int z, int y, int x) { return p[(static_cast<size_t>(z) * hh + y) * ww + x]; };
      double c00 = at(z0, y0, x0) * (1 - wx) + at(z0, y0, x1) * wx;
      double c01 = at(z0, y1, x0) * (1 - wx) + at(z0, y1, x1) * wx;
      double c10 = at(z1, y0, x0) * (1 - wx) + at(z1, y0, x1) * wx;
      double c11 = at(z1, y1, x0) * (1 - wx) + at(z1, y1, x1) * wx;
      o.val[static_cast<size_t>(ci) * n + i] =
          (c00 * (1 - wy) + c01 * wy) * (1 - wz) + (c10 * (1 - wy) + c11 * wy) * wz;
    }
  }
  if (o.needs_grad) {
    int vid = vol.id, gid = grid.id, oid = out.id;
    o.back = [tp, vid, gid, oid, c, dd, hh, ww, n] {
      const auto& g = tp->node(oid).grad;
      Node& V = tp->node(vid);
      Node& G = tp->node(gid);
      const auto& gridv = G.val;
      auto unnorm = [](double u, int size) {
        double f = (u + 1.0) * 0.5 * (size - 1);
        bool clamped = false;
        if (f < 0.0) {
          f = 0.0;
          clamped = true;
        }
        if (f > size - 1) {
          f = size - 1;
          clamped = true;
        }
        return std::pair<double, bool>(f, clamped);
      };
      for (int i = 0; i < n; ++i) {
        auto [fx, cx] = unnorm(gridv[i], ww);
        auto [fy, cy] = unnorm(gridv[n + i], hh);
        auto [fz, cz] = unnorm(gridv[2 * n + i], dd);
        int x0 = std::min(static_cast<int>(fx), ww >= 2 ? ww - 2 : 0);
        int y0 = std::min(static_cast<int>(fy), hh >= 2 ? hh - 2 : 0);
        int z0 = std::min(static_cast<int>(fz), dd >= 2 ? dd - 2 : 0);
        double wx = fx - x0, wy = fy - y0, wz = fz - z0;
        int x1 = std::min(x0 + 1, ww - 1), y1 = std::min(y0 + 1, hh - 1),
            z1 = std::min(z0 + 1, dd - 1);
        double gx_acc = 0.0, gy_acc = 0.0, gz_acc = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          double gv = g[static_cast<size_t>(ci) * n + i];
          if (gv == 0.0) continue;
          size_t base = static_cast<size_t>(ci) * dd * hh * ww;
          auto ix = [&](int z, int y, int x) {
            return base + (static_cast<size_t>(z) * hh + y) * ww + x;
          };
          if (V.needs_grad) {
            V.grad[ix(z0, y0, x0)] += gv * (1 - wx) * (1 - wy) * (1 - wz);
            V.grad[ix(z0, y0, x1)] += gv * wx * (1 - wy) * (1 - wz);
            V.grad[ix(z0, y1, x0)] += gv * (1 - wx) * wy * (1 - wz);
            V.grad[ix(z0, y1, x1)] += gv * wx * wy * (1 - wz);
            V.grad[ix(z1, y0, x0)] += gv * (1 - wx) * (1 - wy) * wz;
            V.grad[ix(z1, y0, x1)] += gv * wx * (1 - wy) * wz;
            V.grad[ix(z1, y1, x0)] += gv * (1 - wx) * wy * wz;
            V.grad[ix(z1, y1, x1)] += gv * wx * wy * wz;
          }
          if (G.needs_grad) {
            const double* p = &V.val[base];
            auto at = [&](int z, int y, int x) {
              return p[(static_cast<size_t>(z) * hh + y) * ww + x];
            };
            double dx = (at(z0, y0, x1) - at(z0, y0, x0)) * (1 - wy) * (1 - wz) +
                        (at(z0, y1, x1) - at(z0, y1, x0)) * wy * (1 - wz) +
                        (at(z1, y0, x1) - at(z1, y0, x0)) * (1 - wy) * wz +
                        (at(z1, y1, x1) - at(z1, y1, x0)) * wy * wz;
            double dy = ((at(z0, y1, x0) - at(z0, y0, x0)) * (1 - wx) +
                         (at(z0, y1, x1) - at(z0, y0, x1)) * wx) * (1 - wz) +
                        ((at(z1, y1, x0) - at(z1, y0, x0)) * (1 - wx) +
                         (at(z1, y1, x1) - at(z1, y0, x1)) * wx) * wz;
            double dz = ((at(z1, y0, x0) - at(z0, y0, x0)) * (1 - wx) +
                         (at(z1, y0, x1) - at(z0, y0, x1)) * wx) * (1 - wy) +
                        ((at(z1, y1, x0) - at(z0, y1, x0)) * (1 - wx) +
                         (at(z1, y1, x1) - at(z0, y1, x1)) * wx) * wy;
            gx_acc += gv * dx;
            gy_acc += gv * dy;
            gz_acc += gv * dz;
          }
        }
        if (G.needs_grad) {
          if (!cx) G.grad[i] += gx_acc * 0.5 * (ww - 1);
          if (!cy) G.grad[n + i] += gy_acc * 0.5 * (hh - 1);
          if (!cz) G.grad[2 * n + i] += gz_acc * 0.5 * (dd - 1);
        }
      }
    };
  }
  return out;
}

Tensor rigid_grid(Tensor b1, Tensor b2, Tensor b3, Tensor t, bool inverse,
                  int dd, int hh, int ww) {
  if (b1.numel() != 3 || b2.numel() != 3 || b3.numel() != 3 || t.numel() != 3)
    throw DimensionError("rigid_grid: need 3-vectors");
  Tape* tp = b1.tape;
  int n = dd * hh * ww;
  bool ng = any_grad({b1, b2, b3, t});
  Tensor out = tp->emit(Shape{3, n}, ng);
  Node& o = tp->node(out.id);
  auto axis = [](int i, int size) {
    return size > 1 ? -1.0 + 2.0 * i / (size - 1) : 0.0;
  };
  const auto& c1 = b1.val();
  const auto& c2 = b2.val();
  const auto& c3 = b3.val();
  const auto& tv = t.val();
  int i = 0;
  for (int z = 0; z < dd; ++z)
    for (int y = 0; y < hh; ++y)
      for (int x = 0; x < ww; ++x, ++i) {
        double px = axis(x, ww), py = axis(y, hh), pz = axis(z, dd);
        if (!inverse) {
          // R p + t with columns b1 b2 b3
          o.val[i] = c1[0] * px + c2[0] * py + c3[0] * pz + tv[0];
          o.val[n + i] = c1[1] * px + c2[1] * py + c3[1] * pz + tv[1];
          o.val[2 * n + i] = c1[2] * px + c2[2] * py + c3[2] * pz + tv[2];
        } else {
          double qx = px - tv[0], qy = py - tv[1], qz = pz - tv[2];
          o.val[i] = c1[0] * qx + c1[1] * qy + c1[2] * qz;
          o.val[n + i] = c2[0] * qx + c2[1] * qy + c2[2] * qz;
          o.val[2 * n + i] = c3[0] * qx + c3[1] * qy + c3[2] * qz;
        }
      }
  if (ng) {
    int id1 = b1.id, id2 = b2.id, id3 = b3.id, idt = t.id, oid = out.id;
    o.back = [tp, id1, id2, id3, idt, oid, inverse, dd, hh, ww, n] {
      const auto& g = tp->node(oid).grad;
      Node& B1 = tp->node(id1);
      Node& B2 = tp->node(id2);
      Node& B3 = tp->node(id3);
      Node& T = tp->node(idt);
      auto axis = [](int i, int size) {
        return size > 1 ? -1.0 + 2.0 * i / (size - 1) : 0.0;
      };
      int i = 0;
      for (int z = 0; z < dd; ++z)
        for (int y = 0; y < hh; ++y)
          for (int x = 0; x < ww; ++x, ++i) {
            double px = axis(x, ww), py = axis(y, hh), pz = axis(z, dd);
            double g0 = g[i], g1 = g[n + i], g2 = g[2 * n + i];
            if (!inverse) {
              if (B1.needs_grad) {
                B1.grad[0] += g0 * px;
                B1.grad[1] += g1 * px;
                B1.grad[2] += g2 * px;
              }
              if (B2.needs_grad) {
                B2.grad[0] += g0 * py;
                B2.grad[1] += g1 * py;
                B2.grad[2] += g2 * py;
              }
              if (B3.needs_grad) {
                B3.grad[0] += g0 * pz;
                B3.grad[1] += g1 * pz;
                B3.grad[2] += g2 * pz;
              }
              if (T.needs_grad) {
                T.grad[0] += g0;
                T.grad[1] += g1;
                T.grad[2] += g2;
              }
            } else {
              double qx = px - T.val[0], qy = py - T.val[1], qz = pz - T.val[2];
              if (B1.needs_grad) {
                B1.grad[0] += g0 * qx;
                B1.grad[1] += g0 * qy;
                B1.grad[2] += g0 * qz;
              }
              if (B2.needs_grad) {
                B2.grad[0] += g1 * qx;
                B2.grad[1] += g1 * qy;
                B2.grad[2] += g1 * qz;
              }
              if (B3.needs_grad) {
                B3.grad[0] += g2 * qx;
                B3.grad[1] += g2 * qy;
                B3.grad[2] += g2 * qz;
              }
              if (T.needs_grad) {
                T.grad[0] -= g0 * B1.val[0] + g1 * B2.val[0] + g2 * B3.val[0];
                T.grad[1] -= g0 * B1.val[1] + g1 * B2.val[1] + g2 * B3.val[1];
                T.grad[2] -= g0 * B1.val[2] + g1 * B2.val[2] + g2 * B3.val[2];
              }
            }
          }
    };
  }
  return out;
}

// ---------------- losses / misc ----------------

Tensor l1_mean(Tensor a, Tensor b) { return mean(abs_(sub(a, b))); }
Tensor l1_sum(Tensor a, Tensor b) { return sum(abs_(sub(a, b))); }

Tensor bce_mean(Tensor p, Tensor target, double eps) {
  require_same_shape(p, target, "bce_mean");
  Tape* tp = p.tape;
  Tensor out = tp->emit(Shape{1}, tp->node(p.id).needs_grad);
  Node& o = tp->node(out.id);
  const auto& pv = p.val();
  const auto& tv = target.val();
  int n = p.numel();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double pc = std::min(1.0 - eps, std::max(eps, pv[i]));
    acc -= tv[i] * std::log(pc) + (1.0 - tv[i]) * std::log(1.0 - pc);
  }
  o.val[0] = acc / n;
  if (o.needs_grad) {
    Ref r{tp, out.id, p.id, target.id};
    o.back = [r, eps, n] {
      double g = r.o().grad[0] / n;
      Node& P = r.pa();
      Node& T = r.pb();
      for (int i = 0; i < n; ++i) {
        double pv = P.val[i];
        if (pv <= eps || pv >= 1.0 - eps) continue;  // clamped region: zero slope
        P.grad[i] += g * (-T.val[i] / pv + (1.0 - T.val[i]) / (1.0 - pv));
      }
    };
  }
  return out;
}

double max_value(Tensor a) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : a.val()) m = std::max(m, x);
  return m;
}

}  // namespace emo::ad
