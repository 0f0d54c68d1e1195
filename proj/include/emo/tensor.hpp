#pragma once

// Reverse-mode autodiff over small dense tensors. A Tape owns the nodes of one
// computation; ops append nodes in topological order, so backward() is a single
// reverse sweep. Everything is double precision.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "emo/error.hpp"

namespace emo::ad {

struct Shape {
  int d[4] = {1, 1, 1, 1};
  int nd = 1;
  int numel = 1;

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    nd = 0;
    numel = 1;
    for (int x : dims) {
      d[nd++] = x;
      numel *= x;
    }
    if (nd == 0) {
      nd = 1;
      d[0] = 1;
    }
  }
  bool operator==(const Shape& o) const {
    if (nd != o.nd) return false;
    for (int i = 0; i < nd; ++i)
      if (d[i] != o.d[i]) return false;
    return true;
  }
};

class Tape;

struct Tensor {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const std::vector<double>& val() const;
  const Shape& shape() const;
  int numel() const;
  double scalar() const;
  std::span<const double> grad() const;
};

struct Node {
  std::vector<double> val;
  std::vector<double> grad;
  Shape shape;
  bool needs_grad = false;
  std::function<void()> back;  // null for leaves
};

class Tape {
 public:
  Tensor leaf(Shape s, const double* data, bool needs_grad);
  Tensor leaf(Shape s, const std::vector<double>& data, bool needs_grad) {
    if (static_cast<int>(data.size()) != s.numel)
      throw DimensionError("leaf: data size does not match shape");
    return leaf(s, data.data(), needs_grad);
  }
  Tensor constant(double v) { return leaf(Shape{1}, &v, false); }
  Tensor zeros(Shape s, bool needs_grad);

  // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse creation order.
  void backward(Tensor loss);

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t size() const { return nodes_.size(); }

  Tensor emit(Shape s, bool needs_grad);  // internal: append empty node

 private:
  std::vector<Node> nodes_;
};

// ---- elementwise / scalar ----
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor div(Tensor a, Tensor b);
Tensor affine(Tensor a, double scale, double shift);  // scale*a + shift
inline Tensor mul_scalar(Tensor a, double s) { return affine(a, s, 0.0); }
inline Tensor add_scalar(Tensor a, double s) { return affine(a, 1.0, s); }
inline Tensor neg(Tensor a) { return affine(a, -1.0, 0.0); }
Tensor tanh_(Tensor a);
Tensor sigmoid_(Tensor a);
Tensor relu(Tensor a);
Tensor exp_(Tensor a);
Tensor log_(Tensor a);
Tensor sqrt_(Tensor a);
Tensor abs_(Tensor a);
Tensor clamp(Tensor a, double lo, double hi);
Tensor vec_scale(Tensor v, Tensor s);  // v * scalar tensor {1}

// ---- reductions / vector algebra ----
Tensor sum(Tensor a);
Tensor mean(Tensor a);
Tensor dot(Tensor a, Tensor b);
Tensor norm2(Tensor a, double eps = 0.0);  // sqrt(dot(a,a)+eps)

// ---- structure ----
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
Tensor slice(Tensor a, int offset, int len);
Tensor reshape(Tensor a, Shape s);
Tensor gather(Tensor a, const std::vector<int>& indices);
// out[indices[i]] += values[i]; out has out_len entries
Tensor scatter_add(Tensor values, const std::vector<int>& indices, int out_len);
Tensor cross3(Tensor a, Tensor b);

// ---- linear layers ----
Tensor matmul(Tensor a, Tensor b);                // {p,q}x{q,r} -> {p,r}
Tensor linear(Tensor w, Tensor x, Tensor b);      // {m,n}x{n}+{m} -> {m}
Tensor conv1x1(Tensor x, Tensor w, Tensor b);     // x {Cin,S...}, w {Cout,Cin}
Tensor conv2d3x3(Tensor x, Tensor w, Tensor b);   // x {Cin,H,W}, w {Cout,Cin,3,3}, pad 1
Tensor conv1d(Tensor x, Tensor w, Tensor b);      // x {Cin,T}, w {Cout,Cin,K}, same pad

// ---- spatial ----
Tensor avgpool2d(Tensor x, int k);                    // {H,W} or {C,H,W}
Tensor spatial_mean(Tensor x);                        // {C,H,W} -> {C}
Tensor broadcast_cols(Tensor v, int n);               // {C} -> {C,n}
Tensor bilinear_resize(Tensor x, int h2, int w2);     // {C,H,W}, align_corners
// separable [0.25, 0.5, 0.25] blur along each spatial axis, replicated borders
Tensor smooth3(Tensor vol);  // {C,D,H,W}
// vol {C,D,H,W}, grid {3,N} rows x,y,z in [-1,1]; border clamp -> {C,N}
Tensor trilinear_sample(Tensor vol, Tensor grid);
// sampling grid of a rigid map over the normalized voxel lattice:
//   forward:  p' = R p + t        (columns b1 b2 b3)
//   inverse:  p' = R^T (p - t)
Tensor rigid_grid(Tensor b1, Tensor b2, Tensor b3, Tensor t, bool inverse,
                  int dd, int hh, int ww);

// ---- losses / misc ----
Tensor l1_mean(Tensor a, Tensor b);
Tensor l1_sum(Tensor a, Tensor b);
// mean BCE with inputs clamped to [eps, 1-eps]; target carries no gradient
Tensor bce_mean(Tensor p, Tensor target, double eps);

double max_value(Tensor a);  // plain max over entries (not a node)

}  // namespace emo::ad
