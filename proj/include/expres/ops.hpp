#pragma once

// Differentiable primitives. Each records one node on the graph with a
// forward value and a reverse-mode rule.
//
// Summation order: reductions accumulate in f64 over ascending indices and
// round once to f32. matmul and column sums go through expres::kernels, whose
// backends share that order.

#include <optional>
#include <vector>

#include "expres/graph.hpp"

namespace expres::ops {

inline constexpr float kLayerNormEps = 1e-6f;

Var matmul(Graph& g, Var a, Var b);                  // [m,k] x [k,n]
Var add(Graph& g, Var a, Var b);                     // identical dims
Var add_bias(Graph& g, Var x, Var bias);             // x[..., n] + bias[n]
Var mul(Graph& g, Var a, Var b);                     // element-wise, identical dims
Var scale(Graph& g, Var a, float s);
Var concat(Graph& g, const std::vector<Var>& parts, std::size_t axis);
Var slice(Graph& g, Var a, std::size_t axis, std::size_t begin, std::size_t length);
std::vector<Var> split(Graph& g, Var a, std::size_t axis, const std::vector<std::size_t>& sizes);
// softmax(a / temperature + mask) along the last axis. mask, if given, has a's
// dims and may contain -inf; every row must keep at least one finite entry.
Var softmax(Graph& g, Var a, float temperature = 1.0f, const Tensor* mask = nullptr);
// Per-row normalisation over the last axis, then gamma * xhat + beta.
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, float eps = kLayerNormEps);
Var gelu(Graph& g, Var x);                           // exact erf form
Var mean(Graph& g, Var a, std::size_t axis);         // removes `axis`
Var sum(Graph& g, Var a);                            // -> [1]
Var transpose(Graph& g, Var a);                      // 2-D only
Var reshape(Graph& g, Var a, Dims dims);
// [C,H,W] -> [C,out_h,out_w], half-pixel centres (align_corners = false).
Var bilinear_resize(Graph& g, Var x, std::size_t out_h, std::size_t out_w);
// Mean cross-entropy of logits[B,C] against integer targets in [0,C).
Var cross_entropy(Graph& g, Var logits, const std::vector<int>& targets);

}  // namespace expres::ops

namespace expres {

// Graph-free helpers shared by the primitives and by tensor-level code.
Tensor transpose2d(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& a, float temperature = 1.0f);
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

struct BilinearTap {
  std::size_t i0, i1;
  double w0, w1;
};
// Source taps for each of `out` destination samples over `in` source samples.
std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out);

float gelu_value(float x);

}  // namespace expres
