#include "expres/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "expres/errors.hpp"
#include "expres/kernels.hpp"

namespace expres {

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects rank 2, got " + to_string(a.dims()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul " + to_string(a.dims()) + " x " + to_string(b.dims()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  kernels::gemm(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

Tensor softmax_rows(const Tensor& a, float temperature) {
  const std::size_t n = a.dims().back();
  const std::size_t rows = a.size() / n;
  Tensor out(a.dims());
  const double inv_t = 1.0 / static_cast<double>(temperature);
  std::vector<double> z(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = a.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = static_cast<double>(x[j]) * inv_t;
      mx = std::max(mx, z[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = std::exp(z[j] - mx);
      total += z[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<float>(z[j] / total);
  }
  return out;
}

std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<BilinearTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = i0 + 1 < in ? i0 + 1 : i0;
    const double w1 = i1 == i0 ? 0.0 : src - static_cast<double>(i0);
    taps[o] = BilinearTap{i0, i1, 1.0 - w1, w1};
  }
  return taps;
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw ShapeError("bilinear_resize expects [C,H,W], got " + to_string(x.dims()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Tensor out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = x.data() + ch * h * w;
    float* dst = out.data() + ch * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& y = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& t = tx[ox];
        const double v = y.w0 * (t.w0 * src[y.i0 * w + t.i0] + t.w1 * src[y.i0 * w + t.i1]) +
                         y.w1 * (t.w0 * src[y.i1 * w + t.i0] + t.w1 * src[y.i1 * w + t.i1]);
        dst[oy * out_w + ox] = static_cast<float>(v);
      }
    }
  }
  return out;
}

float gelu_value(float x) {
  const double v = x;
  return static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)));
}

}  // namespace expres

namespace expres::ops {
namespace {

// outer x axis x inner decomposition used by concat/slice/mean.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Dims& dims, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= dims[i];
  v.extent = dims[axis];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) v.inner *= dims[i];
  return v;
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    g.shape_error("matmul", to_string(av.dims()) + " x " + to_string(bv.dims()));
  }
  return g.record("matmul", expres::matmul(av, bv), {a, b}, [a, b](Graph& gr, const Tensor& dc) {
    if (gr.requires_grad(a)) gr.accumulate_grad(a, expres::matmul(dc, transpose2d(gr.value(b))));
    if (gr.requires_grad(b)) gr.accumulate_grad(b, expres::matmul(transpose2d(gr.value(a)), dc));
  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.dims() != bv.dims()) g.shape_error("add", to_string(av.dims()) + " + " + to_string(bv.dims()));
  Tensor out(av.dims());
  kernels::add(av.data(), bv.data(), out.data(), out.size());
  return g.record("add", std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& d) {
    gr.accumulate_grad(a, d);
    gr.accumulate_grad(b, d);
  });
}

Var add_bias(Graph& g, Var x, Var bias) {
  const Tensor& xv = g.value(x);
  const Tensor& bv = g.value(bias);
  if (bv.rank() != 1 || xv.rank() == 0 || xv.dims().back() != bv.dim(0)) {
    g.shape_error("add_bias", to_string(xv.dims()) + " + bias " + to_string(bv.dims()));
  }
  const std::size_t n = bv.size();
  const std::size_t rows = xv.size() / n;
  Tensor out(xv.dims());
  for (std::size_t r = 0; r < rows; ++r) kernels::add(xv.data() + r * n, bv.data(), out.data() + r * n, n);
  return g.record("add_bias", std::move(out), {x, bias}, [x, bias, rows, n](Graph& gr, const Tensor& d) {
    gr.accumulate_grad(x, d);
    if (gr.requires_grad(bias)) {
      Tensor db({n});
      kernels::column_sum(d.data(), rows, n, db.data());
      gr.accumulate_grad(bias, db);
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.dims() != bv.dims()) g.shape_error("mul", to_string(av.dims()) + " * " + to_string(bv.dims()));
  Tensor out(av.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& d) {
    const Tensor& x = gr.value(a);
    const Tensor& y = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor da(d.dims());
      for (std::size_t i = 0; i < d.size(); ++i) da[i] = d[i] * y[i];
      gr.accumulate_grad(a, da);
    }
    if (gr.requires_grad(b)) {
      Tensor db(d.dims());
      for (std::size_t i = 0; i < d.size(); ++i) db[i] = d[i] * x[i];
      gr.accumulate_grad(b, db);
    }
  });
}

Var scale(Graph& g, Var a, float s) {
  const Tensor& av = g.value(a);
  Tensor out(av.dims());
  kernels::scale(av.data(), s, out.data(), out.size());
  return g.record("scale", std::move(out), {a}, [a, s](Graph& gr, const Tensor& d) {
    Tensor da(d.dims());
    kernels::scale(d.data(), s, da.data(), d.size());
    gr.accumulate_grad(a, da);
  });
}

Var concat(Graph& g, const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) g.shape_error("concat", "no inputs");
  Dims out_dims = g.dims(parts[0]);
  if (axis >= out_dims.size()) g.shape_error("concat", "axis " + std::to_string(axis) + " out of range");
  std::size_t total = 0;
  for (Var p : parts) {
    const Dims& d = g.dims(p);
    if (d.size() != out_dims.size()) g.shape_error("concat", "rank mismatch " + to_string(d));
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i != axis && d[i] != out_dims[i]) {
        g.shape_error("concat", to_string(d) + " incompatible with " + to_string(out_dims));
      }
    }
    total += d[axis];
  }
  out_dims[axis] = total;
  Tensor out(out_dims);
  const AxisView ov = axis_view(out_dims, axis);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& pv = g.value(p);
    const AxisView pvw = axis_view(pv.dims(), axis);
    const std::size_t chunk = pvw.extent * pvw.inner;
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + (o * ov.extent + offset) * ov.inner);
    }
    offsets.push_back(offset);
    offset += pvw.extent;
  }
  return g.record("concat", std::move(out), parts, [parts, offsets, ov](Graph& gr, const Tensor& d) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!gr.requires_grad(parts[k])) continue;
      const Dims& pd = gr.dims(parts[k]);
      Tensor dp(pd);
      const std::size_t ext = pd.empty() ? 1 : dp.size() / (ov.outer * ov.inner);
      const std::size_t chunk = ext * ov.inner;
      for (std::size_t o = 0; o < ov.outer; ++o) {
        std::copy_n(d.data() + (o * ov.extent + offsets[k]) * ov.inner, chunk, dp.data() + o * chunk);
      }
      gr.accumulate_grad(parts[k], dp);
    }
  });
}

Var slice(Graph& g, Var a, std::size_t axis, std::size_t begin, std::size_t length) {
  const Tensor& av = g.value(a);
  if (axis >= av.rank() || begin + length > av.dim(axis)) {
    g.shape_error("slice", "range [" + std::to_string(begin) + "," + std::to_string(begin + length) + ") on axis " +
                               std::to_string(axis) + " of " + to_string(av.dims()));
  }
  const AxisView v = axis_view(av.dims(), axis);
  Dims out_dims = av.dims();
  out_dims[axis] = length;
  Tensor out(out_dims);
  const std::size_t chunk = length * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(av.data() + (o * v.extent + begin) * v.inner, chunk, out.data() + o * chunk);
  }
  return g.record("slice", std::move(out), {a}, [a, v, begin, chunk](Graph& gr, const Tensor& d) {
    Tensor da(gr.dims(a));
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(d.data() + o * chunk, chunk, da.data() + (o * v.extent + begin) * v.inner);
    }
    gr.accumulate_grad(a, da);
  });
}

std::vector<Var> split(Graph& g, Var a, std::size_t axis, const std::vector<std::size_t>& sizes) {
  const Dims& d = g.dims(a);
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (axis >= d.size() || total != d[axis]) {
    g.shape_error("split", "sizes summing to " + std::to_string(total) + " on axis " + std::to_string(axis) +
                               " of " + to_string(d));
  }
  std::vector<Var> out;
  std::size_t begin = 0;
  for (auto s : sizes) {
    out.push_back(slice(g, a, axis, begin, s));
    begin += s;
  }
  return out;
}

Var softmax(Graph& g, Var a, float temperature, const Tensor* mask) {
  const Tensor& av = g.value(a);
  if (av.rank() == 0) g.shape_error("softmax", "rank 0 input");
  if (!(temperature > 0.0f)) g.shape_error("softmax", "temperature must be positive");
  const std::size_t n = av.dims().back();
  const std::size_t rows = av.size() / n;
  if (mask && mask->dims() != av.dims()) {
    g.shape_error("softmax", "mask " + to_string(mask->dims()) + " vs input " + to_string(av.dims()));
  }
  Tensor out(av.dims());
  const double inv_t = 1.0 / static_cast<double>(temperature);
  std::vector<double> z(n);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = static_cast<double>(av[r * n + j]) * inv_t;
      if (mask) z[j] += static_cast<double>((*mask)[r * n + j]);
      mx = std::max(mx, z[j]);
    }
    if (!std::isfinite(mx)) g.shape_error("softmax", "row " + std::to_string(r) + " is fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = std::exp(z[j] - mx);
      total += z[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<float>(z[j] / total);
  }
  const Var self{static_cast<std::uint32_t>(g.size())};
  return g.record("softmax", std::move(out), {a}, [a, self, n, rows, inv_t](Graph& gr, const Tensor& d) {
    const Tensor& y = gr.value(self);
    Tensor da(d.dims());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(d[r * n + j]) * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        da[r * n + j] = static_cast<float>(y[r * n + j] * (d[r * n + j] - dot) * inv_t);
      }
    }
    gr.accumulate_grad(a, da);
  });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, float eps) {
  const Tensor& xv = g.value(x);
  const Tensor& gv = g.value(gamma);
  const Tensor& bv = g.value(beta);
  if (xv.rank() == 0 || gv.rank() != 1 || bv.rank() != 1 || gv.dim(0) != xv.dims().back() ||
      bv.dim(0) != xv.dims().back()) {
    g.shape_error("layer_norm", "x " + to_string(xv.dims()) + ", gamma " + to_string(gv.dims()) + ", beta " +
                                    to_string(bv.dims()));
  }
  const std::size_t n = xv.dims().back();
  const std::size_t rows = xv.size() / n;
  Tensor xhat(xv.dims());
  std::vector<double> inv_std(rows);
  Tensor out(xv.dims());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + static_cast<double>(eps));
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * inv_std[r];
      xhat[r * n + j] = static_cast<float>(h);
      out[r * n + j] = static_cast<float>(h * gv[j] + bv[j]);
    }
  }
  return g.record("layer_norm", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows](
                      Graph& gr, const Tensor& d) {
                    const Tensor& gv2 = gr.value(gamma);
                    if (gr.requires_grad(x)) {
                      Tensor dx(d.dims());
                      for (std::size_t r = 0; r < rows; ++r) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dh = static_cast<double>(d[r * n + j]) * gv2[j];
                          m1 += dh;
                          m2 += dh * xhat[r * n + j];
                        }
                        m1 /= static_cast<double>(n);
                        m2 /= static_cast<double>(n);
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dh = static_cast<double>(d[r * n + j]) * gv2[j];
                          dx[r * n + j] = static_cast<float>(inv_std[r] * (dh - m1 - xhat[r * n + j] * m2));
                        }
                      }
                      gr.accumulate_grad(x, dx);
                    }
                    if (gr.requires_grad(gamma)) {
                      std::vector<double> acc(n, 0.0);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < n; ++j)
                          acc[j] += static_cast<double>(d[r * n + j]) * xhat[r * n + j];
                      Tensor dg({n});
                      for (std::size_t j = 0; j < n; ++j) dg[j] = static_cast<float>(acc[j]);
                      gr.accumulate_grad(gamma, dg);
                    }
                    if (gr.requires_grad(beta)) {
                      Tensor db({n});
                      kernels::column_sum(d.data(), rows, n, db.data());
                      gr.accumulate_grad(beta, db);
                    }
                  });
}

Var gelu(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.dims());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = gelu_value(xv[i]);
  return g.record("gelu", std::move(out), {x}, [x](Graph& gr, const Tensor& d) {
    const Tensor& v = gr.value(x);
    Tensor dx(d.dims());
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double t = v[i];
      const double cdf = 0.5 * (1.0 + std::erf(t / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * t * t);
      dx[i] = static_cast<float>(d[i] * (cdf + t * pdf));
    }
    gr.accumulate_grad(x, dx);
  });
}

Var mean(Graph& g, Var a, std::size_t axis) {
  const Tensor& av = g.value(a);
  if (axis >= av.rank()) g.shape_error("mean", "axis " + std::to_string(axis) + " of " + to_string(av.dims()));
  const AxisView v = axis_view(av.dims(), axis);
  if (v.extent == 0) g.shape_error("mean", "empty axis");
  Dims out_dims = av.dims();
  out_dims.erase(out_dims.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_dims.empty()) out_dims.push_back(1);
  Tensor out(out_dims);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      double acc = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) acc += av[(o * v.extent + e) * v.inner + in];
      out[o * v.inner + in] = static_cast<float>(acc / static_cast<double>(v.extent));
    }
  }
  return g.record("mean", std::move(out), {a}, [a, v](Graph& gr, const Tensor& d) {
    Tensor da(gr.dims(a));
    const double w = 1.0 / static_cast<double>(v.extent);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t e = 0; e < v.extent; ++e)
        for (std::size_t in = 0; in < v.inner; ++in)
          da[(o * v.extent + e) * v.inner + in] = static_cast<float>(d[o * v.inner + in] * w);
    gr.accumulate_grad(a, da);
  });
}

Var sum(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  double acc = 0.0;
  for (float x : av.values()) acc += x;
  return g.record("sum", Tensor::scalar(static_cast<float>(acc)), {a}, [a](Graph& gr, const Tensor& d) {
    gr.accumulate_grad(a, Tensor(gr.dims(a), d[0]));
  });
}

Var transpose(Graph& g, Var a) {
  const Tensor& av = g.value(a);
  if (av.rank() != 2) g.shape_error("transpose", "expects rank 2, got " + to_string(av.dims()));
  return g.record("transpose", transpose2d(av), {a},
                  [a](Graph& gr, const Tensor& d) { gr.accumulate_grad(a, transpose2d(d)); });
}

Var reshape(Graph& g, Var a, Dims dims) {
  const Tensor& av = g.value(a);
  if (product(dims) != av.size()) g.shape_error("reshape", to_string(av.dims()) + " -> " + to_string(dims));
  return g.record("reshape", av.reshaped(std::move(dims)), {a}, [a](Graph& gr, const Tensor& d) {
    gr.accumulate_grad(a, d.reshaped(gr.dims(a)));
  });
}

Var bilinear_resize(Graph& g, Var x, std::size_t out_h, std::size_t out_w) {
  const Tensor& xv = g.value(x);
  if (xv.rank() != 3 || out_h == 0 || out_w == 0) {
    g.shape_error("bilinear_resize", "input " + to_string(xv.dims()) + " -> " + std::to_string(out_h) + "x" +
                                         std::to_string(out_w));
  }
  return g.record("bilinear_resize", expres::bilinear_resize(xv, out_h, out_w), {x},
                  [x, out_h, out_w](Graph& gr, const Tensor& d) {
                    const Dims& in = gr.dims(x);
                    const std::size_t c = in[0], h = in[1], w = in[2];
                    const auto ty = bilinear_taps(h, out_h);
                    const auto tx = bilinear_taps(w, out_w);
                    std::vector<double> acc(c * h * w, 0.0);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      double* dst = acc.data() + ch * h * w;
                      const float* src = d.data() + ch * out_h * out_w;
                      for (std::size_t oy = 0; oy < out_h; ++oy) {
                        const auto& y = ty[oy];
                        for (std::size_t ox = 0; ox < out_w; ++ox) {
                          const auto& t = tx[ox];
                          const double gval = src[oy * out_w + ox];
                          dst[y.i0 * w + t.i0] += gval * y.w0 * t.w0;
                          dst[y.i0 * w + t.i1] += gval * y.w0 * t.w1;
                          dst[y.i1 * w + t.i0] += gval * y.w1 * t.w0;
                          dst[y.i1 * w + t.i1] += gval * y.w1 * t.w1;
                        }
                      }
                    }
                    Tensor dx(in);
                    for (std::size_t i = 0; i < acc.size(); ++i) dx[i] = static_cast<float>(acc[i]);
                    gr.accumulate_grad(x, dx);
                  });
}

Var cross_entropy(Graph& g, Var logits, const std::vector<int>& targets) {
  const Tensor& lv = g.value(logits);
  if (lv.rank() != 2 || lv.dim(0) != targets.size() || lv.dim(0) == 0) {
    g.shape_error("cross_entropy", "logits " + to_string(lv.dims()) + " with " + std::to_string(targets.size()) +
                                       " targets");
  }
  const std::size_t b = lv.dim(0), c = lv.dim(1);
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw ContractError("cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(c) + ")");
    }
  }
  Tensor probs(lv.dims());
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const float* row = lv.data() + r * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[r]];
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = static_cast<float>(std::exp(row[j] - lse));
  }
  return g.record("cross_entropy", Tensor::scalar(static_cast<float>(total / static_cast<double>(b))), {logits},
                  [logits, probs = std::move(probs), targets, b, c](Graph& gr, const Tensor& d) {
                    Tensor dl(probs.dims());
                    const double w = static_cast<double>(d[0]) / static_cast<double>(b);
                    for (std::size_t r = 0; r < b; ++r) {
                      for (std::size_t j = 0; j < c; ++j) {
                        const double onehot = static_cast<int>(j) == targets[r] ? 1.0 : 0.0;
                        dl[r * c + j] = static_cast<float>((probs[r * c + j] - onehot) * w);
                      }
                    }
                    gr.accumulate_grad(logits, dl);
                  });
}

}  // namespace expres::ops
