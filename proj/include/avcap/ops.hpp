#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "avcap/rng.hpp"
#include "avcap/tensor.hpp"

namespace avcap {

// Boolean attention mask, row-major [rows x cols]; true means attendable.
struct Mask {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> v;

  bool at(std::size_t r, std::size_t c) const { return v[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool b) { v[r * cols + c] = b ? 1 : 0; }

  static Mask all(std::size_t r, std::size_t c, bool value = true) {
    Mask m;
    m.rows = r;
    m.cols = c;
    m.v.assign(r * c, value ? 1 : 0);
    return m;
  }

  // Lower-triangular mask for autoregressive self-attention.
  static Mask causal(std::size_t n) {
    Mask m = all(n, n, false);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
  }

  // Every query may attend to every valid key.
  static Mask keys_valid(std::size_t rows, const std::vector<std::uint8_t>& key_valid) {
    Mask m;
    m.rows = rows;
    m.cols = key_valid.size();
    m.v.resize(rows * key_valid.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < key_valid.size(); ++c) m.v[r * m.cols + c] = key_valid[c];
    return m;
  }

  Mask and_keys(const std::vector<std::uint8_t>& key_valid) const {
    Mask m = *this;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        if (!key_valid[c]) m.set(r, c, false);
    return m;
  }
};

namespace detail {

template <typename S>
bool want_grad(const TensorT<S>& t) {
  return grad_enabled() && t.requires_grad;
}

template <typename S>
TensorT<S> make_out(std::vector<std::size_t> dims, bool rg) {
  return TensorT<S>::zeros(std::move(dims), rg);
}

template <typename S>
void attach(TensorT<S>& out, std::vector<TensorT<S>> parents, std::function<void()> fn) {
  if (!out.requires_grad) return;
  out.node = std::make_shared<NodeT<S>>();
  out.node->parents = std::move(parents);
  out.node->backprop = std::move(fn);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.same_shape(b), "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  TensorT<S> out = detail::make_out<S>(a.dims, detail::want_grad(a) || detail::want_grad(b));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  detail::attach(out, {a, b}, [ga = a.grad, gb = b.grad, go = out.grad, n, ra = a.requires_grad, rb = b.requires_grad] {
    if (ra)
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += (*go)[i];
    if (rb)
      for (std::size_t i = 0; i < n; ++i) (*gb)[i] += (*go)[i];
  });
  return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.same_shape(b), "sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  TensorT<S> out = detail::make_out<S>(a.dims, detail::want_grad(a) || detail::want_grad(b));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  detail::attach(out, {a, b}, [ga = a.grad, gb = b.grad, go = out.grad, n, ra = a.requires_grad, rb = b.requires_grad] {
    if (ra)
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += (*go)[i];
    if (rb)
      for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= (*go)[i];
  });
  return out;
}

// Elementwise product.
template <typename S>
TensorT<S> hadamard(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.same_shape(b), "hadamard: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  TensorT<S> out = detail::make_out<S>(a.dims, detail::want_grad(a) || detail::want_grad(b));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  detail::attach(out, {a, b},
                 [ga = a.grad, gb = b.grad, da = a.data, db = b.data, go = out.grad, n, ra = a.requires_grad,
                  rb = b.requires_grad] {
                   if (ra)
                     for (std::size_t i = 0; i < n; ++i) (*ga)[i] += (*go)[i] * (*db)[i];
                   if (rb)
                     for (std::size_t i = 0; i < n; ++i) (*gb)[i] += (*go)[i] * (*da)[i];
                 });
  return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  TensorT<S> out = detail::make_out<S>(a.dims, detail::want_grad(a));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
  detail::attach(out, {a}, [ga = a.grad, go = out.grad, n, c] {
    for (std::size_t i = 0; i < n; ++i) (*ga)[i] += (*go)[i] * c;
  });
  return out;
}

// x:[T x D] + bias:[D] broadcast over rows.
template <typename S>
TensorT<S> add_rowwise(const TensorT<S>& x, const TensorT<S>& bias) {
  detail::require(x.rank() == 2 && bias.rank() == 1 && bias.dims[0] == x.dims[1],
                  "add_rowwise: want [TxD] + [D], got " + x.shape_str() + " + " + bias.shape_str());
  TensorT<S> out = detail::make_out<S>(x.dims, detail::want_grad(x) || detail::want_grad(bias));
  const std::size_t t = x.dims[0], d = x.dims[1];
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < d; ++c) (*out.data)[r * d + c] = (*x.data)[r * d + c] + (*bias.data)[c];
  detail::attach(out, {x, bias},
                 [gx = x.grad, gb = bias.grad, go = out.grad, t, d, rx = x.requires_grad, rb = bias.requires_grad] {
                   if (rx)
                     for (std::size_t i = 0; i < t * d; ++i) (*gx)[i] += (*go)[i];
                   if (rb)
                     for (std::size_t r = 0; r < t; ++r)
                       for (std::size_t c = 0; c < d; ++c) (*gb)[c] += (*go)[r * d + c];
                 });
  return out;
}

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dims[1] == b.dims[0],
                  "matmul: incompatible " + a.shape_str() + " x " + b.shape_str());
  const std::size_t r = a.dims[0], k = a.dims[1], c = b.dims[1];
  TensorT<S> out = detail::make_out<S>({r, c}, detail::want_grad(a) || detail::want_grad(b));
  const S* pa = a.data->data();
  const S* pb = b.data->data();
  S* po = out.data->data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const S av = pa[i * k + kk];
      if (av == S(0)) continue;
      const S* brow = pb + kk * c;
      S* orow = po + i * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  detail::attach(out, {a, b},
                 [ga = a.grad, gb = b.grad, da = a.data, db = b.data, go = out.grad, r, k, c, ra = a.requires_grad,
                  rb = b.requires_grad] {
                   const S* pg = go->data();
                   if (ra) {
                     // dA = dY * B^T
                     S* pga = ga->data();
                     const S* pb2 = db->data();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < c; ++j) {
                         const S gv = pg[i * c + j];
                         if (gv == S(0)) continue;
                         for (std::size_t kk = 0; kk < k; ++kk) pga[i * k + kk] += gv * pb2[kk * c + j];
                       }
                   }
                   if (rb) {
                     // dB = A^T * dY
                     S* pgb = gb->data();
                     const S* pa2 = da->data();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t kk = 0; kk < k; ++kk) {
                         const S av = pa2[i * k + kk];
                         if (av == S(0)) continue;
                         for (std::size_t j = 0; j < c; ++j) pgb[kk * c + j] += av * pg[i * c + j];
                       }
                   }
                 });
  return out;
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& x) {
  detail::require(x.rank() == 2, "transpose: rank-2 expected, got " + x.shape_str());
  const std::size_t r = x.dims[0], c = x.dims[1];
  TensorT<S> out = detail::make_out<S>({c, r}, detail::want_grad(x));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) (*out.data)[j * r + i] = (*x.data)[i * c + j];
  detail::attach(out, {x}, [gx = x.grad, go = out.grad, r, c] {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += (*go)[j * r + i];
  });
  return out;
}

// y = xW + b, row-wise.
template <typename S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.dims[1] == w.dims[0],
                  "linear: incompatible " + x.shape_str() + " x " + w.shape_str());
  detail::require(b.rank() == 1 && b.dims[0] == w.dims[1],
                  "linear: bias " + b.shape_str() + " does not match output width");
  return add_rowwise(matmul(x, w), b);
}

template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
  TensorT<S> out = detail::make_out<S>(x.dims, detail::want_grad(x));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] > S(0) ? (*x.data)[i] : S(0);
  detail::attach(out, {x}, [gx = x.grad, dx = x.data, go = out.grad, n] {
    for (std::size_t i = 0; i < n; ++i)
      if ((*dx)[i] > S(0)) (*gx)[i] += (*go)[i];
  });
  return out;
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& x) {
  TensorT<S> out = detail::make_out<S>(x.dims, detail::want_grad(x));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>((*x.data)[i]);
    (*out.data)[i] = static_cast<S>(1.0 / (1.0 + std::exp(-v)));
  }
  detail::attach(out, {x}, [gx = x.grad, dy = out.data, go = out.grad, n] {
    for (std::size_t i = 0; i < n; ++i) {
      const S y = (*dy)[i];
      (*gx)[i] += (*go)[i] * y * (S(1) - y);
    }
  });
  return out;
}

// Softmax over the last axis of any rank >= 1, computed with max subtraction.
// An optional mask (rank-2 inputs only) zeroes out disallowed positions; a row
// with every position masked is a contract violation.
template <typename S>
TensorT<S> softmax(const TensorT<S>& x, const Mask* mask = nullptr) {
  detail::require(x.rank() >= 1 && x.dims.back() >= 1, "softmax: empty last axis in " + x.shape_str());
  const std::size_t k = x.dims.back();
  const std::size_t rows = x.numel() / k;
  if (mask) {
    if (x.rank() != 2) throw ShapeError("softmax: mask requires rank-2 input");
    if (mask->rows != rows || mask->cols != k) throw ShapeError("softmax: mask shape mismatch");
  }
  TensorT<S> out = detail::make_out<S>(x.dims, detail::want_grad(x));
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = x.data->data() + r * k;
    S* o = out.data->data() + r * k;
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      if ((!mask || mask->at(r, j)) && in[j] > mx) mx = in[j];
    if (mx == -std::numeric_limits<S>::infinity())
      throw ContractError("softmax: row " + std::to_string(r) + " has every position masked");
    S sum = S(0);
    for (std::size_t j = 0; j < k; ++j) {
      if (mask && !mask->at(r, j)) {
        o[j] = S(0);
        continue;
      }
      o[j] = static_cast<S>(std::exp(static_cast<double>(in[j] - mx)));
      sum += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= sum;
  }
  detail::attach(out, {x}, [gx = x.grad, dy = out.data, go = out.grad, rows, k] {
    for (std::size_t r = 0; r < rows; ++r) {
      const S* y = dy->data() + r * k;
      const S* g = go->data() + r * k;
      S dot = S(0);
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
      S* gi = gx->data() + r * k;
      for (std::size_t j = 0; j < k; ++j) gi[j] += y[j] * (g[j] - dot);
    }
  });
  return out;
}

// Log-softmax over the last axis; the numerically safe path for likelihoods.
template <typename S>
TensorT<S> log_softmax(const TensorT<S>& x) {
  detail::require(x.rank() >= 1 && x.dims.back() >= 1, "log_softmax: empty last axis in " + x.shape_str());
  const std::size_t k = x.dims.back();
  const std::size_t rows = x.numel() / k;
  TensorT<S> out = detail::make_out<S>(x.dims, detail::want_grad(x));
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = x.data->data() + r * k;
    S* o = out.data->data() + r * k;
    S mx = in[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(in[j] - mx));
    const S lse = mx + static_cast<S>(std::log(sum));
    for (std::size_t j = 0; j < k; ++j) o[j] = in[j] - lse;
  }
  detail::attach(out, {x}, [gx = x.grad, dy = out.data, go = out.grad, rows, k] {
    for (std::size_t r = 0; r < rows; ++r) {
      const S* y = dy->data() + r * k;
      const S* g = go->data() + r * k;
      S gsum = S(0);
      for (std::size_t j = 0; j < k; ++j) gsum += g[j];
      S* gi = gx->data() + r * k;
      for (std::size_t j = 0; j < k; ++j)
        gi[j] += g[j] - static_cast<S>(std::exp(static_cast<double>(y[j]))) * gsum;
    }
  });
  return out;
}

// Row-wise normalization to zero mean and unit population variance, followed
// by the affine gain/bias.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias, double eps = 1e-5) {
  detail::require(x.rank() == 2 && x.dims[1] >= 1, "layer_norm: want [TxD] with D>=1, got " + x.shape_str());
  detail::require(gain.rank() == 1 && gain.dims[0] == x.dims[1] && bias.rank() == 1 && bias.dims[0] == x.dims[1],
                  "layer_norm: gain/bias width mismatch");
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t t = x.dims[0], d = x.dims[1];
  TensorT<S> out =
      detail::make_out<S>(x.dims, detail::want_grad(x) || detail::want_grad(gain) || detail::want_grad(bias));
  // Keep normalized rows and inverse stddevs for the backward pass.
  auto xhat = std::make_shared<std::vector<S>>(t * d);
  auto inv_sd = std::make_shared<std::vector<S>>(t);
  for (std::size_t r = 0; r < t; ++r) {
    const S* in = x.data->data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= d;
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = in[c] - mean;
      var += dv * dv;
    }
    var /= d;
    const S isd = static_cast<S>(1.0 / std::sqrt(var + eps));
    (*inv_sd)[r] = isd;
    for (std::size_t c = 0; c < d; ++c) {
      const S xh = static_cast<S>((in[c] - mean)) * isd;
      (*xhat)[r * d + c] = xh;
      (*out.data)[r * d + c] = xh * (*gain.data)[c] + (*bias.data)[c];
    }
  }
  detail::attach(out, {x, gain, bias},
                 [gx = x.grad, gg = gain.grad, gb = bias.grad, dgain = gain.data, go = out.grad, xhat, inv_sd, t, d,
                  rx = x.requires_grad, rg = gain.requires_grad, rb = bias.requires_grad] {
                   for (std::size_t r = 0; r < t; ++r) {
                     const S* g = go->data() + r * d;
                     const S* xh = xhat->data() + r * d;
                     if (rg || rb)
                       for (std::size_t c = 0; c < d; ++c) {
                         if (rg) (*gg)[c] += g[c] * xh[c];
                         if (rb) (*gb)[c] += g[c];
                       }
                     if (rx) {
                       // dxhat = g * gain; dx = isd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                       S sum_dh = S(0), sum_dh_xh = S(0);
                       for (std::size_t c = 0; c < d; ++c) {
                         const S dh = g[c] * (*dgain)[c];
                         sum_dh += dh;
                         sum_dh_xh += dh * xh[c];
                       }
                       const S m1 = sum_dh / static_cast<S>(d);
                       const S m2 = sum_dh_xh / static_cast<S>(d);
                       S* gi = gx->data() + r * d;
                       for (std::size_t c = 0; c < d; ++c) {
                         const S dh = g[c] * (*dgain)[c];
                         gi[c] += (*inv_sd)[r] * (dh - m1 - xh[c] * m2);
                       }
                     }
                   }
                 });
  return out;
}

// Temporal convolution, stride 1. With same_padding (odd width required) the
// output keeps length T via zero padding; otherwise the valid region T-W+1.
template <typename S>
TensorT<S> conv1d(const TensorT<S>& x, const TensorT<S>& kernels, bool same_padding = true) {
  detail::require(x.rank() == 2, "conv1d: input must be [TxDin], got " + x.shape_str());
  detail::require(kernels.rank() == 3, "conv1d: kernels must be [WxDinxDout], got " + kernels.shape_str());
  const std::size_t t = x.dims[0], din = x.dims[1];
  const std::size_t w = kernels.dims[0], kin = kernels.dims[1], dout = kernels.dims[2];
  if (t == 0) throw ShapeError("conv1d: empty input");
  detail::require(kin == din, "conv1d: kernel input width mismatch");
  if (same_padding && w % 2 == 0) throw ConfigError("conv1d: same padding requires odd kernel width");
  if (!same_padding && t < w) throw ShapeError("conv1d: input shorter than kernel in valid mode");
  const std::size_t tout = same_padding ? t : t - w + 1;
  const std::ptrdiff_t off = same_padding ? -static_cast<std::ptrdiff_t>((w - 1) / 2) : 0;
  TensorT<S> out = detail::make_out<S>({tout, dout}, detail::want_grad(x) || detail::want_grad(kernels));
  for (std::size_t ti = 0; ti < tout; ++ti)
    for (std::size_t wi = 0; wi < w; ++wi) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(ti + wi) + off;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
      const S* xr = x.data->data() + static_cast<std::size_t>(src) * din;
      const S* kr = kernels.data->data() + wi * din * dout;
      S* o = out.data->data() + ti * dout;
      for (std::size_t c = 0; c < din; ++c) {
        const S xv = xr[c];
        if (xv == S(0)) continue;
        const S* kc = kr + c * dout;
        for (std::size_t oc = 0; oc < dout; ++oc) o[oc] += xv * kc[oc];
      }
    }
  detail::attach(out, {x, kernels},
                 [gx = x.grad, gk = kernels.grad, dx = x.data, dk = kernels.data, go = out.grad, t, din, w, dout, tout,
                  off, rx = x.requires_grad, rk = kernels.requires_grad] {
                   for (std::size_t ti = 0; ti < tout; ++ti)
                     for (std::size_t wi = 0; wi < w; ++wi) {
                       const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(ti + wi) + off;
                       if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
                       const S* g = go->data() + ti * dout;
                       for (std::size_t c = 0; c < din; ++c) {
                         const std::size_t xi = static_cast<std::size_t>(src) * din + c;
                         const S* kc = dk->data() + (wi * din + c) * dout;
                         if (rx) {
                           S acc = S(0);
                           for (std::size_t oc = 0; oc < dout; ++oc) acc += g[oc] * kc[oc];
                           (*gx)[xi] += acc;
                         }
                         if (rk) {
                           const S xv = (*dx)[xi];
                           if (xv == S(0)) continue;
                           S* gkc = gk->data() + (wi * din + c) * dout;
                           for (std::size_t oc = 0; oc < dout; ++oc) gkc[oc] += xv * g[oc];
                         }
                       }
                     }
                 });
  return out;
}

// Mean over the time axis, optionally restricted to valid rows.
template <typename S>
TensorT<S> mean_pool(const TensorT<S>& x, const std::vector<std::uint8_t>* row_valid = nullptr) {
  detail::require(x.rank() == 2, "mean_pool: want [TxD], got " + x.shape_str());
  const std::size_t t = x.dims[0], d = x.dims[1];
  if (t == 0) throw ContractError("mean_pool: empty time axis");
  if (row_valid && row_valid->size() != t) throw ShapeError("mean_pool: validity mask length mismatch");
  std::size_t n = 0;
  for (std::size_t r = 0; r < t; ++r)
    if (!row_valid || (*row_valid)[r]) ++n;
  if (n == 0) throw ContractError("mean_pool: no valid rows");
  TensorT<S> out = detail::make_out<S>({d}, detail::want_grad(x));
  for (std::size_t r = 0; r < t; ++r) {
    if (row_valid && !(*row_valid)[r]) continue;
    for (std::size_t c = 0; c < d; ++c) (*out.data)[c] += (*x.data)[r * d + c];
  }
  for (std::size_t c = 0; c < d; ++c) (*out.data)[c] /= static_cast<S>(n);
  std::vector<std::uint8_t> valid_copy = row_valid ? *row_valid : std::vector<std::uint8_t>(t, 1);
  detail::attach(out, {x}, [gx = x.grad, go = out.grad, valid = std::move(valid_copy), t, d, n] {
    for (std::size_t r = 0; r < t; ++r) {
      if (!valid[r]) continue;
      for (std::size_t c = 0; c < d; ++c) (*gx)[r * d + c] += (*go)[c] / static_cast<S>(n);
    }
  });
  return out;
}

template <typename S>
TensorT<S> concat_cols(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.rank() == b.rank() && (a.rank() == 1 || (a.rank() == 2 && a.dims[0] == b.dims[0])),
                  "concat_cols: incompatible " + a.shape_str() + " and " + b.shape_str());
  const bool vec = a.rank() == 1;
  const std::size_t t = vec ? 1 : a.dims[0];
  const std::size_t da = vec ? a.dims[0] : a.dims[1];
  const std::size_t db = vec ? b.dims[0] : b.dims[1];
  std::vector<std::size_t> dims = vec ? std::vector<std::size_t>{da + db} : std::vector<std::size_t>{t, da + db};
  TensorT<S> out = detail::make_out<S>(dims, detail::want_grad(a) || detail::want_grad(b));
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t c = 0; c < da; ++c) (*out.data)[r * (da + db) + c] = (*a.data)[r * da + c];
    for (std::size_t c = 0; c < db; ++c) (*out.data)[r * (da + db) + da + c] = (*b.data)[r * db + c];
  }
  detail::attach(out, {a, b},
                 [ga = a.grad, gb = b.grad, go = out.grad, t, da, db, ra = a.requires_grad, rb = b.requires_grad] {
                   for (std::size_t r = 0; r < t; ++r) {
                     if (ra)
                       for (std::size_t c = 0; c < da; ++c) (*ga)[r * da + c] += (*go)[r * (da + db) + c];
                     if (rb)
                       for (std::size_t c = 0; c < db; ++c) (*gb)[r * db + c] += (*go)[r * (da + db) + da + c];
                   }
                 });
  return out;
}

template <typename S>
TensorT<S> slice_cols(const TensorT<S>& x, std::size_t start, std::size_t len) {
  detail::require(x.rank() == 2, "slice_cols: want [TxD], got " + x.shape_str());
  const std::size_t t = x.dims[0], d = x.dims[1];
  detail::require(len >= 1 && start + len <= d, "slice_cols: range out of bounds");
  TensorT<S> out = detail::make_out<S>({t, len}, detail::want_grad(x));
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < len; ++c) (*out.data)[r * len + c] = (*x.data)[r * d + start + c];
  detail::attach(out, {x}, [gx = x.grad, go = out.grad, t, d, start, len] {
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t c = 0; c < len; ++c) (*gx)[r * d + start + c] += (*go)[r * len + c];
  });
  return out;
}

// Rows of `table` selected by token id.
template <typename S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int>& ids) {
  detail::require(table.rank() == 2, "embedding: table must be [VxD]");
  const std::size_t v = table.dims[0], d = table.dims[1];
  if (ids.empty()) throw ContractError("embedding: empty id sequence");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ContractError("embedding: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(v));
  TensorT<S> out = detail::make_out<S>({ids.size(), d}, detail::want_grad(table));
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) (*out.data)[r * d + c] = (*table.data)[static_cast<std::size_t>(ids[r]) * d + c];
  detail::attach(out, {table}, [gt = table.grad, go = out.grad, ids, d] {
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) (*gt)[static_cast<std::size_t>(ids[r]) * d + c] += (*go)[r * d + c];
  });
  return out;
}

// Inverted dropout; identity when disabled or rate 0 (no RNG draws consumed).
template <typename S>
TensorT<S> dropout(const TensorT<S>& x, double rate, Rng* rng, bool enabled) {
  if (!enabled || rate <= 0.0) return x;
  if (!(rate < 1.0)) throw ConfigError("dropout: rate must be in [0,1)");
  if (!rng) throw ContractError("dropout: enabled without a random source");
  const std::size_t n = x.numel();
  auto keep = std::make_shared<std::vector<std::uint8_t>>(n);
  const S inv_keep = static_cast<S>(1.0 / (1.0 - rate));
  TensorT<S> out = detail::make_out<S>(x.dims, detail::want_grad(x));
  for (std::size_t i = 0; i < n; ++i) {
    const bool k = rng->uniform() >= rate;
    (*keep)[i] = k;
    (*out.data)[i] = k ? (*x.data)[i] * inv_keep : S(0);
  }
  detail::attach(out, {x}, [gx = x.grad, go = out.grad, keep, n, inv_keep] {
    for (std::size_t i = 0; i < n; ++i)
      if ((*keep)[i]) (*gx)[i] += (*go)[i] * inv_keep;
  });
  return out;
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& x) {
  TensorT<S> out = detail::make_out<S>({1}, detail::want_grad(x));
  S acc = S(0);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) acc += (*x.data)[i];
  (*out.data)[0] = acc;
  detail::attach(out, {x}, [gx = x.grad, go = out.grad, n] {
    for (std::size_t i = 0; i < n; ++i) (*gx)[i] += (*go)[0];
  });
  return out;
}

// [D] -> [1xD] copy so vector results can feed row-oriented ops.
template <typename S>
TensorT<S> as_row(const TensorT<S>& x) {
  detail::require(x.rank() == 1, "as_row: rank-1 expected, got " + x.shape_str());
  const std::size_t d = x.dims[0];
  TensorT<S> out = detail::make_out<S>({1, d}, detail::want_grad(x));
  *out.data = *x.data;
  detail::attach(out, {x}, [gx = x.grad, go = out.grad, d] {
    for (std::size_t c = 0; c < d; ++c) (*gx)[c] += (*go)[c];
  });
  return out;
}

// Binary cross entropy on a scalar probability; the probability is clamped to
// [1e-7, 1-1e-7] before the logs and the gradient vanishes where clamping was
// active.
template <typename S>
TensorT<S> binary_cross_entropy(const TensorT<S>& prob, int target) {
  if (prob.numel() != 1) throw ContractError("binary_cross_entropy: probability must be scalar");
  if (target != 0 && target != 1) throw ContractError("binary_cross_entropy: target must be 0 or 1");
  const double lo = 1e-7, hi = 1.0 - 1e-7;
  const double p_raw = static_cast<double>((*prob.data)[0]);
  const double p = std::min(hi, std::max(lo, p_raw));
  const bool clamped = p_raw < lo || p_raw > hi;
  TensorT<S> out = detail::make_out<S>({1}, detail::want_grad(prob));
  (*out.data)[0] = static_cast<S>(-(target * std::log(p) + (1 - target) * std::log(1.0 - p)));
  detail::attach(out, {prob}, [gp = prob.grad, go = out.grad, p, target, clamped] {
    if (clamped) return;
    (*gp)[0] += (*go)[0] * static_cast<S>((p - target) / (p * (1.0 - p)));
  });
  return out;
}

// Projection parameters of one attention layer. Query/key/value widths may
// differ; all are mapped into the query-side model width.
template <typename S>
struct AttentionWeightsT {
  TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product multi-head attention. `mask` rows follow the query
// sequence, columns the key sequence; absent mask means every position is
// attendable (same arithmetic as an all-true mask). Per-head weight matrices
// are appended to *attn_out when provided.
template <typename S>
TensorT<S> multi_head_attention(const TensorT<S>& query, const TensorT<S>& key, const TensorT<S>& value,
                                const AttentionWeightsT<S>& w, std::size_t heads, const Mask* mask = nullptr,
                                std::vector<TensorT<S>>* attn_out = nullptr) {
  detail::require(query.rank() == 2 && key.rank() == 2 && value.rank() == 2, "mha: rank-2 inputs expected");
  detail::require(key.dims[0] == value.dims[0], "mha: key/value lengths differ");
  const std::size_t dm = w.wq.dims[1];
  if (heads == 0 || dm % heads != 0)
    throw ConfigError("mha: model width " + std::to_string(dm) + " not divisible by " + std::to_string(heads) +
                      " heads");
  if (mask && (mask->rows != query.dims[0] || mask->cols != key.dims[0]))
    throw ShapeError("mha: mask shape mismatch");
  TensorT<S> q = linear(query, w.wq, w.bq);
  TensorT<S> k = linear(key, w.wk, w.bk);
  TensorT<S> v = linear(value, w.wv, w.bv);
  const std::size_t dh = dm / heads;
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  TensorT<S> merged;
  for (std::size_t h = 0; h < heads; ++h) {
    TensorT<S> qh = slice_cols(q, h * dh, dh);
    TensorT<S> kh = slice_cols(k, h * dh, dh);
    TensorT<S> vh = slice_cols(v, h * dh, dh);
    TensorT<S> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    TensorT<S> attn = softmax(scores, mask);
    if (attn_out) attn_out->push_back(attn);
    TensorT<S> oh = matmul(attn, vh);
    merged = h == 0 ? oh : concat_cols(merged, oh);
  }
  return linear(merged, w.wo, w.bo);
}

}  // namespace avcap
