// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "msdemucs/nn.hpp"

#include <cmath>
#include <random>

#include "msdemucs/dsp.hpp"
#include "msdemucs/error.hpp"

namespace msd::nn {

using ag::grad_buffer;
using ag::make_result;
using ag::shape_str;
using ag::TensorImpl;

namespace {

void require_rank(const char* op, const Tensor& t, std::size_t rank,
                  const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

void require_bias(const char* op, const Tensor& bias, std::size_t channels) {
  if (bias.defined() && (bias.numel() != channels)) {
    throw ShapeError(std::string(op) + ": bias has " +
                     std::to_string(bias.numel()) + " entries, expected " +
                     std::to_string(channels));
  }
}

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dOptions& opts) {
  require_rank("conv1d", x, 3, "input");
  require_rank("conv1d", weight, 3, "weight");
  const std::size_t B = x.dim(0), cin = x.dim(1), T = x.dim(2);
  const std::size_t cout = weight.dim(0), K = weight.dim(2), S = opts.stride;
  if (weight.dim(1) != cin) {
    throw ShapeError("conv1d: input has " + std::to_string(cin) +
                     " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  require_bias("conv1d", bias, cout);
  if (S == 0) throw InvalidArgument("conv1d: stride must be positive");
  const std::size_t padded = T + opts.pad_left + opts.pad_right;
  if (padded < K) {
    throw ShapeError("conv1d: time extent " + std::to_string(T) +
                     " is shorter than kernel " + std::to_string(K));
  }
  const std::size_t tout = (padded - K) / S + 1;
  const long long pl = static_cast<long long>(opts.pad_left);
  const long long tl = static_cast<long long>(T);

  std::vector<double> out(B * cout * tout, 0.0);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* orow = &out[(b * cout + o) * tout];
      const double bv = bias.defined() ? bias.data()[o] : 0.0;
      for (std::size_t t = 0; t < tout; ++t) orow[t] = bv;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xrow = &xd[(b * cin + c) * T];
        const double* wrow = &wd[(o * cin + c) * K];
        for (std::size_t t = 0; t < tout; ++t) {
          const long long base = static_cast<long long>(t * S) - pl;
          double acc = 0.0;
          for (std::size_t k = 0; k < K; ++k) {
            const long long idx = base + static_cast<long long>(k);
            if (idx >= 0 && idx < tl) acc += wrow[k] * xrow[idx];
          }
          orow[t] += acc;
        }
      }
    }
  }
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      "conv1d", {B, cout, tout}, std::move(out), {x, weight, bias},
      [=](const TensorImpl& o) {
        const auto& g = o.grad;
        if (bi && bi->requires_grad) {
          auto& gb = grad_buffer(*bi);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < cout; ++oc)
              for (std::size_t t = 0; t < tout; ++t)
                gb[oc] += g[(b * cout + oc) * tout + t];
        }
        const bool need_x = xi->requires_grad, need_w = wi->requires_grad;
        if (!need_x && !need_w) return;
        std::vector<double>* gx = need_x ? &grad_buffer(*xi) : nullptr;
        std::vector<double>* gw = need_w ? &grad_buffer(*wi) : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t oc = 0; oc < cout; ++oc) {
            const double* grow = &g[(b * cout + oc) * tout];
            for (std::size_t c = 0; c < cin; ++c) {
              const double* xrow = &xi->data[(b * cin + c) * T];
              const double* wrow = &wi->data[(oc * cin + c) * K];
              double* gxrow = gx ? &(*gx)[(b * cin + c) * T] : nullptr;
              double* gwrow = gw ? &(*gw)[(oc * cin + c) * K] : nullptr;
              for (std::size_t t = 0; t < tout; ++t) {
                const double gv = grow[t];
                if (gv == 0.0) continue;
                const long long base = static_cast<long long>(t * S) - pl;
                for (std::size_t k = 0; k < K; ++k) {
                  const long long idx = base + static_cast<long long>(k);
                  if (idx < 0 || idx >= tl) continue;
                  if (gwrow) gwrow[k] += gv * xrow[idx];
                  if (gxrow) gxrow[idx] += gv * wrow[k];
                }
              }
            }
          }
        }
      });
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, std::size_t stride) {
  require_rank("conv_transpose1d", x, 3, "input");
  require_rank("conv_transpose1d", weight, 3, "weight");
  const std::size_t B = x.dim(0), cin = x.dim(1), T = x.dim(2);
  const std::size_t cout = weight.dim(1), K = weight.dim(2), S = stride;
  if (weight.dim(0) != cin) {
    throw ShapeError("conv_transpose1d: input has " + std::to_string(cin) +
                     " channels, weight expects " + std::to_string(weight.dim(0)));
  }
  require_bias("conv_transpose1d", bias, cout);
  if (S == 0 || T == 0) throw ShapeError("conv_transpose1d: empty input or stride");
  const std::size_t tout = (T - 1) * S + K;
  std::vector<double> out(B * cout * tout, 0.0);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* orow = &out[(b * cout + o) * tout];
      if (bias.defined()) {
        for (std::size_t s = 0; s < tout; ++s) orow[s] = bias.data()[o];
      }
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xrow = &xd[(b * cin + c) * T];
        const double* wrow = &wd[(c * cout + o) * K];
        for (std::size_t t = 0; t < T; ++t) {
          const double xv = xrow[t];
          double* dst = orow + t * S;
          for (std::size_t k = 0; k < K; ++k) dst[k] += xv * wrow[k];
        }
      }
    }
  }
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      "conv_transpose1d", {B, cout, tout}, std::move(out), {x, weight, bias},
      [=](const TensorImpl& o) {
        const auto& g = o.grad;
        if (bi && bi->requires_grad) {
          auto& gb = grad_buffer(*bi);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < cout; ++oc)
              for (std::size_t s = 0; s < tout; ++s)
                gb[oc] += g[(b * cout + oc) * tout + s];
        }
        const bool need_x = xi->requires_grad, need_w = wi->requires_grad;
        if (!need_x && !need_w) return;
        std::vector<double>* gx = need_x ? &grad_buffer(*xi) : nullptr;
        std::vector<double>* gw = need_w ? &grad_buffer(*wi) : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t oc = 0; oc < cout; ++oc) {
            const double* grow = &g[(b * cout + oc) * tout];
            for (std::size_t c = 0; c < cin; ++c) {
              const double* xrow = &xi->data[(b * cin + c) * T];
              const double* wrow = &wi->data[(c * cout + oc) * K];
              double* gxrow = gx ? &(*gx)[(b * cin + c) * T] : nullptr;
              double* gwrow = gw ? &(*gw)[(c * cout + oc) * K] : nullptr;
              for (std::size_t t = 0; t < T; ++t) {
                const double* gsrc = grow + t * S;
                if (gxrow) {
                  double acc = 0.0;
                  for (std::size_t k = 0; k < K; ++k) acc += gsrc[k] * wrow[k];
                  gxrow[t] += acc;
                }
                if (gwrow) {
                  const double xv = xrow[t];
                  for (std::size_t k = 0; k < K; ++k) gwrow[k] += xv * gsrc[k];
                }
              }
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opts) {
  require_rank("conv2d", x, 4, "input");
  require_rank("conv2d", weight, 4, "weight");
  const std::size_t B = x.dim(0), cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) +
                     " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  require_bias("conv2d", bias, cout);
  const std::size_t sh = opts.stride_h, sw = opts.stride_w;
  if (sh == 0 || sw == 0) throw InvalidArgument("conv2d: stride must be positive");
  const std::size_t ph = H + opts.pad_top + opts.pad_bottom;
  const std::size_t pw = W + opts.pad_left + opts.pad_right;
  if (ph < kh || pw < kw) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) +
                     " smaller than kernel after padding");
  }
  const std::size_t ho = (ph - kh) / sh + 1, wo = (pw - kw) / sw + 1;
  const long long pt = static_cast<long long>(opts.pad_top);
  const long long pleft = static_cast<long long>(opts.pad_left);
  const long long hl = static_cast<long long>(H), wl = static_cast<long long>(W);

  std::vector<double> out(B * cout * ho * wo, 0.0);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* oplane = &out[(b * cout + o) * ho * wo];
      const double bv = bias.defined() ? bias.data()[o] : 0.0;
      for (std::size_t i = 0; i < ho * wo; ++i) oplane[i] = bv;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xplane = &xd[(b * cin + c) * H * W];
        const double* wk = &wd[(o * cin + c) * kh * kw];
        for (std::size_t i = 0; i < ho; ++i) {
          for (std::size_t u = 0; u < kh; ++u) {
            const long long r = static_cast<long long>(i * sh + u) - pt;
            if (r < 0 || r >= hl) continue;
            const double* xrow = xplane + r * wl;
            double* orow = oplane + i * wo;
            for (std::size_t j = 0; j < wo; ++j) {
              const long long base = static_cast<long long>(j * sw) - pleft;
              double acc = 0.0;
              for (std::size_t v = 0; v < kw; ++v) {
                const long long col = base + static_cast<long long>(v);
                if (col >= 0 && col < wl) acc += wk[u * kw + v] * xrow[col];
              }
              orow[j] += acc;
            }
          }
        }
      }
    }
  }
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      "conv2d", {B, cout, ho, wo}, std::move(out), {x, weight, bias},
      [=](const TensorImpl& o) {
        const auto& g = o.grad;
        if (bi && bi->requires_grad) {
          auto& gb = grad_buffer(*bi);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < cout; ++oc)
              for (std::size_t i = 0; i < ho * wo; ++i)
                gb[oc] += g[(b * cout + oc) * ho * wo + i];
        }
        const bool need_x = xi->requires_grad, need_w = wi->requires_grad;
        if (!need_x && !need_w) return;
        std::vector<double>* gx = need_x ? &grad_buffer(*xi) : nullptr;
        std::vector<double>* gw = need_w ? &grad_buffer(*wi) : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t oc = 0; oc < cout; ++oc) {
            const double* gplane = &g[(b * cout + oc) * ho * wo];
            for (std::size_t c = 0; c < cin; ++c) {
              const double* xplane = &xi->data[(b * cin + c) * H * W];
              const double* wk = &wi->data[(oc * cin + c) * kh * kw];
              double* gxplane = gx ? &(*gx)[(b * cin + c) * H * W] : nullptr;
              double* gwk = gw ? &(*gw)[(oc * cin + c) * kh * kw] : nullptr;
              for (std::size_t i = 0; i < ho; ++i) {
                for (std::size_t u = 0; u < kh; ++u) {
                  const long long r = static_cast<long long>(i * sh + u) - pt;
                  if (r < 0 || r >= hl) continue;
                  for (std::size_t j = 0; j < wo; ++j) {
                    const double gv = gplane[i * wo + j];
                    if (gv == 0.0) continue;
                    const long long base = static_cast<long long>(j * sw) - pleft;
                    for (std::size_t v = 0; v < kw; ++v) {
                      const long long col = base + static_cast<long long>(v);
                      if (col < 0 || col >= wl) continue;
                      if (gwk) gwk[u * kw + v] += gv * xplane[r * wl + col];
                      if (gxplane) gxplane[r * wl + col] += gv * wk[u * kw + v];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training) {
  require_rank("batchnorm2d", x, 4, "input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.size() != C) {
    throw ShapeError("batchnorm2d: parameters do not match " +
                     std::to_string(C) + " channels");
  }
  const double n = static_cast<double>(B * HW);
  std::vector<double> mean(C), inv_std(C);
  const auto xd = x.data();
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      // Shifted by the first sample so a constant channel has an exact mean.
      const double shift = xd[c * HW];
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) s += xd[(b * C + c) * HW + i] - shift;
      const double mu = shift + s / n;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = xd[(b * C + c) * HW + i] - mu;
          v += d * d;
        }
      const double var = v / n;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = n > 1 ? v / (n - 1) : var;
      state.running_mean[c] =
          (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] =
          (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t k = (b * C + c) * HW + i;
        xhat[k] = (xd[k] - mean[c]) * inv_std[c];
        out[k] = gamma.data()[c] * xhat[k] + beta.data()[c];
      }
    }
  }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(
      "batchnorm2d", x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl& o) {
        const auto& g = o.grad;
        if (gi->requires_grad || bi->requires_grad) {
          auto& gg = grad_buffer(*gi);
          auto& gbeta = grad_buffer(*bi);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < HW; ++i) {
                const std::size_t k = (b * C + c) * HW + i;
                gg[c] += g[k] * xhat[k];
                gbeta[c] += g[k];
              }
        }
        if (!xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        for (std::size_t c = 0; c < C; ++c) {
          const double gam = gi->data[c];
          if (!training) {
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t i = 0; i < HW; ++i) {
                const std::size_t k = (b * C + c) * HW + i;
                gx[k] += g[k] * gam * inv_std[c];
              }
            continue;
          }
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              const double d = g[k] * gam;
              sum_d += d;
              sum_dx += d * xhat[k];
            }
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              const double d = g[k] * gam;
              gx[k] += inv_std[c] / n * (n * d - sum_d - xhat[k] * sum_dx);
            }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 3, "input");
  require_rank("linear", weight, 2, "weight");
  const std::size_t B = x.dim(0), cin = x.dim(1), T = x.dim(2);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw ShapeError("linear: input has " + std::to_string(cin) +
                     " features, weight expects " + std::to_string(weight.dim(1)));
  }
  require_bias("linear", bias, cout);
  std::vector<double> out(B * cout * T, 0.0);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* orow = &out[(b * cout + o) * T];
      const double bv = bias.defined() ? bias.data()[o] : 0.0;
      for (std::size_t t = 0; t < T; ++t) orow[t] = bv;
      for (std::size_t c = 0; c < cin; ++c) {
        const double w = wd[o * cin + c];
        const double* xrow = &xd[(b * cin + c) * T];
        for (std::size_t t = 0; t < T; ++t) orow[t] += w * xrow[t];
      }
    }
  }
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      "linear", {B, cout, T}, std::move(out), {x, weight, bias},
      [=](const TensorImpl& o) {
        const auto& g = o.grad;
        std::vector<double>* gx = xi->requires_grad ? &grad_buffer(*xi) : nullptr;
        std::vector<double>* gw = wi->requires_grad ? &grad_buffer(*wi) : nullptr;
        std::vector<double>* gb = (bi && bi->requires_grad) ? &grad_buffer(*bi) : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t oc = 0; oc < cout; ++oc) {
            const double* grow = &g[(b * cout + oc) * T];
            if (gb) {
              for (std::size_t t = 0; t < T; ++t) (*gb)[oc] += grow[t];
            }
            for (std::size_t c = 0; c < cin; ++c) {
              const double* xrow = &xi->data[(b * cin + c) * T];
              if (gw) {
                double acc = 0.0;
                for (std::size_t t = 0; t < T; ++t) acc += grow[t] * xrow[t];
                (*gw)[oc * cin + c] += acc;
              }
              if (gx) {
                const double w = wi->data[oc * cin + c];
                double* gxrow = &(*gx)[(b * cin + c) * T];
                for (std::size_t t = 0; t < T; ++t) gxrow[t] += w * grow[t];
              }
            }
          }
        }
      });
}

Tensor glu(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("glu: axis out of range");
  const std::size_t c2 = x.dim(axis);
  if (c2 % 2 != 0) {
    throw ShapeError("glu: axis " + std::to_string(axis) + " has odd extent " +
                     std::to_string(c2));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t half = c2 / 2;
  Shape shape = x.shape();
  shape[axis] = half;
  std::vector<double> out(outer * half * inner);
  std::vector<double> gate(out.size());
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < half; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = (o * half + c) * inner + i;
        const double a = xd[(o * c2 + c) * inner + i];
        const double s = sigm(xd[(o * c2 + c + half) * inner + i]);
        gate[k] = s;
        out[k] = a * s;
      }
  auto xi = x.impl();
  return make_result("glu", std::move(shape), std::move(out), {x},
                     [=, gate = std::move(gate)](const TensorImpl& r) {
                       if (!xi->requires_grad) return;
                       auto& gx = grad_buffer(*xi);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t c = 0; c < half; ++c)
                           for (std::size_t i = 0; i < inner; ++i) {
                             const std::size_t k = (o * half + c) * inner + i;
                             const std::size_t ka = (o * c2 + c) * inner + i;
                             const std::size_t kb = (o * c2 + c + half) * inner + i;
                             const double s = gate[k];
                             gx[ka] += r.grad[k] * s;
                             gx[kb] += r.grad[k] * xi->data[ka] * s * (1.0 - s);
                           }
                     });
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = xs[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const Shape& s = xs[n].shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: input " + std::to_string(n) + " shape " +
                       shape_str(s) + " incompatible with " + shape_str(ref));
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  Shape shape = ref;
  shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t ext = t.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&t.data()[o * ext * inner], ext * inner,
                  &out[(o * total + off) * inner]);
    off += ext;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& t : xs) impls.push_back(t.impl());
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  return make_result("concat", std::move(shape), std::move(out), inputs,
                     [=](const TensorImpl& r) {
                       for (std::size_t n = 0; n < impls.size(); ++n) {
                         if (!impls[n]->requires_grad) continue;
                         auto& g = grad_buffer(*impls[n]);
                         const std::size_t ext = impls[n]->shape[axis];
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < ext * inner; ++i)
                             g[o * ext * inner + i] +=
                                 r.grad[(o * total + offsets[n]) * inner + i];
                       }
                     });
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t length) {
  if (x.rank() == 0) throw ShapeError("slice_last: scalar input");
  const std::size_t T = x.shape().back();
  if (begin + length > T) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + length) + ") exceeds extent " +
                     std::to_string(T));
  }
  const std::size_t rows = x.numel() / T;
  Shape shape = x.shape();
  shape.back() = length;
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(&x.data()[r * T + begin], length, &out[r * length]);
  auto xi = x.impl();
  return make_result("slice_last", std::move(shape), std::move(out), {x},
                     [=](const TensorImpl& o) {
                       if (!xi->requires_grad) return;
                       auto& g = grad_buffer(*xi);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t t = 0; t < length; ++t)
                           g[r * T + begin + t] += o.grad[r * length + t];
                     });
}

namespace {

Tensor resample_rows(const Tensor& x, int factor, bool up) {
  if (x.rank() == 0) throw ShapeError("resample: scalar input");
  const std::size_t T = x.shape().back();
  const std::size_t rows = x.numel() / T;
  const std::size_t To = up ? T * factor : dsp::downsampled_len(T, factor);
  Shape shape = x.shape();
  shape.back() = To;
  std::vector<double> out(rows * To);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = x.data().subspan(r * T, T);
    auto y = up ? dsp::upsample(row, factor) : dsp::downsample(row, factor);
    std::copy(y.begin(), y.end(), out.begin() + r * To);
  }
  auto xi = x.impl();
  return make_result(up ? "upsample" : "downsample", std::move(shape), std::move(out),
                     {x}, [=](const TensorImpl& o) {
                       if (!xi->requires_grad) return;
                       auto& g = grad_buffer(*xi);
                       for (std::size_t r = 0; r < rows; ++r) {
                         std::span<const double> go(&o.grad[r * To], To);
                         auto gi = up ? dsp::upsample_adjoint(go, T, factor)
                                      : dsp::downsample_adjoint(go, T, factor);
                         for (std::size_t t = 0; t < T; ++t) g[r * T + t] += gi[t];
                       }
                     });
}

}  // namespace

Tensor upsample_last(const Tensor& x, int factor) { return resample_rows(x, factor, true); }
Tensor downsample_last(const Tensor& x, int factor) {
  return resample_rows(x, factor, false);
}

Tensor gather_frames(const Tensor& x, const FrameGather& plan) {
  require_rank("gather_frames", x, 3, "input");
  const std::size_t rows = x.dim(0) * x.dim(1), N = x.dim(2), T = plan.size();
  if (plan.i1.size() != T || plan.w0.size() != T || plan.w1.size() != T) {
    throw ShapeError("gather_frames: inconsistent plan");
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (plan.i0[t] >= N || plan.i1[t] >= N) {
      throw ShapeError("gather_frames: frame index out of range for " +
                       std::to_string(N) + " frames");
    }
  }
  std::vector<double> out(rows * T);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < T; ++t)
      out[r * T + t] = plan.w0[t] * xd[r * N + plan.i0[t]] + plan.w1[t] * xd[r * N + plan.i1[t]];
  auto xi = x.impl();
  return make_result("gather_frames", {x.dim(0), x.dim(1), T}, std::move(out), {x},
                     [=](const TensorImpl& o) {
                       if (!xi->requires_grad) return;
                       auto& g = grad_buffer(*xi);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t t = 0; t < T; ++t) {
                           g[r * N + plan.i0[t]] += plan.w0[t] * o.grad[r * T + t];
                           g[r * N + plan.i1[t]] += plan.w1[t] * o.grad[r * T + t];
                         }
                     });
}

namespace {

// Generic 3-axis permutation where out[a2][a0][a1] style indexing is given
// by index maps.
Tensor permute3(const Tensor& x, const char* name, std::size_t p0,
                std::size_t p1, std::size_t p2) {
  require_rank(name, x, 3, "input");
  const Shape in = x.shape();
  const std::size_t perm[3] = {p0, p1, p2};
  Shape shape = {in[p0], in[p1], in[p2]};
  std::size_t in_stride[3] = {in[1] * in[2], in[2], 1};
  std::vector<std::size_t> src(x.numel());
  std::vector<double> out(x.numel());
  std::size_t k = 0;
  for (std::size_t i = 0; i < shape[0]; ++i)
    for (std::size_t j = 0; j < shape[1]; ++j)
      for (std::size_t l = 0; l < shape[2]; ++l) {
        const std::size_t s =
            i * in_stride[perm[0]] + j * in_stride[perm[1]] + l * in_stride[perm[2]];
        src[k] = s;
        out[k++] = x.data()[s];
      }
  auto xi = x.impl();
  return make_result(name, std::move(shape), std::move(out), {x},
                     [xi, src = std::move(src)](const TensorImpl& o) {
                       if (!xi->requires_grad) return;
                       auto& g = grad_buffer(*xi);
                       for (std::size_t n = 0; n < src.size(); ++n) g[src[n]] += o.grad[n];
                     });
}

}  // namespace

Tensor bct_to_tbc(const Tensor& x) { return permute3(x, "bct_to_tbc", 2, 0, 1); }
Tensor tbc_to_bct(const Tensor& x) { return permute3(x, "tbc_to_bct", 1, 2, 0); }

Tensor lstm_layer(const Tensor& x, const LstmLayerParams& p) {
  require_rank("lstm", x, 3, "input");
  const std::size_t T = x.dim(0), B = x.dim(1), F = x.dim(2);
  const std::size_t H4 = p.w_ih.dim(0), H = H4 / 4;
  if (p.w_ih.dim(1) != F || p.w_hh.dim(0) != H4 || p.w_hh.dim(1) != H ||
      p.b_ih.numel() != H4 || p.b_hh.numel() != H4 || H4 % 4 != 0) {
    throw ShapeError("lstm: parameters do not match input features " +
                     std::to_string(F));
  }
  const auto xd = x.data();
  const auto wih = p.w_ih.data(), whh = p.w_hh.data();
  const auto bih = p.b_ih.data(), bhh = p.b_hh.data();
  // Saved per step: gates (i, f, g, o) activated, cell state, tanh(cell).
  std::vector<double> gates(T * B * H4), cells(T * B * H), tanh_c(T * B * H);
  std::vector<double> out(T * B * H, 0.0);
  std::vector<double> z(H4);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const double* xt = &xd[(t * B + b) * F];
      const double* hprev = t ? &out[((t - 1) * B + b) * H] : nullptr;
      const double* cprev = t ? &cells[((t - 1) * B + b) * H] : nullptr;
      for (std::size_t r = 0; r < H4; ++r) {
        double acc = bih[r] + bhh[r];
        for (std::size_t f = 0; f < F; ++f) acc += wih[r * F + f] * xt[f];
        if (hprev)
          for (std::size_t h = 0; h < H; ++h) acc += whh[r * H + h] * hprev[h];
        z[r] = acc;
      }
      double* gt = &gates[(t * B + b) * H4];
      for (std::size_t h = 0; h < H; ++h) {
        const double ig = sigm(z[h]);
        const double fg = sigm(z[H + h]);
        const double gg = std::tanh(z[2 * H + h]);
        const double og = sigm(z[3 * H + h]);
        gt[h] = ig;
        gt[H + h] = fg;
        gt[2 * H + h] = gg;
        gt[3 * H + h] = og;
        const double c = fg * (cprev ? cprev[h] : 0.0) + ig * gg;
        const std::size_t k = (t * B + b) * H + h;
        cells[k] = c;
        tanh_c[k] = std::tanh(c);
        out[k] = og * tanh_c[k];
      }
    }
  }
  auto xi = x.impl();
  auto wihi = p.w_ih.impl(), whhi = p.w_hh.impl();
  auto bihi = p.b_ih.impl(), bhhi = p.b_hh.impl();
  return make_result(
      "lstm", {T, B, H}, std::move(out), {x, p.w_ih, p.w_hh, p.b_ih, p.b_hh},
      [=, gates = std::move(gates), cells = std::move(cells),
       tanh_c = std::move(tanh_c)](const TensorImpl& o) {
        std::vector<double>* gx = xi->requires_grad ? &grad_buffer(*xi) : nullptr;
        std::vector<double>* gwih = wihi->requires_grad ? &grad_buffer(*wihi) : nullptr;
        std::vector<double>* gwhh = whhi->requires_grad ? &grad_buffer(*whhi) : nullptr;
        std::vector<double>* gbih = bihi->requires_grad ? &grad_buffer(*bihi) : nullptr;
        std::vector<double>* gbhh = bhhi->requires_grad ? &grad_buffer(*bhhi) : nullptr;
        const auto& hs = o.data;
        std::vector<double> dh_next(B * H, 0.0), dc_next(B * H, 0.0), dz(H4);
        for (std::size_t tt = T; tt-- > 0;) {
          for (std::size_t b = 0; b < B; ++b) {
            const double* gt = &gates[(tt * B + b) * H4];
            for (std::size_t h = 0; h < H; ++h) {
              const std::size_t k = (tt * B + b) * H + h;
              const double dh = o.grad[k] + dh_next[b * H + h];
              const double ig = gt[h], fg = gt[H + h], gg = gt[2 * H + h],
                           og = gt[3 * H + h];
              const double tc = tanh_c[k];
              const double dc = dh * og * (1.0 - tc * tc) + dc_next[b * H + h];
              const double cprev = tt ? cells[((tt - 1) * B + b) * H + h] : 0.0;
              dz[h] = dc * gg * ig * (1.0 - ig);
              dz[H + h] = dc * cprev * fg * (1.0 - fg);
              dz[2 * H + h] = dc * ig * (1.0 - gg * gg);
              dz[3 * H + h] = dh * tc * og * (1.0 - og);
              dc_next[b * H + h] = dc * fg;
            }
            const double* xt = &xi->data[(tt * B + b) * F];
            const double* hprev = tt ? &hs[((tt - 1) * B + b) * H] : nullptr;
            for (std::size_t r = 0; r < H4; ++r) {
              const double d = dz[r];
              if (gbih) (*gbih)[r] += d;
              if (gbhh) (*gbhh)[r] += d;
              if (gwih)
                for (std::size_t f = 0; f < F; ++f) (*gwih)[r * F + f] += d * xt[f];
              if (gwhh && hprev)
                for (std::size_t h = 0; h < H; ++h) (*gwhh)[r * H + h] += d * hprev[h];
            }
            if (gx) {
              double* gxt = &(*gx)[(tt * B + b) * F];
              for (std::size_t r = 0; r < H4; ++r)
                for (std::size_t f = 0; f < F; ++f) gxt[f] += wihi->data[r * F + f] * dz[r];
            }
            for (std::size_t h = 0; h < H; ++h) {
              double acc = 0.0;
              for (std::size_t r = 0; r < H4; ++r) acc += whhi->data[r * H + h] * dz[r];
              dh_next[b * H + h] = acc;
            }
          }
        }
      });
}

Tensor lstm(const Tensor& x, std::span<const LstmLayerParams> layers) {
  Tensor h = x;
  for (const auto& layer : layers) h = lstm_layer(h, layer);
  return h;
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor ParameterStore::uniform(const std::string& name, Shape shape,
                                std::size_t fan_in, std::uint64_t seed) {
  if (contains(name)) throw InvalidArgument("duplicate parameter " + name);
  std::mt19937_64 rng(seed ^ fnv1a(name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(ag::numel(shape));
  for (double& v : data) v = dist(rng);
  entries_.push_back({name, Tensor::from(std::move(shape), std::move(data), true)});
  return entries_.back().tensor;
}

Tensor ParameterStore::constant(const std::string& name, Shape shape,
                                 double value) {
  if (contains(name)) throw InvalidArgument("duplicate parameter " + name);
  entries_.push_back({name, Tensor::full(std::move(shape), value, true)});
  return entries_.back().tensor;
}

void ParameterStore::add_buffer(const std::string& name, BatchNormState& state) {
  buffers_.push_back({name, &state});
}

Tensor& ParameterStore::at(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw InvalidArgument("unknown parameter " + name);
}

const Tensor& ParameterStore::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw InvalidArgument("unknown parameter " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

}  // namespace msd::nn
