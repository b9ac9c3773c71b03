#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "breg/error.hpp"
#include "breg/rng.hpp"
#include "breg/tape.hpp"

namespace breg {

// Parameters of one convolution: kernel [out_ch, in_ch, kh, kw], bias [out_ch].
struct ConvParams {
    Tensor kernel;
    Tensor bias;

    static ConvParams init(std::size_t out_ch, std::size_t in_ch,
                           std::size_t kh, std::size_t kw, Rng& rng) {
        ConvParams p;
        p.kernel = Tensor::zeros({out_ch, in_ch, kh, kw});
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * kh * kw));
        for (std::size_t i = 0; i < p.kernel.numel(); ++i) {
            p.kernel[i] = rng.normal(0.0, stddev);
        }
        p.bias = Tensor::zeros({out_ch});
        return p;
    }
};

// Per-channel affine + running statistics. Running stats are state, not
// trainable parameters, and are updated only in training mode.
struct BatchNormParams {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;

    static BatchNormParams init(std::size_t channels) {
        BatchNormParams p;
        p.gamma = Tensor::full({channels}, 1.0);
        p.beta = Tensor::zeros({channels});
        p.running_mean = Tensor::zeros({channels});
        p.running_var = Tensor::full({channels}, 1.0);
        return p;
    }
};

// Fully connected layer: weight [out, in], bias [out].
struct DenseParams {
    Tensor weight;
    Tensor bias;

    static DenseParams init(std::size_t out, std::size_t in, Rng& rng) {
        DenseParams p;
        p.weight = Tensor::zeros({out, in});
        const double stddev = std::sqrt(2.0 / static_cast<double>(in));
        for (std::size_t i = 0; i < p.weight.numel(); ++i) {
            p.weight[i] = rng.normal(0.0, stddev);
        }
        p.bias = Tensor::zeros({out});
        return p;
    }
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                                   std::size_t stride, std::size_t padding) {
    const long long num = static_cast<long long>(in) + 2 * static_cast<long long>(padding) -
                          static_cast<long long>(kernel);
    if (num < 0) {
        throw ContractError("conv2d: non-positive output extent (input " +
                            std::to_string(in) + ", kernel " + std::to_string(kernel) +
                            ", padding " + std::to_string(padding) + ")");
    }
    return static_cast<std::size_t>(num) / stride + 1;
}

// 2-D cross-correlation over [n, c, h, w] with zero padding.
inline Var conv2d(Var x, Var kernel, Var bias, std::size_t stride,
                  std::size_t padding) {
    detail::check_same_tape("conv2d", x, kernel);
    detail::check_same_tape("conv2d", x, bias);
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    if (xv.rank() != 4) throw ContractError("conv2d: input must be [n,c,h,w]");
    if (kv.rank() != 4) throw ContractError("conv2d: kernel must be [oc,ic,kh,kw]");
    if (stride == 0) throw ContractError("conv2d: stride must be positive");
    const std::size_t n = xv.extent(0), c = xv.extent(1);
    const std::size_t h = xv.extent(2), w = xv.extent(3);
    const std::size_t oc = kv.extent(0), ic = kv.extent(1);
    const std::size_t kh = kv.extent(2), kw = kv.extent(3);
    if (ic != c) {
        throw ContractError("conv2d: kernel expects " + std::to_string(ic) +
                            " input channels, got " + std::to_string(c));
    }
    if (bias.value().shape() != Shape{oc}) {
        throw ContractError("conv2d: bias must be [out_channels]");
    }
    const std::size_t oh = conv_out_extent(h, kh, stride, padding);
    const std::size_t ow = conv_out_extent(w, kw, stride, padding);

    // For one kernel tap (ky,kx): the output rows/cols whose source pixel is
    // inside the (zero-padded) input, so the hot loops run range-checked-free.
    const auto valid_range = [](std::size_t k, std::size_t in_extent,
                                std::size_t out_extent, std::size_t stride,
                                std::size_t padding) {
        std::size_t lo = 0;
        if (padding > k) lo = (padding - k + stride - 1) / stride;
        const long long top = static_cast<long long>(in_extent) - 1 +
                              static_cast<long long>(padding) - static_cast<long long>(k);
        std::size_t hi = 0; // exclusive
        if (top >= 0) {
            hi = std::min(out_extent,
                          static_cast<std::size_t>(top) / stride + 1);
        }
        return std::pair<std::size_t, std::size_t>{std::min(lo, hi), hi};
    };

    Tensor out = Tensor::zeros({n, oc, oh, ow});
    const Tensor& bv = bias.value();
    const double* xp = xv.data();
    const double* kp = kv.data();
    double* op = out.data();
    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t o = 0; o < oc; ++o) {
            double* out_plane = op + (in * oc + o) * oh * ow;
            const double bias_o = bv[o];
            for (std::size_t i = 0; i < oh * ow; ++i) out_plane[i] = bias_o;
            for (std::size_t i = 0; i < ic; ++i) {
                const double* x_plane = xp + (in * ic + i) * h * w;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const auto [oy_lo, oy_hi] = valid_range(ky, h, oh, stride, padding);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const auto [ox_lo, ox_hi] = valid_range(kx, w, ow, stride, padding);
                        const double wv = kp[((o * ic + i) * kh + ky) * kw + kx];
                        for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                            const std::size_t iy = oy * stride + ky - padding;
                            const double* x_row = x_plane + iy * w + kx - padding;
                            double* out_row = out_plane + oy * ow;
                            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                                out_row[ox] += wv * x_row[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    return x.tape->record(
        "conv2d", std::move(out), {x.id, kernel.id, bias.id},
        [x = x.id, k = kernel.id, b = bias.id, valid_range, stride, padding, n,
         oc, ic, kh, kw, h, w, oh, ow](Tape& t, std::size_t self) {
            const Tensor& g = t.grad_out(self);
            const Tensor& xv = t.value(x);
            const Tensor& kv = t.value(k);
            Tensor* gx = t.grad_sink(x);
            Tensor* gk = t.grad_sink(k);
            Tensor* gb = t.grad_sink(b);
            const double* gp = g.data();
            if (gb) {
                for (std::size_t in = 0; in < n; ++in) {
                    for (std::size_t o = 0; o < oc; ++o) {
                        const double* g_plane = gp + (in * oc + o) * oh * ow;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < oh * ow; ++i) acc += g_plane[i];
                        (*gb)[o] += acc;
                    }
                }
            }
            if (!gx && !gk) return;
            const double* xp = xv.data();
            const double* kp = kv.data();
            for (std::size_t in = 0; in < n; ++in) {
                for (std::size_t o = 0; o < oc; ++o) {
                    const double* g_plane = gp + (in * oc + o) * oh * ow;
                    for (std::size_t i = 0; i < ic; ++i) {
                        const double* x_plane = xp + (in * ic + i) * h * w;
                        double* gx_plane = gx ? gx->data() + (in * ic + i) * h * w : nullptr;
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const auto [oy_lo, oy_hi] = valid_range(ky, h, oh, stride, padding);
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const auto [ox_lo, ox_hi] =
                                    valid_range(kx, w, ow, stride, padding);
                                const std::size_t kidx = ((o * ic + i) * kh + ky) * kw + kx;
                                const double wv = kp[kidx];
                                double wacc = 0.0;
                                for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                                    const std::size_t iy = oy * stride + ky - padding;
                                    const double* g_row = g_plane + oy * ow;
                                    const double* x_row = x_plane + iy * w + kx - padding;
                                    double* gx_row =
                                        gx_plane ? gx_plane + iy * w + kx - padding : nullptr;
                                    for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                                        const double go = g_row[ox];
                                        if (gk) wacc += go * x_row[ox * stride];
                                        if (gx_row) gx_row[ox * stride] += go * wv;
                                    }
                                }
                                if (gk) (*gk)[kidx] += wacc;
                            }
                        }
                    }
                }
            }
        });
}

inline Var relu(Var x) {
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        if (out[i] < 0.0) out[i] = 0.0;
    }
    return x.tape->record("relu", std::move(out), {x.id},
                          [x = x.id](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              const Tensor& xv = t.value(x);
                              if (Tensor* gx = t.grad_sink(x)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) {
                                      if (xv[i] > 0.0) (*gx)[i] += g[i];
                                  }
                              }
                          });
}

// Per-channel normalization over [n, c, h, w] with eps = 1e-5. Training mode
// uses batch statistics (population variance) and refreshes the running
// estimates in place; inference mode reads the running estimates.
inline Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean,
                      Tensor& running_var, bool training,
                      double momentum = 0.9, double eps = 1e-5) {
    detail::check_same_tape("batch_norm", x, gamma);
    detail::check_same_tape("batch_norm", x, beta);
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ContractError("batch_norm: input must be [n,c,h,w]");
    const std::size_t n = xv.extent(0), c = xv.extent(1);
    const std::size_t h = xv.extent(2), w = xv.extent(3);
    if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c} ||
        running_mean.shape() != Shape{c} || running_var.shape() != Shape{c}) {
        throw ContractError("batch_norm: parameter shapes must be [channels]");
    }
    if (training && n < 2) {
        throw ContractError("batch_norm: training mode needs batch size >= 2, got " +
                            std::to_string(n));
    }

    const std::size_t m = n * h * w;
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();

    if (training) {
        std::vector<double> mu(c, 0.0), var(c, 0.0), inv_std(c);
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t z = 0; z < w; ++z) mu[ch] += xv.at(in, ch, y, z);
        for (std::size_t ch = 0; ch < c; ++ch) mu[ch] /= static_cast<double>(m);
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t z = 0; z < w; ++z) {
                        const double d = xv.at(in, ch, y, z) - mu[ch];
                        var[ch] += d * d;
                    }
        for (std::size_t ch = 0; ch < c; ++ch) {
            var[ch] /= static_cast<double>(m);
            inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
        }

        Tensor xhat = Tensor::zeros(xv.shape());
        Tensor out = Tensor::zeros(xv.shape());
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t z = 0; z < w; ++z) {
                        const double xh = (xv.at(in, ch, y, z) - mu[ch]) * inv_std[ch];
                        xhat.at(in, ch, y, z) = xh;
                        out.at(in, ch, y, z) = gv[ch] * xh + bv[ch];
                    }

        for (std::size_t ch = 0; ch < c; ++ch) {
            running_mean[ch] = momentum * running_mean[ch] + (1.0 - momentum) * mu[ch];
            running_var[ch] = momentum * running_var[ch] + (1.0 - momentum) * var[ch];
        }

        return x.tape->record(
            "batch_norm", std::move(out), {x.id, gamma.id, beta.id},
            [x = x.id, ga = gamma.id, be = beta.id, xhat = std::move(xhat),
             inv_std = std::move(inv_std), n, c, h, w, m](Tape& t, std::size_t self) {
                const Tensor& g = t.grad_out(self);
                const Tensor& gv = t.value(ga);
                Tensor* gx = t.grad_sink(x);
                Tensor* gg = t.grad_sink(ga);
                Tensor* gb = t.grad_sink(be);
                std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                for (std::size_t in = 0; in < n; ++in)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t y = 0; y < h; ++y)
                            for (std::size_t z = 0; z < w; ++z) {
                                sum_g[ch] += g.at(in, ch, y, z);
                                sum_gx[ch] += g.at(in, ch, y, z) * xhat.at(in, ch, y, z);
                            }
                if (gg)
                    for (std::size_t ch = 0; ch < c; ++ch) (*gg)[ch] += sum_gx[ch];
                if (gb)
                    for (std::size_t ch = 0; ch < c; ++ch) (*gb)[ch] += sum_g[ch];
                if (gx) {
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::size_t in = 0; in < n; ++in)
                        for (std::size_t ch = 0; ch < c; ++ch)
                            for (std::size_t y = 0; y < h; ++y)
                                for (std::size_t z = 0; z < w; ++z) {
                                    const double gi = g.at(in, ch, y, z);
                                    const double xh = xhat.at(in, ch, y, z);
                                    gx->at(in, ch, y, z) +=
                                        gv[ch] * inv_std[ch] *
                                        (gi - inv_m * sum_g[ch] - xh * inv_m * sum_gx[ch]);
                                }
                }
            });
    }

    // Inference: normalize with frozen running statistics.
    std::vector<double> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        inv_std[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
    }
    Tensor xhat = Tensor::zeros(xv.shape());
    Tensor out = Tensor::zeros(xv.shape());
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t z = 0; z < w; ++z) {
                    const double xh = (xv.at(in, ch, y, z) - running_mean[ch]) * inv_std[ch];
                    xhat.at(in, ch, y, z) = xh;
                    out.at(in, ch, y, z) = gv[ch] * xh + bv[ch];
                }
    return x.tape->record(
        "batch_norm", std::move(out), {x.id, gamma.id, beta.id},
        [x = x.id, ga = gamma.id, be = beta.id, xhat = std::move(xhat),
         inv_std = std::move(inv_std), n, c, h, w](Tape& t, std::size_t self) {
            const Tensor& g = t.grad_out(self);
            const Tensor& gv = t.value(ga);
            Tensor* gx = t.grad_sink(x);
            Tensor* gg = t.grad_sink(ga);
            Tensor* gb = t.grad_sink(be);
            for (std::size_t in = 0; in < n; ++in)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t z = 0; z < w; ++z) {
                            const double gi = g.at(in, ch, y, z);
                            if (gx) gx->at(in, ch, y, z) += gi * gv[ch] * inv_std[ch];
                            if (gg) (*gg)[ch] += gi * xhat.at(in, ch, y, z);
                            if (gb) (*gb)[ch] += gi;
                        }
        });
}

// [n, c, h, w] -> [n, c], mean over the spatial extent.
inline Var global_avg_pool(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ContractError("global_avg_pool: input must be [n,c,h,w]");
    const std::size_t n = xv.extent(0), c = xv.extent(1);
    const std::size_t h = xv.extent(2), w = xv.extent(3);
    if (h * w == 0) throw ContractError("global_avg_pool: empty spatial extent");
    const double inv = 1.0 / static_cast<double>(h * w);
    Tensor out = Tensor::zeros({n, c});
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t z = 0; z < w; ++z) acc += xv.at(in, ch, y, z);
            out.at(in, ch) = acc * inv;
        }
    return x.tape->record("global_avg_pool", std::move(out), {x.id},
                          [x = x.id, n, c, h, w, inv](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              if (Tensor* gx = t.grad_sink(x)) {
                                  for (std::size_t in = 0; in < n; ++in)
                                      for (std::size_t ch = 0; ch < c; ++ch) {
                                          const double gi = g.at(in, ch) * inv;
                                          for (std::size_t y = 0; y < h; ++y)
                                              for (std::size_t z = 0; z < w; ++z)
                                                  gx->at(in, ch, y, z) += gi;
                                      }
                              }
                          });
}

// y[i, o] = sum_j x[i, j] * W[o, j] + b[o]; x [n, f], W [k, f], b [k].
inline Var fully_connected(Var x, Var weight, Var bias) {
    detail::check_same_tape("fully_connected", x, weight);
    detail::check_same_tape("fully_connected", x, bias);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.extent(1) != wv.extent(1)) {
        throw ContractError("fully_connected: shapes " + shape_str(xv.shape()) +
                            " and " + shape_str(wv.shape()) + " do not agree");
    }
    const std::size_t n = xv.extent(0), f = xv.extent(1), k = wv.extent(0);
    if (bias.value().shape() != Shape{k}) {
        throw ContractError("fully_connected: bias must be [outputs]");
    }
    const Tensor& bv = bias.value();
    Tensor out = Tensor::zeros({n, k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < k; ++o) {
            double acc = bv[o];
            for (std::size_t j = 0; j < f; ++j) acc += xv.at(i, j) * wv.at(o, j);
            out.at(i, o) = acc;
        }
    return x.tape->record(
        "fully_connected", std::move(out), {x.id, weight.id, bias.id},
        [x = x.id, wid = weight.id, b = bias.id, n, f, k](Tape& t, std::size_t self) {
            const Tensor& g = t.grad_out(self);
            const Tensor& xv = t.value(x);
            const Tensor& wv = t.value(wid);
            Tensor* gx = t.grad_sink(x);
            Tensor* gw = t.grad_sink(wid);
            Tensor* gb = t.grad_sink(b);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < k; ++o) {
                    const double gio = g.at(i, o);
                    if (gb) (*gb)[o] += gio;
                    for (std::size_t j = 0; j < f; ++j) {
                        if (gx) gx->at(i, j) += gio * wv.at(o, j);
                        if (gw) gw->at(o, j) += gio * xv.at(i, j);
                    }
                }
        });
}

// Row-wise softmax over [n, k], computed with max subtraction.
inline Var softmax(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ContractError("softmax: input must be [n,k]");
    const std::size_t n = xv.extent(0), k = xv.extent(1);
    if (k == 0) throw ContractError("softmax: empty rows");
    Tensor out = Tensor::zeros({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        double mx = xv.at(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xv.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double e = std::exp(xv.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < k; ++j) out.at(i, j) /= denom;
    }
    return x.tape->record("softmax", std::move(out), {x.id},
                          [x = x.id, n, k](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              const Tensor& y = t.value(self);
                              if (Tensor* gx = t.grad_sink(x)) {
                                  for (std::size_t i = 0; i < n; ++i) {
                                      double dot = 0.0;
                                      for (std::size_t j = 0; j < k; ++j)
                                          dot += g.at(i, j) * y.at(i, j);
                                      for (std::size_t j = 0; j < k; ++j)
                                          gx->at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                                  }
                              }
                          });
}

} // namespace breg
