#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "hgcnet/runtime.hpp"
#include "hgcnet/tensor.hpp"

namespace hgcnet {

struct ConvGeometry {
    int h_out = 0, w_out = 0;
};

template <class S>
ConvGeometry conv_geometry(const TensorT<S>& x, const ConvWeightsT<S>& w, int stride, int pad) {
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0, got " + std::to_string(pad));
    if (x.c != w.in_channels()) {
        throw std::invalid_argument("conv2d: input channels (" + std::to_string(x.c) + ") != groups (" +
                                    std::to_string(w.groups) + ") * in_channels_per_group (" +
                                    std::to_string(w.in_per_group) + ")");
    }
    if (!w.bias.empty() && static_cast<int>(w.bias.size()) != w.out_channels) {
        throw std::invalid_argument("conv2d: bias length (" + std::to_string(w.bias.size()) +
                                    ") != out_channels (" + std::to_string(w.out_channels) + ")");
    }
    ConvGeometry g;
    g.h_out = (x.h + 2 * pad - w.kh) / stride + 1;
    g.w_out = (x.w + 2 * pad - w.kw) / stride + 1;
    if (x.h + 2 * pad < w.kh || x.w + 2 * pad < w.kw || g.h_out < 1 || g.w_out < 1) {
        throw std::invalid_argument("conv2d: kernel " + std::to_string(w.kh) + "x" + std::to_string(w.kw) +
                                    " does not fit input rows/cols " + std::to_string(x.h) + "x" +
                                    std::to_string(x.w) + " with pad " + std::to_string(pad));
    }
    return g;
}

namespace detail {

// C[M,N] += A[M,K] * B[K,N], all row-major contiguous.
template <class S>
void gemm_acc(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<std::size_t>(i) * k;
        S* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            if (av == S(0)) continue;
            const S* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[K,N] += A^T * B where A is [M,K], B is [M,N].
template <class S>
void gemm_at_acc(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<std::size_t>(i) * k;
        const S* brow = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            if (av == S(0)) continue;
            S* crow = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,K] += A * B^T where A is [M,N], B is [K,N].
template <class S>
void gemm_bt_acc(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<std::size_t>(i) * n;
        S* crow = c + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const S* brow = b + static_cast<std::size_t>(p) * n;
            S acc = S(0);
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// Lowers one group of one sample into a (in_per_group*kh*kw, h_out*w_out) matrix.
template <class S>
void im2col(const S* x_group, int channels, int h, int w, int kh, int kw, int stride, int pad,
            int h_out, int w_out, S* col) {
    const std::size_t patches = static_cast<std::size_t>(h_out) * w_out;
    std::size_t row = 0;
    for (int ci = 0; ci < channels; ++ci) {
        const S* xc = x_group + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++row) {
                S* dst = col + row * patches;
                for (int oy = 0; oy < h_out; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < w_out; ++ox) *dst++ = S(0);
                        continue;
                    }
                    const S* xrow = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < w_out; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        *dst++ = (ix < 0 || ix >= w) ? S(0) : xrow[ix];
                    }
                }
            }
        }
    }
}

// Scatter-add of the column matrix back onto one group of one sample.
template <class S>
void col2im_acc(const S* col, int channels, int h, int w, int kh, int kw, int stride, int pad,
                int h_out, int w_out, S* x_group) {
    const std::size_t patches = static_cast<std::size_t>(h_out) * w_out;
    std::size_t row = 0;
    for (int ci = 0; ci < channels; ++ci) {
        S* xc = x_group + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++row) {
                const S* src = col + row * patches;
                for (int oy = 0; oy < h_out; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        src += w_out;
                        continue;
                    }
                    S* xrow = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < w_out; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) xrow[ix] += src[ox];
                        ++src;
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Reference path: plain nested loops over output positions and taps.
template <class S>
TensorT<S> conv2d_direct(const TensorT<S>& x, const ConvWeightsT<S>& w, int stride, int pad) {
    const ConvGeometry g = conv_geometry(x, w, stride, pad);
    TensorT<S> y(x.n, w.out_channels, g.h_out, g.w_out);
    const int opg = w.out_per_group();
    for (int in = 0; in < x.n; ++in) {
        for (int o = 0; o < w.out_channels; ++o) {
            const int group = o / opg;
            const int ci0 = group * w.in_per_group;
            const S b = w.bias.empty() ? S(0) : w.bias[static_cast<std::size_t>(o)];
            for (int oy = 0; oy < g.h_out; ++oy) {
                for (int ox = 0; ox < g.w_out; ++ox) {
                    S acc = b;
                    for (int i = 0; i < w.in_per_group; ++i) {
                        for (int ky = 0; ky < w.kh; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int kx = 0; kx < w.kw; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= x.w) continue;
                                acc += x.at(in, ci0 + i, iy, ix) * w.at(o, i, ky, kx);
                            }
                        }
                    }
                    y.at(in, o, oy, ox) = acc;
                }
            }
        }
    }
    return y;
}

// Fast path: per-sample, per-group im2col + GEMM. 1x1/stride1/pad0 kernels are
// multiplied in place without lowering.
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const ConvWeightsT<S>& w, int stride, int pad) {
    const ConvGeometry g = conv_geometry(x, w, stride, pad);
    TensorT<S> y(x.n, w.out_channels, g.h_out, g.w_out);
    const int opg = w.out_per_group();
    const std::size_t patches = static_cast<std::size_t>(g.h_out) * g.w_out;
    const std::size_t krows = w.kernel_size();
    const bool pointwise = (w.kh == 1 && w.kw == 1 && stride == 1 && pad == 0);

    parallel_chunks(0, x.n, [&](int, int lo, int hi) {
        std::vector<S> col;
        if (!pointwise) col.assign(krows * patches, S(0));
        for (int in = lo; in < hi; ++in) {
            for (int gidx = 0; gidx < w.groups; ++gidx) {
                const S* xg = x.channel_ptr(in, gidx * w.in_per_group);
                S* yg = y.channel_ptr(in, gidx * opg);
                const S* wg = w.filter_ptr(gidx * opg);
                if (pointwise) {
                    detail::gemm_acc(wg, xg, yg, opg, w.in_per_group, static_cast<int>(patches));
                } else {
                    detail::im2col(xg, w.in_per_group, x.h, x.w, w.kh, w.kw, stride, pad, g.h_out, g.w_out,
                                   col.data());
                    detail::gemm_acc(wg, col.data(), yg, opg, static_cast<int>(krows),
                                     static_cast<int>(patches));
                }
            }
            if (!w.bias.empty()) {
                for (int o = 0; o < w.out_channels; ++o) {
                    S* yo = y.channel_ptr(in, o);
                    const S b = w.bias[static_cast<std::size_t>(o)];
                    for (std::size_t p = 0; p < patches; ++p) yo[p] += b;
                }
            }
        }
    });
    return y;
}

template <class S>
struct ConvGrads {
    TensorT<S> dx;
    ConvWeightsT<S> dw;  // same shape as the weights; bias grads in dw.bias when present
};

template <class S>
ConvGrads<S> conv2d_backward(const TensorT<S>& x, const ConvWeightsT<S>& w, int stride, int pad,
                             const TensorT<S>& dy) {
    const ConvGeometry g = conv_geometry(x, w, stride, pad);
    if (dy.n != x.n || dy.c != w.out_channels || dy.h != g.h_out || dy.w != g.w_out) {
        throw std::invalid_argument("conv2d_backward: upstream shape " + dy.shape_str() + " does not match (" +
                                    std::to_string(x.n) + "," + std::to_string(w.out_channels) + "," +
                                    std::to_string(g.h_out) + "," + std::to_string(g.w_out) + ")");
    }
    ConvGrads<S> out;
    out.dx = TensorT<S>(x.n, x.c, x.h, x.w);
    out.dw = w.zeros_like();

    const int opg = w.out_per_group();
    const std::size_t patches = static_cast<std::size_t>(g.h_out) * g.w_out;
    const std::size_t krows = w.kernel_size();
    const bool pointwise = (w.kh == 1 && w.kw == 1 && stride == 1 && pad == 0);

    const int chunks = chunk_count(0, x.n);
    std::vector<std::vector<S>> dw_partial(static_cast<std::size_t>(chunks),
                                           std::vector<S>(w.data.size(), S(0)));
    std::vector<std::vector<S>> db_partial(static_cast<std::size_t>(chunks),
                                           std::vector<S>(w.bias.size(), S(0)));

    parallel_chunks(0, x.n, [&](int chunk, int lo, int hi) {
        std::vector<S> col, dcol;
        if (!pointwise) {
            col.assign(krows * patches, S(0));
            dcol.assign(krows * patches, S(0));
        }
        auto& dwp = dw_partial[static_cast<std::size_t>(chunk)];
        auto& dbp = db_partial[static_cast<std::size_t>(chunk)];
        for (int in = lo; in < hi; ++in) {
            for (int gidx = 0; gidx < w.groups; ++gidx) {
                const S* xg = x.channel_ptr(in, gidx * w.in_per_group);
                const S* dyg = dy.channel_ptr(in, gidx * opg);
                const S* wg = w.filter_ptr(gidx * opg);
                S* dwg = dwp.data() + static_cast<std::size_t>(gidx) * opg * krows;
                S* dxg = out.dx.channel_ptr(in, gidx * w.in_per_group);
                if (pointwise) {
                    detail::gemm_bt_acc(dyg, xg, dwg, opg, static_cast<int>(krows), static_cast<int>(patches));
                    detail::gemm_at_acc(wg, dyg, dxg, opg, static_cast<int>(krows), static_cast<int>(patches));
                } else {
                    detail::im2col(xg, w.in_per_group, x.h, x.w, w.kh, w.kw, stride, pad, g.h_out, g.w_out,
                                   col.data());
                    detail::gemm_bt_acc(dyg, col.data(), dwg, opg, static_cast<int>(krows),
                                        static_cast<int>(patches));
                    std::fill(dcol.begin(), dcol.end(), S(0));
                    detail::gemm_at_acc(wg, dyg, dcol.data(), opg, static_cast<int>(krows),
                                        static_cast<int>(patches));
                    detail::col2im_acc(dcol.data(), w.in_per_group, x.h, x.w, w.kh, w.kw, stride, pad, g.h_out,
                                       g.w_out, dxg);
                }
            }
            if (!w.bias.empty()) {
                for (int o = 0; o < w.out_channels; ++o) {
                    const S* dyo = dy.channel_ptr(in, o);
                    S acc = S(0);
                    for (std::size_t p = 0; p < patches; ++p) acc += dyo[p];
                    dbp[static_cast<std::size_t>(o)] += acc;
                }
            }
        }
    });

    for (int chunk = 0; chunk < chunks; ++chunk) {
        const auto& dwp = dw_partial[static_cast<std::size_t>(chunk)];
        for (std::size_t i = 0; i < dwp.size(); ++i) out.dw.data[i] += dwp[i];
        const auto& dbp = db_partial[static_cast<std::size_t>(chunk)];
        for (std::size_t i = 0; i < dbp.size(); ++i) out.dw.bias[i] += dbp[i];
    }
    return out;
}

template <class S>
void check_depthwise(const TensorT<S>& x, const ConvWeightsT<S>& w) {
    if (w.groups != x.c) {
        throw std::invalid_argument("depthwise_conv3x3: groups (" + std::to_string(w.groups) +
                                    ") must equal input channels (" + std::to_string(x.c) + ")");
    }
    if (w.in_per_group != 1) {
        throw std::invalid_argument("depthwise_conv3x3: in_channels_per_group must be 1, got " +
                                    std::to_string(w.in_per_group));
    }
    if (w.kh != 3 || w.kw != 3) {
        throw std::invalid_argument("depthwise_conv3x3: kernel must be 3x3, got " + std::to_string(w.kh) +
                                    "x" + std::to_string(w.kw));
    }
    if (w.out_channels != x.c) {
        throw std::invalid_argument("depthwise_conv3x3: out_channels (" + std::to_string(w.out_channels) +
                                    ") must equal input channels (" + std::to_string(x.c) + ")");
    }
}

template <class S>
TensorT<S> depthwise_conv3x3(const TensorT<S>& x, const ConvWeightsT<S>& w, int stride, int pad) {
    check_depthwise(x, w);
    const ConvGeometry g = conv_geometry(x, w, stride, pad);
    TensorT<S> y(x.n, x.c, g.h_out, g.w_out);
    parallel_chunks(0, x.n, [&](int, int lo, int hi) {
        for (int in = lo; in < hi; ++in) {
            for (int ci = 0; ci < x.c; ++ci) {
                const S* xc = x.channel_ptr(in, ci);
                const S* k = w.filter_ptr(ci);
                S* yc = y.channel_ptr(in, ci);
                const S b = w.bias.empty() ? S(0) : w.bias[static_cast<std::size_t>(ci)];
                for (int oy = 0; oy < g.h_out; ++oy) {
                    for (int ox = 0; ox < g.w_out; ++ox) {
                        S acc = b;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= x.w) continue;
                                acc += xc[static_cast<std::size_t>(iy) * x.w + ix] * k[ky * 3 + kx];
                            }
                        }
                        yc[static_cast<std::size_t>(oy) * g.w_out + ox] = acc;
                    }
                }
            }
        }
    });
    return y;
}

template <class S>
ConvGrads<S> depthwise_conv3x3_backward(const TensorT<S>& x, const ConvWeightsT<S>& w, int stride, int pad,
                                        const TensorT<S>& dy) {
    check_depthwise(x, w);
    const ConvGeometry g = conv_geometry(x, w, stride, pad);
    if (dy.n != x.n || dy.c != x.c || dy.h != g.h_out || dy.w != g.w_out) {
        throw std::invalid_argument("depthwise_conv3x3_backward: upstream shape " + dy.shape_str() +
                                    " mismatch");
    }
    ConvGrads<S> out;
    out.dx = TensorT<S>(x.n, x.c, x.h, x.w);
    out.dw = w.zeros_like();

    const int chunks = chunk_count(0, x.n);
    std::vector<std::vector<S>> dw_partial(static_cast<std::size_t>(chunks),
                                           std::vector<S>(w.data.size(), S(0)));
    parallel_chunks(0, x.n, [&](int chunk, int lo, int hi) {
        auto& dwp = dw_partial[static_cast<std::size_t>(chunk)];
        for (int in = lo; in < hi; ++in) {
            for (int ci = 0; ci < x.c; ++ci) {
                const S* xc = x.channel_ptr(in, ci);
                const S* k = w.filter_ptr(ci);
                const S* dyc = dy.channel_ptr(in, ci);
                S* dxc = out.dx.channel_ptr(in, ci);
                S* dk = dwp.data() + static_cast<std::size_t>(ci) * 9;
                for (int oy = 0; oy < g.h_out; ++oy) {
                    for (int ox = 0; ox < g.w_out; ++ox) {
                        const S go = dyc[static_cast<std::size_t>(oy) * g.w_out + ox];
                        if (go == S(0)) continue;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= x.w) continue;
                                const std::size_t xi = static_cast<std::size_t>(iy) * x.w + ix;
                                dxc[xi] += k[ky * 3 + kx] * go;
                                dk[ky * 3 + kx] += xc[xi] * go;
                            }
                        }
                    }
                }
            }
        }
    });
    for (int chunk = 0; chunk < chunks; ++chunk) {
        const auto& dwp = dw_partial[static_cast<std::size_t>(chunk)];
        for (std::size_t i = 0; i < dwp.size(); ++i) out.dw.data[i] += dwp[i];
    }
    return out;
}

}  // namespace hgcnet
