#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgcnet/tensor.hpp"

namespace hgcnet {

enum class Mode { Train, Eval };

// ---- channel shuffle -------------------------------------------------------

// Output channel k reads input channel sigma(k) = (k % G) * (c/G) + k / G,
// the reshape(G, c/G) -> transpose permutation.
inline int shuffle_source_channel(int k, int c, int groups) {
    const int per = c / groups;
    return (k % groups) * per + k / groups;
}

template <class S>
TensorT<S> channel_shuffle(const TensorT<S>& x, int groups) {
    if (groups < 1) throw std::invalid_argument("channel_shuffle: groups must be >= 1");
    if (x.c % groups != 0) {
        throw std::invalid_argument("channel_shuffle: channels (" + std::to_string(x.c) +
                                    ") not divisible by groups (" + std::to_string(groups) + ")");
    }
    if (groups == 1) return x;
    TensorT<S> y(x.n, x.c, x.h, x.w);
    const std::size_t plane = x.plane();
    for (int in = 0; in < x.n; ++in) {
        for (int k = 0; k < x.c; ++k) {
            const int src = shuffle_source_channel(k, x.c, groups);
            std::memcpy(y.channel_ptr(in, k), x.channel_ptr(in, src), plane * sizeof(S));
        }
    }
    return y;
}

// The permutation is its own inverse under G -> c/G.
template <class S>
TensorT<S> channel_shuffle_backward(const TensorT<S>& dy, int groups) {
    if (dy.c % groups != 0) {
        throw std::invalid_argument("channel_shuffle_backward: channels not divisible by groups");
    }
    return channel_shuffle(dy, dy.c / groups);
}

// ---- concat / split --------------------------------------------------------

template <class S>
TensorT<S> concat_channels(const std::vector<const TensorT<S>*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no parts");
    const TensorT<S>& first = *parts.front();
    int total_c = 0;
    for (const auto* p : parts) {
        if (p->n != first.n || p->h != first.h || p->w != first.w) {
            throw std::invalid_argument("concat_channels: part shape " + p->shape_str() +
                                        " does not match batch/rows/cols of " + first.shape_str());
        }
        total_c += p->c;
    }
    TensorT<S> y(first.n, total_c, first.h, first.w);
    const std::size_t plane = first.plane();
    for (int in = 0; in < first.n; ++in) {
        S* dst = y.sample_ptr(in);
        for (const auto* p : parts) {
            std::memcpy(dst, p->sample_ptr(in), static_cast<std::size_t>(p->c) * plane * sizeof(S));
            dst += static_cast<std::size_t>(p->c) * plane;
        }
    }
    return y;
}

template <class S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& parts) {
    std::vector<const TensorT<S>*> ptrs;
    ptrs.reserve(parts.size());
    for (const auto& p : parts) ptrs.push_back(&p);
    return concat_channels(ptrs);
}

template <class S>
std::vector<TensorT<S>> split_channels(const TensorT<S>& x, const std::vector<int>& sizes) {
    int total = 0;
    for (int s : sizes) {
        if (s < 1) throw std::invalid_argument("split_channels: sizes must be >= 1");
        total += s;
    }
    if (total != x.c) {
        throw std::invalid_argument("split_channels: sizes sum to " + std::to_string(total) +
                                    " but input has " + std::to_string(x.c) + " channels");
    }
    std::vector<TensorT<S>> parts;
    parts.reserve(sizes.size());
    const std::size_t plane = x.plane();
    int c0 = 0;
    for (int s : sizes) {
        TensorT<S> part(x.n, s, x.h, x.w);
        for (int in = 0; in < x.n; ++in) {
            std::memcpy(part.sample_ptr(in), x.channel_ptr(in, c0),
                        static_cast<std::size_t>(s) * plane * sizeof(S));
        }
        parts.push_back(std::move(part));
        c0 += s;
    }
    return parts;
}

// Copies `src` into channels [c0, c0+src.c) of `dst`, accumulating.
template <class S>
void add_into_channel_slice(TensorT<S>& dst, const TensorT<S>& src, int c0) {
    if (src.n != dst.n || src.h != dst.h || src.w != dst.w || c0 + src.c > dst.c) {
        throw std::invalid_argument("add_into_channel_slice: slice out of range");
    }
    const std::size_t plane = dst.plane();
    for (int in = 0; in < dst.n; ++in) {
        S* d = dst.channel_ptr(in, c0);
        const S* s = src.sample_ptr(in);
        for (std::size_t i = 0; i < static_cast<std::size_t>(src.c) * plane; ++i) d[i] += s[i];
    }
}

template <class S>
TensorT<S> slice_channels(const TensorT<S>& x, int c0, int count) {
    if (c0 < 0 || count < 1 || c0 + count > x.c) {
        throw std::invalid_argument("slice_channels: range [" + std::to_string(c0) + "," +
                                    std::to_string(c0 + count) + ") out of " + std::to_string(x.c));
    }
    TensorT<S> y(x.n, count, x.h, x.w);
    const std::size_t plane = x.plane();
    for (int in = 0; in < x.n; ++in) {
        std::memcpy(y.sample_ptr(in), x.channel_ptr(in, c0),
                    static_cast<std::size_t>(count) * plane * sizeof(S));
    }
    return y;
}

// ---- batch normalization ---------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Per-channel affine parameters plus running statistics. Running stats are the
// only mutable state a forward op touches (train mode, single writer).
template <class S>
struct BatchNormParamsT {
    std::vector<S> gamma, beta;
    std::vector<S> running_mean, running_var;

    explicit BatchNormParamsT(int channels = 0)
        : gamma(static_cast<std::size_t>(channels), S(1)),
          beta(static_cast<std::size_t>(channels), S(0)),
          running_mean(static_cast<std::size_t>(channels), S(0)),
          running_var(static_cast<std::size_t>(channels), S(1)) {}

    int channels() const { return static_cast<int>(gamma.size()); }
};

template <class S>
struct BnCache {
    TensorT<S> xhat;
    std::vector<S> invstd;
    bool train = true;
};

template <class S>
TensorT<S> batchnorm(const TensorT<S>& x, BatchNormParamsT<S>& p, Mode mode, BnCache<S>* cache = nullptr,
                     double momentum = kBatchNormMomentum, double eps = kBatchNormEps) {
    if (p.channels() != x.c) {
        throw std::invalid_argument("batchnorm: gamma/beta length (" + std::to_string(p.channels()) +
                                    ") != channels (" + std::to_string(x.c) + ")");
    }
    const std::size_t plane = x.plane();
    const double m = static_cast<double>(x.n) * plane;
    std::vector<double> mean(static_cast<std::size_t>(x.c), 0.0);
    std::vector<double> var(static_cast<std::size_t>(x.c), 0.0);

    if (mode == Mode::Train) {
        for (int in = 0; in < x.n; ++in) {
            for (int ci = 0; ci < x.c; ++ci) {
                const S* xc = x.channel_ptr(in, ci);
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(xc[i]);
                mean[static_cast<std::size_t>(ci)] += acc;
            }
        }
        for (auto& v : mean) v /= m;
        for (int in = 0; in < x.n; ++in) {
            for (int ci = 0; ci < x.c; ++ci) {
                const S* xc = x.channel_ptr(in, ci);
                const double mu = mean[static_cast<std::size_t>(ci)];
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = static_cast<double>(xc[i]) - mu;
                    acc += d * d;
                }
                var[static_cast<std::size_t>(ci)] += acc;
            }
        }
        for (auto& v : var) v /= m;
        for (int ci = 0; ci < x.c; ++ci) {
            const auto i = static_cast<std::size_t>(ci);
            p.running_mean[i] = static_cast<S>(momentum * p.running_mean[i] + (1.0 - momentum) * mean[i]);
            p.running_var[i] = static_cast<S>(momentum * p.running_var[i] + (1.0 - momentum) * var[i]);
        }
    } else {
        for (int ci = 0; ci < x.c; ++ci) {
            mean[static_cast<std::size_t>(ci)] = static_cast<double>(p.running_mean[static_cast<std::size_t>(ci)]);
            var[static_cast<std::size_t>(ci)] = static_cast<double>(p.running_var[static_cast<std::size_t>(ci)]);
        }
    }

    std::vector<S> invstd(static_cast<std::size_t>(x.c));
    for (int ci = 0; ci < x.c; ++ci) {
        invstd[static_cast<std::size_t>(ci)] =
            static_cast<S>(1.0 / std::sqrt(var[static_cast<std::size_t>(ci)] + eps));
    }

    TensorT<S> y(x.n, x.c, x.h, x.w);
    TensorT<S> xhat(x.n, x.c, x.h, x.w);
    for (int in = 0; in < x.n; ++in) {
        for (int ci = 0; ci < x.c; ++ci) {
            const auto i = static_cast<std::size_t>(ci);
            const S* xc = x.channel_ptr(in, ci);
            S* yc = y.channel_ptr(in, ci);
            S* hc = xhat.channel_ptr(in, ci);
            const S mu = static_cast<S>(mean[i]);
            const S is = invstd[i];
            const S ga = p.gamma[i];
            const S be = p.beta[i];
            for (std::size_t k = 0; k < plane; ++k) {
                const S xn = (xc[k] - mu) * is;
                hc[k] = xn;
                yc[k] = xn * ga + be;
            }
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->invstd = std::move(invstd);
        cache->train = (mode == Mode::Train);
    }
    return y;
}

template <class S>
struct BnGrads {
    TensorT<S> dx;
    std::vector<S> dgamma, dbeta;
};

template <class S>
BnGrads<S> batchnorm_backward(const BnCache<S>& cache, const std::vector<S>& gamma, const TensorT<S>& dy) {
    const TensorT<S>& xhat = cache.xhat;
    if (!dy.same_shape(xhat)) {
        throw std::invalid_argument("batchnorm_backward: upstream shape " + dy.shape_str() +
                                    " != cached " + xhat.shape_str());
    }
    const std::size_t plane = dy.plane();
    const double m = static_cast<double>(dy.n) * plane;
    BnGrads<S> out;
    out.dx = TensorT<S>(dy.n, dy.c, dy.h, dy.w);
    out.dgamma.assign(static_cast<std::size_t>(dy.c), S(0));
    out.dbeta.assign(static_cast<std::size_t>(dy.c), S(0));

    std::vector<double> sum_dy(static_cast<std::size_t>(dy.c), 0.0);
    std::vector<double> sum_dy_xhat(static_cast<std::size_t>(dy.c), 0.0);
    for (int in = 0; in < dy.n; ++in) {
        for (int ci = 0; ci < dy.c; ++ci) {
            const S* gc = dy.channel_ptr(in, ci);
            const S* hc = xhat.channel_ptr(in, ci);
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t k = 0; k < plane; ++k) {
                s1 += static_cast<double>(gc[k]);
                s2 += static_cast<double>(gc[k]) * static_cast<double>(hc[k]);
            }
            sum_dy[static_cast<std::size_t>(ci)] += s1;
            sum_dy_xhat[static_cast<std::size_t>(ci)] += s2;
        }
    }
    for (int ci = 0; ci < dy.c; ++ci) {
        out.dbeta[static_cast<std::size_t>(ci)] = static_cast<S>(sum_dy[static_cast<std::size_t>(ci)]);
        out.dgamma[static_cast<std::size_t>(ci)] = static_cast<S>(sum_dy_xhat[static_cast<std::size_t>(ci)]);
    }

    for (int in = 0; in < dy.n; ++in) {
        for (int ci = 0; ci < dy.c; ++ci) {
            const auto i = static_cast<std::size_t>(ci);
            const S* gc = dy.channel_ptr(in, ci);
            const S* hc = xhat.channel_ptr(in, ci);
            S* dc = out.dx.channel_ptr(in, ci);
            const double coef = static_cast<double>(gamma[i]) * static_cast<double>(cache.invstd[i]);
            if (cache.train) {
                for (std::size_t k = 0; k < plane; ++k) {
                    const double dyv = static_cast<double>(gc[k]);
                    dc[k] = static_cast<S>(coef / m *
                                           (m * dyv - sum_dy[i] - static_cast<double>(hc[k]) * sum_dy_xhat[i]));
                }
            } else {
                for (std::size_t k = 0; k < plane; ++k) dc[k] = static_cast<S>(coef * static_cast<double>(gc[k]));
            }
        }
    }
    return out;
}

// ---- elementwise activations -----------------------------------------------

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
    TensorT<S> y(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > S(0) ? x.data[i] : S(0);
    return y;
}

template <class S>
TensorT<S> relu_backward(const TensorT<S>& x, const TensorT<S>& dy) {
    if (!x.same_shape(dy)) throw std::invalid_argument("relu_backward: shape mismatch");
    TensorT<S> dx(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.data.size(); ++i) dx.data[i] = x.data[i] > S(0) ? dy.data[i] : S(0);
    return dx;
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    TensorT<S> y(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        y.data[i] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(x.data[i]))));
    return y;
}

// Takes the forward output y, not the input.
template <class S>
TensorT<S> sigmoid_backward(const TensorT<S>& y, const TensorT<S>& dy) {
    if (!y.same_shape(dy)) throw std::invalid_argument("sigmoid_backward: shape mismatch");
    TensorT<S> dx(y.n, y.c, y.h, y.w);
    for (std::size_t i = 0; i < y.data.size(); ++i) dx.data[i] = dy.data[i] * y.data[i] * (S(1) - y.data[i]);
    return dx;
}

// ---- pooling ---------------------------------------------------------------

template <class S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
    TensorT<S> y(x.n, x.c, 1, 1);
    const std::size_t plane = x.plane();
    const double inv = 1.0 / static_cast<double>(plane);
    for (int in = 0; in < x.n; ++in) {
        for (int ci = 0; ci < x.c; ++ci) {
            const S* xc = x.channel_ptr(in, ci);
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(xc[i]);
            y.at(in, ci, 0, 0) = static_cast<S>(acc * inv);
        }
    }
    return y;
}

template <class S>
TensorT<S> global_avg_pool_backward(const TensorT<S>& dy, int h, int w) {
    if (dy.h != 1 || dy.w != 1) throw std::invalid_argument("global_avg_pool_backward: upstream must be (n,c,1,1)");
    TensorT<S> dx(dy.n, dy.c, h, w);
    const S inv = static_cast<S>(1.0 / (static_cast<double>(h) * w));
    for (int in = 0; in < dy.n; ++in) {
        for (int ci = 0; ci < dy.c; ++ci) {
            const S g = dy.at(in, ci, 0, 0) * inv;
            S* dc = dx.channel_ptr(in, ci);
            for (std::size_t i = 0; i < dx.plane(); ++i) dc[i] = g;
        }
    }
    return dx;
}

// 2x2 window, stride 2; trailing odd row/col is dropped.
template <class S>
TensorT<S> avg_pool2x2(const TensorT<S>& x) {
    const int ho = x.h / 2, wo = x.w / 2;
    if (ho < 1 || wo < 1) throw std::invalid_argument("avg_pool2x2: input " + x.shape_str() + " too small");
    TensorT<S> y(x.n, x.c, ho, wo);
    for (int in = 0; in < x.n; ++in) {
        for (int ci = 0; ci < x.c; ++ci) {
            const S* xc = x.channel_ptr(in, ci);
            S* yc = y.channel_ptr(in, ci);
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const std::size_t base = static_cast<std::size_t>(2 * oy) * x.w + 2 * ox;
                    yc[static_cast<std::size_t>(oy) * wo + ox] =
                        (xc[base] + xc[base + 1] + xc[base + x.w] + xc[base + x.w + 1]) * S(0.25);
                }
            }
        }
    }
    return y;
}

template <class S>
TensorT<S> avg_pool2x2_backward(const TensorT<S>& dy, int h, int w) {
    TensorT<S> dx(dy.n, dy.c, h, w);
    for (int in = 0; in < dy.n; ++in) {
        for (int ci = 0; ci < dy.c; ++ci) {
            const S* gc = dy.channel_ptr(in, ci);
            S* dc = dx.channel_ptr(in, ci);
            for (int oy = 0; oy < dy.h; ++oy) {
                for (int ox = 0; ox < dy.w; ++ox) {
                    const S g = gc[static_cast<std::size_t>(oy) * dy.w + ox] * S(0.25);
                    const std::size_t base = static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                    dc[base] += g;
                    dc[base + 1] += g;
                    dc[base + w] += g;
                    dc[base + w + 1] += g;
                }
            }
        }
    }
    return dx;
}

// ---- linear head -----------------------------------------------------------

template <class S>
struct LinearWeightsT {
    int in = 0, out = 0;
    std::vector<S> w;  // row-major (out, in)
    std::vector<S> b;  // length out

    LinearWeightsT() = default;
    LinearWeightsT(int in_, int out_) : in(in_), out(out_) {
        if (in_ < 1 || out_ < 1) throw std::invalid_argument("linear: dimensions must be >= 1");
        w.assign(static_cast<std::size_t>(in_) * out_, S(0));
        b.assign(static_cast<std::size_t>(out_), S(0));
    }
};

template <class S>
void init_linear_weights(LinearWeightsT<S>& lw, std::mt19937& rng) {
    fill_gaussian(lw.w, rng, std::sqrt(2.0 / lw.in));
    for (auto& v : lw.b) v = S(0);
}

// x is (n, f, 1, 1); returns (n, k, 1, 1).
template <class S>
TensorT<S> linear(const TensorT<S>& x, const LinearWeightsT<S>& lw) {
    if (x.h != 1 || x.w != 1) throw std::invalid_argument("linear: input must be (n,f,1,1), got " + x.shape_str());
    if (x.c != lw.in) {
        throw std::invalid_argument("linear: input features (" + std::to_string(x.c) + ") != weight in (" +
                                    std::to_string(lw.in) + ")");
    }
    TensorT<S> y(x.n, lw.out, 1, 1);
    for (int in = 0; in < x.n; ++in) {
        const S* xr = x.sample_ptr(in);
        S* yr = y.sample_ptr(in);
        for (int o = 0; o < lw.out; ++o) {
            const S* wr = lw.w.data() + static_cast<std::size_t>(o) * lw.in;
            S acc = lw.b[static_cast<std::size_t>(o)];
            for (int i = 0; i < lw.in; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
    return y;
}

template <class S>
struct LinearGrads {
    TensorT<S> dx;
    LinearWeightsT<S> dw;
};

template <class S>
LinearGrads<S> linear_backward(const TensorT<S>& x, const LinearWeightsT<S>& lw, const TensorT<S>& dy) {
    if (dy.n != x.n || dy.c != lw.out || dy.h != 1 || dy.w != 1) {
        throw std::invalid_argument("linear_backward: upstream shape " + dy.shape_str() + " mismatch");
    }
    LinearGrads<S> out;
    out.dx = TensorT<S>(x.n, x.c, 1, 1);
    out.dw = LinearWeightsT<S>(lw.in, lw.out);
    for (int in = 0; in < x.n; ++in) {
        const S* xr = x.sample_ptr(in);
        const S* gr = dy.sample_ptr(in);
        S* dxr = out.dx.sample_ptr(in);
        for (int o = 0; o < lw.out; ++o) {
            const S g = gr[o];
            const S* wr = lw.w.data() + static_cast<std::size_t>(o) * lw.in;
            S* dwr = out.dw.w.data() + static_cast<std::size_t>(o) * lw.in;
            out.dw.b[static_cast<std::size_t>(o)] += g;
            for (int i = 0; i < lw.in; ++i) {
                dxr[i] += wr[i] * g;
                dwr[i] += xr[i] * g;
            }
        }
    }
    return out;
}

// ---- softmax cross entropy ---------------------------------------------------

template <class S>
struct SoftmaxCeResult {
    double loss = 0.0;      // mean over the batch of -log softmax(label)
    TensorT<S> dlogits;     // gradient of that mean w.r.t. the logits
};

template <class S>
SoftmaxCeResult<S> softmax_cross_entropy(const TensorT<S>& logits, const std::vector<int>& labels) {
    if (logits.h != 1 || logits.w != 1) {
        throw std::invalid_argument("softmax_cross_entropy: logits must be (n,k,1,1), got " + logits.shape_str());
    }
    if (static_cast<int>(labels.size()) != logits.n) {
        throw std::invalid_argument("softmax_cross_entropy: labels length (" + std::to_string(labels.size()) +
                                    ") != batch (" + std::to_string(logits.n) + ")");
    }
    SoftmaxCeResult<S> out;
    out.dlogits = TensorT<S>(logits.n, logits.c, 1, 1);
    const double invn = 1.0 / static_cast<double>(logits.n);
    double loss = 0.0;
    for (int in = 0; in < logits.n; ++in) {
        const int label = labels[static_cast<std::size_t>(in)];
        if (label < 0 || label >= logits.c) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                        " out of range [0," + std::to_string(logits.c) + ")");
        }
        const S* z = logits.sample_ptr(in);
        double zmax = static_cast<double>(z[0]);
        for (int k = 1; k < logits.c; ++k) zmax = std::max(zmax, static_cast<double>(z[k]));
        double sum = 0.0;
        for (int k = 0; k < logits.c; ++k) sum += std::exp(static_cast<double>(z[k]) - zmax);
        const double logsum = zmax + std::log(sum);
        loss += logsum - static_cast<double>(z[label]);
        S* d = out.dlogits.sample_ptr(in);
        for (int k = 0; k < logits.c; ++k) {
            const double p = std::exp(static_cast<double>(z[k]) - logsum);
            d[k] = static_cast<S>((p - (k == label ? 1.0 : 0.0)) * invn);
        }
    }
    out.loss = loss * invn;
    return out;
}

}  // namespace hgcnet
