#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgcnet {

// Dense rank-4 tensor, (batch, channel, row, col), contiguous channel-major.
template <class S>
struct TensorT {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<S> data;

    TensorT() = default;

    TensorT(int n_, int c_, int h_, int w_, S init = S(0)) : n(n_), c(c_), h(h_), w(w_) {
        if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1) {
            throw std::invalid_argument("tensor: all dimensions must be >= 1, got (" + std::to_string(n_) +
                                        "," + std::to_string(c_) + "," + std::to_string(h_) + "," +
                                        std::to_string(w_) + ")");
        }
        data.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, init);
    }

    std::size_t size() const { return data.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
    }

    S& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
    const S& at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

    S* sample_ptr(int in) { return data.data() + static_cast<std::size_t>(in) * sample_size(); }
    const S* sample_ptr(int in) const { return data.data() + static_cast<std::size_t>(in) * sample_size(); }

    S* channel_ptr(int in, int ic) { return data.data() + index(in, ic, 0, 0); }
    const S* channel_ptr(int in, int ic) const { return data.data() + index(in, ic, 0, 0); }

    bool same_shape(const TensorT& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

using Tensor = TensorT<float>;

// Grouped convolution filter bank, (out_channels, in_channels_per_group, kh, kw)
// contiguous, with an optional per-output-channel bias.
template <class S>
struct ConvWeightsT {
    int out_channels = 0;
    int in_per_group = 0;
    int kh = 0, kw = 0;
    int groups = 1;
    std::vector<S> data;
    std::vector<S> bias;  // empty = no bias

    ConvWeightsT() = default;

    ConvWeightsT(int out, int in_per_group_, int kh_, int kw_, int groups_, bool with_bias = false)
        : out_channels(out), in_per_group(in_per_group_), kh(kh_), kw(kw_), groups(groups_) {
        if (out < 1 || in_per_group_ < 1 || kh_ < 1 || kw_ < 1 || groups_ < 1) {
            throw std::invalid_argument("conv weights: all dimensions must be >= 1");
        }
        if (out % groups_ != 0) {
            throw std::invalid_argument("conv weights: out_channels (" + std::to_string(out) +
                                        ") not divisible by groups (" + std::to_string(groups_) + ")");
        }
        data.assign(static_cast<std::size_t>(out) * in_per_group_ * kh_ * kw_, S(0));
        if (with_bias) bias.assign(static_cast<std::size_t>(out), S(0));
    }

    std::size_t index(int o, int i, int y, int x) const {
        return ((static_cast<std::size_t>(o) * in_per_group + i) * kh + y) * kw + x;
    }

    S& at(int o, int i, int y, int x) { return data[index(o, i, y, x)]; }
    const S& at(int o, int i, int y, int x) const { return data[index(o, i, y, x)]; }

    int in_channels() const { return in_per_group * groups; }
    int out_per_group() const { return out_channels / groups; }
    std::size_t kernel_size() const { return static_cast<std::size_t>(in_per_group) * kh * kw; }
    std::size_t scalar_count() const { return data.size() + bias.size(); }

    const S* filter_ptr(int o) const { return data.data() + static_cast<std::size_t>(o) * kernel_size(); }
    S* filter_ptr(int o) { return data.data() + static_cast<std::size_t>(o) * kernel_size(); }

    ConvWeightsT zeros_like() const {
        ConvWeightsT g(out_channels, in_per_group, kh, kw, groups, !bias.empty());
        return g;
    }
};

using ConvWeights = ConvWeightsT<float>;

template <class S>
void fill_gaussian(std::vector<S>& v, std::mt19937& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& x : v) x = static_cast<S>(dist(rng));
}

template <class S>
void fill_gaussian(TensorT<S>& t, std::mt19937& rng, double stddev) {
    fill_gaussian(t.data, rng, stddev);
}

// He initialization, std = sqrt(2 / fan_in).
template <class S>
void init_conv_weights(ConvWeightsT<S>& w, std::mt19937& rng) {
    const double fan_in = static_cast<double>(w.in_per_group) * w.kh * w.kw;
    fill_gaussian(w.data, rng, std::sqrt(2.0 / fan_in));
    for (auto& b : w.bias) b = S(0);
}

template <class S>
double max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    }
    return m;
}

template <class S>
bool all_finite(const TensorT<S>& t) {
    for (const auto& v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

template <class To, class From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
    TensorT<To> out(t.n, t.c, t.h, t.w);
    for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
    return out;
}

template <class To, class From>
ConvWeightsT<To> weights_cast(const ConvWeightsT<From>& w) {
    ConvWeightsT<To> out(w.out_channels, w.in_per_group, w.kh, w.kw, w.groups, !w.bias.empty());
    for (std::size_t i = 0; i < w.data.size(); ++i) out.data[i] = static_cast<To>(w.data[i]);
    for (std::size_t i = 0; i < w.bias.size(); ++i) out.bias[i] = static_cast<To>(w.bias[i]);
    return out;
}

}  // namespace hgcnet
